#include "wav2vid/pose_gate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "wav2vid/errors.hpp"

namespace w2v::pose {

namespace {
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }
} // namespace

Pose estimate_pose(std::span<const media::Point2> landmarks_2d, std::span<const media::Point3> model)
{
    const std::size_t n = landmarks_2d.size();
    if (n < 4 || model.size() != n) {
        throw InvalidArgument("estimate_pose needs >= 4 landmarks matching the model");
    }
    Eigen::Matrix3Xd P(3, n);
    Eigen::Matrix2Xd Q(2, n);
    for (std::size_t i = 0; i < n; ++i) {
        P.col(static_cast<Eigen::Index>(i)) << model[i].x, model[i].y, model[i].z;
        // Flip image rows so both frames are right-handed with y up.
        Q.col(static_cast<Eigen::Index>(i)) << landmarks_2d[i].x, -landmarks_2d[i].y;
    }
    P.colwise() -= P.rowwise().mean();
    Q.colwise() -= Q.rowwise().mean();

    const Eigen::Matrix3d PPt = P * P.transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> model_eig(PPt, Eigen::EigenvaluesOnly);
    if (model_eig.eigenvalues()(0) < 1e-9 * model_eig.eigenvalues()(2)) {
        throw EstimationFailure("landmark model is planar; rotation is not identifiable");
    }
    const Eigen::Matrix<double, 2, 3> M = Q * P.transpose() * PPt.inverse();

    Eigen::JacobiSVD<Eigen::Matrix<double, 2, 3>> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (!(sv(0) > 0.0) || sv(1) < 1e-6 * sv(0)) {
        throw EstimationFailure("degenerate (collinear) landmark configuration");
    }
    // Closest pair of orthonormal rows to M.
    const Eigen::Matrix<double, 2, 3> R2 = svd.matrixU() * Eigen::Matrix<double, 2, 3>::Identity() *
                                           svd.matrixV().transpose();
    Eigen::Matrix3d R;
    R.row(0) = R2.row(0);
    R.row(1) = R2.row(1);
    R.row(2) = R2.row(0).cross(R2.row(1));

    // R = Rz(roll) * Ry(yaw) * Rx(pitch)
    Pose p;
    p.yaw = rad2deg(std::asin(std::clamp(-R(2, 0), -1.0, 1.0)));
    p.pitch = rad2deg(std::atan2(R(2, 1), R(2, 2)));
    p.roll = rad2deg(std::atan2(R(1, 0), R(0, 0)));
    return p;
}

std::vector<Pose> estimate_poses(std::span<const media::Landmarks2d> frames, const media::LandmarkModel& model)
{
    if (frames.empty()) {
        throw InvalidArgument("estimate_poses needs at least one frame");
    }
    std::vector<Pose> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
        out.push_back(estimate_pose(f, model));
    }
    return out;
}

PoseDelta pose_delta(std::span<const Pose> angles)
{
    if (angles.empty()) {
        throw InvalidArgument("pose_delta needs at least one frame");
    }
    auto range = [&](auto get) {
        auto [lo, hi] = std::minmax_element(angles.begin(), angles.end(),
                                            [&](const Pose& a, const Pose& b) { return get(a) < get(b); });
        return get(*hi) - get(*lo);
    };
    return {range([](const Pose& p) { return p.yaw; }), range([](const Pose& p) { return p.pitch; }),
            range([](const Pose& p) { return p.roll; })};
}

double hd_pose_est(std::span<const Pose> angles)
{
    const auto d = pose_delta(angles);
    return std::abs(d.d_yaw) + std::abs(d.d_pitch) + std::abs(d.d_roll);
}

GateDecision gate(double score, double epsilon, bool is_first_clip)
{
    if (!(epsilon >= 0.0)) {
        throw InvalidArgument("gate threshold must be non-negative");
    }
    return {score >= epsilon || is_first_clip, score, epsilon};
}

} // namespace w2v::pose
