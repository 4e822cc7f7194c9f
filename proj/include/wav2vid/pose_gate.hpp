#pragma once

#include <span>
#include <vector>

#include "wav2vid/media.hpp"

namespace w2v::pose {

using media::Pose;

/// Per-angle change over a clip, taken as max - min of each track.
struct PoseDelta {
    double d_yaw = 0.0;
    double d_pitch = 0.0;
    double d_roll = 0.0;

    double sum() const noexcept { return d_yaw + d_pitch + d_roll; }
};

struct GateDecision {
    bool transmit_video = true;
    double score = 0.0;     // degrees
    double threshold = 0.0; // epsilon, degrees
};

inline constexpr double kDefaultEpsilon = 5.0;

/// Scaled-orthographic least-squares fit of a rotation to one frame of
/// projected landmarks (image coordinates, y down). Throws EstimationFailure
/// when the image points are (near) collinear.
Pose estimate_pose(std::span<const media::Point2> landmarks_2d, std::span<const media::Point3> model);

std::vector<Pose> estimate_poses(std::span<const media::Landmarks2d> frames, const media::LandmarkModel& model);

PoseDelta pose_delta(std::span<const Pose> angles);

/// |d_yaw| + |d_pitch| + |d_roll| with each delta = max - min over the clip.
double hd_pose_est(std::span<const Pose> angles);

/// transmit_video = score >= epsilon, or the clip is the first one.
GateDecision gate(double score, double epsilon, bool is_first_clip);

} // namespace w2v::pose
