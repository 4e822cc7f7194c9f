#include "wav2vid/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "wav2vid/errors.hpp"

namespace w2v::metrics {

namespace {

void require_same_shape(const media::VideoClip& a, const media::VideoClip& b, const char* what)
{
    if (a.length() != b.length() || a.width != b.width || a.height != b.height) {
        throw InvalidArgument(std::string(what) + ": clip shapes differ");
    }
    for (std::size_t t = 0; t < a.length(); ++t) {
        if (a.frames[t].pixels.size() != b.frames[t].pixels.size()) {
            throw InvalidArgument(std::string(what) + ": frame " + std::to_string(t) + " sizes differ");
        }
    }
}

} // namespace

double psnr(std::span<const double> reference, std::span<const double> estimate, double peak)
{
    if (reference.size() != estimate.size() || reference.empty()) {
        throw InvalidArgument("psnr: inputs must be non-empty and equally sized");
    }
    if (!(peak > 0.0)) {
        throw InvalidArgument("psnr: peak must be positive");
    }
    double se = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double d = reference[i] - estimate[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(reference.size());
    if (mse == 0.0) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double psnr(const media::VideoClip& reference, const media::VideoClip& estimate)
{
    require_same_shape(reference, estimate, "psnr");
    if (reference.length() == 0) {
        throw InvalidArgument("psnr: empty clip");
    }
    std::vector<double> a, b;
    a.reserve(reference.length() * reference.width * reference.height);
    b.reserve(a.capacity());
    for (std::size_t t = 0; t < reference.length(); ++t) {
        a.insert(a.end(), reference.frames[t].pixels.begin(), reference.frames[t].pixels.end());
        b.insert(b.end(), estimate.frames[t].pixels.begin(), estimate.frames[t].pixels.end());
    }
    return psnr(a, b, reference.peak);
}

// MS-SSIM ------------------------------------------------------------------------

namespace {

struct Image {
    std::size_t h = 0, w = 0;
    std::vector<double> v;
    double at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
};

constexpr std::size_t kWin = 11;

std::array<double, kWin> gaussian_window()
{
    std::array<double, kWin> g{};
    double s = 0.0;
    for (std::size_t i = 0; i < kWin; ++i) {
        const double d = static_cast<double>(i) - 5.0;
        g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        s += g[i];
    }
    for (auto& x : g) {
        x /= s;
    }
    return g;
}

// Separable Gaussian filter, 'valid' region only.
Image filter(const Image& in)
{
    static const auto g = gaussian_window();
    Image tmp{in.h, in.w - kWin + 1, {}};
    tmp.v.assign(tmp.h * tmp.w, 0.0);
    for (std::size_t y = 0; y < in.h; ++y) {
        for (std::size_t x = 0; x < tmp.w; ++x) {
            double s = 0.0;
            for (std::size_t k = 0; k < kWin; ++k) {
                s += g[k] * in.at(y, x + k);
            }
            tmp.v[y * tmp.w + x] = s;
        }
    }
    Image out{in.h - kWin + 1, tmp.w, {}};
    out.v.assign(out.h * out.w, 0.0);
    for (std::size_t y = 0; y < out.h; ++y) {
        for (std::size_t x = 0; x < out.w; ++x) {
            double s = 0.0;
            for (std::size_t k = 0; k < kWin; ++k) {
                s += g[k] * tmp.at(y + k, x);
            }
            out.v[y * out.w + x] = s;
        }
    }
    return out;
}

Image product(const Image& a, const Image& b)
{
    Image p{a.h, a.w, a.v};
    for (std::size_t i = 0; i < p.v.size(); ++i) {
        p.v[i] *= b.v[i];
    }
    return p;
}

Image downsample(const Image& in)
{
    Image out{in.h / 2, in.w / 2, {}};
    out.v.resize(out.h * out.w);
    for (std::size_t y = 0; y < out.h; ++y) {
        for (std::size_t x = 0; x < out.w; ++x) {
            out.v[y * out.w + x] = 0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) + in.at(2 * y + 1, 2 * x) +
                                           in.at(2 * y + 1, 2 * x + 1));
        }
    }
    return out;
}

// Mean luminance and contrast-structure terms at one scale.
std::pair<double, double> ssim_terms(const Image& x, const Image& y, double c1, double c2)
{
    const Image mx = filter(x), my = filter(y);
    const Image sxx = filter(product(x, x)), syy = filter(product(y, y)), sxy = filter(product(x, y));
    double l_sum = 0.0, cs_sum = 0.0;
    for (std::size_t i = 0; i < mx.v.size(); ++i) {
        const double ux = mx.v[i], uy = my.v[i];
        const double vx = sxx.v[i] - ux * ux;
        const double vy = syy.v[i] - uy * uy;
        const double cxy = sxy.v[i] - ux * uy;
        l_sum += (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        cs_sum += (2.0 * cxy + c2) / (vx + vy + c2);
    }
    const double n = static_cast<double>(mx.v.size());
    return {l_sum / n, cs_sum / n};
}

std::vector<double> scale_weights(std::size_t scales)
{
    std::vector<double> w;
    if (scales == 3) {
        w = {0.2, 0.3, 0.5};
    } else {
        const double standard[] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
        w.assign(standard, standard + std::min<std::size_t>(scales, 5));
        w.resize(scales, standard[4]);
    }
    double s = 0.0;
    for (double x : w) {
        s += x;
    }
    for (auto& x : w) {
        x /= s;
    }
    return w;
}

} // namespace

double ms_ssim(const media::Frame& reference, const media::Frame& estimate, double peak, std::size_t scales)
{
    if (scales < 1) {
        throw InvalidArgument("ms_ssim: at least one scale");
    }
    if (reference.height != estimate.height || reference.width != estimate.width) {
        throw InvalidArgument("ms_ssim: frame shapes differ");
    }
    const std::size_t coarse = std::min(reference.width, reference.height) >> (scales - 1);
    if (coarse < kWin) {
        throw InvalidArgument("ms_ssim: frames too small for " + std::to_string(scales) + " scales");
    }
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const auto w = scale_weights(scales);

    Image x{reference.height, reference.width, reference.pixels};
    Image y{estimate.height, estimate.width, estimate.pixels};
    double result = 1.0;
    for (std::size_t j = 0; j < scales; ++j) {
        const auto [l, cs] = ssim_terms(x, y, c1, c2);
        const double term = j + 1 == scales ? l * cs : cs;
        result *= std::pow(std::max(term, 0.0), w[j]);
        if (j + 1 < scales) {
            x = downsample(x);
            y = downsample(y);
        }
    }
    return std::clamp(result, 0.0, 1.0);
}

double ms_ssim(const media::VideoClip& reference, const media::VideoClip& estimate, std::size_t scales)
{
    require_same_shape(reference, estimate, "ms_ssim");
    if (reference.length() == 0) {
        throw InvalidArgument("ms_ssim: empty clip");
    }
    double s = 0.0;
    for (std::size_t t = 0; t < reference.length(); ++t) {
        s += ms_ssim(reference.frames[t], estimate.frames[t], reference.peak, scales);
    }
    return s / static_cast<double>(reference.length());
}

// FID ------------------------------------------------------------------------------

ProxyFeatureNet::ProxyFeatureNet(std::size_t width, std::size_t height) : width_(width), height_(height)
{
    namespace L = nn::layers;
    net_.add(L::conv2d(1, 4, 5, 4, 2)).add(L::relu()).add(L::conv2d(4, 4, 3, 2, 1)).add(L::relu());
    const auto shape = net_.output_shape({1, height, width});
    const std::size_t flat = shape[0] * shape[1] * shape[2];
    Rng rng(kSeed);
    net_.initialize(rng);
    nn::Layer head = L::dense(flat, kDim);
    nn::init_glorot(head, rng);
    conv_out_ = flat;
    head_ = std::move(head);
}

std::vector<double> ProxyFeatureNet::features(const media::Frame& frame) const
{
    if (frame.width != width_ || frame.height != height_) {
        throw InvalidArgument("ProxyFeatureNet: frame is " + std::to_string(frame.width) + "x" +
                              std::to_string(frame.height) + ", expected " + std::to_string(width_) + "x" +
                              std::to_string(height_));
    }
    const nn::Tensor h = net_.forward(nn::Tensor({1, height_, width_}, frame.pixels));
    std::vector<double> f(kDim);
    for (std::size_t o = 0; o < kDim; ++o) {
        double s = head_.bias[o];
        for (std::size_t i = 0; i < conv_out_; ++i) {
            s += head_.weight[o * conv_out_ + i] * h[i];
        }
        f[o] = s;
    }
    return f;
}

FeatureStats stats_from_samples(const std::vector<std::vector<double>>& samples)
{
    if (samples.size() < 2) {
        throw InvalidArgument("feature statistics need at least two samples");
    }
    const std::size_t d = samples.front().size();
    if (d == 0) {
        throw InvalidArgument("feature statistics need non-empty vectors");
    }
    FeatureStats s;
    s.n = samples.size();
    // Shifted by the first sample so identical samples give exactly zero deviations.
    const auto& x0 = samples.front();
    std::vector<double> shift(d, 0.0);
    for (const auto& x : samples) {
        if (x.size() != d) {
            throw InvalidArgument("feature vectors differ in length");
        }
        for (std::size_t i = 0; i < d; ++i) {
            shift[i] += x[i] - x0[i];
        }
    }
    s.mean.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        s.mean[i] = x0[i] + shift[i] / static_cast<double>(s.n);
    }
    s.cov.assign(d * d, 0.0);
    for (const auto& x : samples) {
        for (std::size_t i = 0; i < d; ++i) {
            const double di = x[i] - s.mean[i];
            for (std::size_t j = 0; j < d; ++j) {
                s.cov[i * d + j] += di * (x[j] - s.mean[j]);
            }
        }
    }
    for (auto& c : s.cov) {
        c /= static_cast<double>(s.n - 1);
    }
    for (std::size_t i = 0; i < d; ++i) {
        s.cov[i * d + i] += 1e-6;
    }
    return s;
}

FeatureStats feature_stats(const ProxyFeatureNet& net, const media::VideoClip& clip)
{
    if (clip.length() < 2) {
        throw InvalidArgument("feature_stats: clip needs at least two frames");
    }
    std::vector<std::vector<double>> f;
    f.reserve(clip.length());
    for (const auto& frame : clip.frames) {
        f.push_back(net.features(frame));
    }
    return stats_from_samples(f);
}

namespace {

Eigen::MatrixXd as_matrix(const FeatureStats& s)
{
    const auto d = static_cast<Eigen::Index>(s.dim());
    if (s.cov.size() != s.dim() * s.dim()) {
        throw InvalidArgument("fid: covariance size does not match the mean");
    }
    Eigen::MatrixXd m(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            m(i, j) = s.cov[static_cast<std::size_t>(i * d + j)];
        }
    }
    return 0.5 * (m + m.transpose());
}

} // namespace

double fid(const FeatureStats& r, const FeatureStats& g)
{
    if (r.dim() != g.dim() || r.dim() == 0) {
        throw InvalidArgument("fid: feature dimensions differ");
    }
    const Eigen::MatrixXd sr = as_matrix(r), sg = as_matrix(g);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> er(sr);
    if (er.info() != Eigen::Success || er.eigenvalues().minCoeff() <= 0.0) {
        throw NumericalFailure("fid: reference covariance is not positive definite");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eg(sg, Eigen::EigenvaluesOnly);
    if (eg.info() != Eigen::Success || eg.eigenvalues().minCoeff() <= 0.0) {
        throw NumericalFailure("fid: generated covariance is not positive definite");
    }
    const Eigen::MatrixXd root = er.eigenvectors() * er.eigenvalues().cwiseSqrt().asDiagonal() *
                                 er.eigenvectors().transpose();
    Eigen::MatrixXd s = root * sg * root;
    s = 0.5 * (s + s.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw NumericalFailure("fid: eigendecomposition failed");
    }
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double lambda = es.eigenvalues()(i);
        if (lambda < -1e-8) {
            throw NumericalFailure("fid: negative eigenvalue " + std::to_string(lambda) + " in covariance product");
        }
        tr_sqrt += std::sqrt(std::max(lambda, 0.0));
    }
    double dmu = 0.0;
    for (std::size_t i = 0; i < r.dim(); ++i) {
        const double d = r.mean[i] - g.mean[i];
        dmu += d * d;
    }
    return std::max(0.0, dmu + sr.trace() + sg.trace() - 2.0 * tr_sqrt);
}

// Segmental SNR ------------------------------------------------------------------

double segmental_snr(std::span<const double> reference, std::span<const double> estimate, std::size_t segment)
{
    if (reference.size() != estimate.size()) {
        throw InvalidArgument("segmental_snr: length mismatch");
    }
    if (segment == 0) {
        throw InvalidArgument("segmental_snr: segment must be >= 1 sample");
    }
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t start = 0; start < reference.size(); start += segment) {
        const std::size_t end = std::min(reference.size(), start + segment);
        double e = 0.0, d = 0.0;
        for (std::size_t i = start; i < end; ++i) {
            e += reference[i] * reference[i];
            const double r = reference[i] - estimate[i];
            d += r * r;
        }
        if (e == 0.0) {
            continue;
        }
        const double snr = d == 0.0 ? 35.0 : 10.0 * std::log10(e / d);
        total += std::clamp(snr, -10.0, 35.0);
        ++used;
    }
    if (used == 0) {
        throw UndefinedReference("segmental_snr: every segment of the reference is silent");
    }
    return total / static_cast<double>(used);
}

double pearson(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size() || a.size() < 2) {
        throw InvalidArgument("pearson: need two equally long series of at least two samples");
    }
    const auto n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) {
        throw UndefinedReference("pearson: constant series");
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace w2v::metrics
