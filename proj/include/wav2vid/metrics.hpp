#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "wav2vid/audio_codec.hpp"
#include "wav2vid/media.hpp"
#include "wav2vid/nn.hpp"

namespace w2v::metrics {

using audio::nrmse;

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(peak^2 / MSE) over all frames, capped at 100 dB.
double psnr(const media::VideoClip& reference, const media::VideoClip& estimate);
double psnr(std::span<const double> reference, std::span<const double> estimate, double peak);

/// Three-scale MS-SSIM averaged over frames (11x11 Gaussian window, sigma 1.5).
double ms_ssim(const media::VideoClip& reference, const media::VideoClip& estimate, std::size_t scales = 3);
double ms_ssim(const media::Frame& reference, const media::Frame& estimate, double peak, std::size_t scales = 3);

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> cov; // d x d, row-major
    std::size_t n = 0;

    std::size_t dim() const noexcept { return mean.size(); }
};

/// Fixed random conv net standing in for the Inception feature extractor.
class ProxyFeatureNet {
public:
    static constexpr std::uint64_t kSeed = 0xF1D0;
    static constexpr std::size_t kDim = 8;

    ProxyFeatureNet(std::size_t width = 64, std::size_t height = 64);
    std::vector<double> features(const media::Frame& frame) const;
    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }

private:
    std::size_t width_, height_;
    nn::Sequential net_;
    nn::Layer head_;
    std::size_t conv_out_ = 0;
};

/// Sample mean and unbiased covariance (+1e-6 I) of row vectors.
FeatureStats stats_from_samples(const std::vector<std::vector<double>>& samples);
/// Per-frame proxy features of a clip; needs at least two frames.
FeatureStats feature_stats(const ProxyFeatureNet& net, const media::VideoClip& clip);

/// Frechet distance between Gaussian fits; the matrix square root goes through
/// the symmetric form S = sqrt(Sr) Sg sqrt(Sr).
double fid(const FeatureStats& r, const FeatureStats& g);

/// Mean of per-segment SNRs in dB, each clamped to [-10, 35]; silent segments skipped.
double segmental_snr(std::span<const double> reference, std::span<const double> estimate, std::size_t segment = 160);

/// Pearson correlation. Throws InvalidArgument on length mismatch or fewer than
/// two samples and UndefinedReference when either series is constant.
double pearson(std::span<const double> a, std::span<const double> b);

} // namespace w2v::metrics
