#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "wav2vid/errors.hpp"
#include "wav2vid/metrics.hpp"

using namespace w2v;
using namespace w2v::metrics;

namespace {

media::VideoClip constant_clip(double v, std::size_t frames = 2, std::size_t size = 64)
{
    media::VideoClip c;
    c.width = c.height = size;
    c.frames.assign(frames, media::Frame(size, size, v));
    return c;
}

FeatureStats gaussian(std::vector<double> mean, std::vector<double> cov)
{
    FeatureStats s;
    s.mean = std::move(mean);
    s.cov = std::move(cov);
    s.n = 2;
    return s;
}

} // namespace

TEST(Psnr, Examples)
{
    const auto a = constant_clip(0.5);
    EXPECT_DOUBLE_EQ(psnr(a, a), 100.0);
    const auto b = constant_clip(0.6);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9); // MSE 0.01
    std::vector<double> x(100, 10.0), y(100, 11.0);
    EXPECT_NEAR(psnr(x, y, 255.0), 10.0 * std::log10(65025.0), 1e-9);
    EXPECT_NEAR(psnr(x, y, 255.0), 48.13, 0.005);
}

TEST(Psnr, ShapeMismatch)
{
    EXPECT_THROW(psnr(constant_clip(0.1, 2), constant_clip(0.1, 3)), InvalidArgument);
    EXPECT_THROW(psnr(constant_clip(0.1, 2, 64), constant_clip(0.1, 2, 32)), InvalidArgument);
}

TEST(Psnr, StrictlyDecreasingInNoise)
{
    const auto clip = media::synth_scene(0, 0.2, 25.0, 8000.0, media::MotionProfile::gentle).first.video;
    Rng rng(1);
    std::normal_distribution<double> g;
    std::vector<std::vector<double>> noise;
    for (const auto& f : clip.frames) {
        std::vector<double> n(f.pixels.size());
        for (auto& v : n) {
            v = g(rng);
        }
        noise.push_back(std::move(n));
    }
    double prev = 101.0;
    for (int level = 1; level <= 10; ++level) {
        auto noisy = clip;
        const double sd = 0.01 * level;
        for (std::size_t t = 0; t < noisy.length(); ++t) {
            for (std::size_t i = 0; i < noisy.frames[t].pixels.size(); ++i) {
                noisy.frames[t].pixels[i] += sd * noise[t][i];
            }
        }
        const double p = psnr(clip, noisy);
        EXPECT_LT(p, prev);
        prev = p;
    }
}

TEST(MsSsim, Identity)
{
    const auto clip = media::synth_scene(0, 0.2, 25.0, 8000.0, media::MotionProfile::gentle).first.video;
    EXPECT_EQ(ms_ssim(clip, clip), 1.0);
}

TEST(MsSsim, InvertedClipIsDissimilar)
{
    const auto clip = media::synth_scene(0, 0.4, 25.0, 8000.0, media::MotionProfile::gentle).first.video;
    auto inv = clip;
    for (auto& f : inv.frames) {
        for (auto& p : f.pixels) {
            p = 1.0 - p;
        }
    }
    const double s = ms_ssim(clip, inv);
    EXPECT_LT(s, 0.5);
    EXPECT_GE(s, 0.0);
}

TEST(MsSsim, NearIdentityContinuity)
{
    EXPECT_GE(ms_ssim(constant_clip(0.4), constant_clip(0.4 + 1e-6)), 0.999);
}

TEST(MsSsim, RangeUnderNoise)
{
    const auto clip = media::synth_scene(2, 0.2, 25.0, 8000.0, media::MotionProfile::gentle).first.video;
    Rng rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double prev = 1.0;
    for (double amount : {0.05, 0.2, 0.6}) {
        auto noisy = clip;
        for (auto& f : noisy.frames) {
            for (auto& p : f.pixels) {
                p = (1.0 - amount) * p + amount * u(rng);
            }
        }
        const double s = ms_ssim(clip, noisy);
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
        EXPECT_LT(s, prev);
        prev = s;
    }
}

TEST(MsSsim, TooSmallFrames)
{
    EXPECT_THROW(ms_ssim(constant_clip(0.1, 2, 40), constant_clip(0.1, 2, 40)), InvalidArgument);
    EXPECT_NO_THROW(ms_ssim(constant_clip(0.1, 2, 44), constant_clip(0.1, 2, 44)));
}

TEST(FeatureStats, DuplicatedFrames)
{
    const ProxyFeatureNet net;
    const auto scene = media::synth_scene(0, 0.2, 25.0, 8000.0, media::MotionProfile::static_pose).first.video;
    media::VideoClip dup = scene;
    for (auto& f : dup.frames) {
        f = scene.frames[0];
    }
    const auto s = feature_stats(net, dup);
    EXPECT_EQ(s.n, dup.length());
    for (std::size_t i = 0; i < s.dim(); ++i) {
        for (std::size_t j = 0; j < s.dim(); ++j) {
            EXPECT_EQ(s.cov[i * s.dim() + j], i == j ? 1e-6 : 0.0);
        }
    }
    EXPECT_EQ(feature_stats(net, dup).mean, s.mean);
    EXPECT_THROW(feature_stats(net, constant_clip(0.1, 1)), InvalidArgument);
}

TEST(FeatureStats, NetIsFixed)
{
    const ProxyFeatureNet a, b;
    const auto frame = media::synth_scene(1, 0.04, 25.0, 8000.0, media::MotionProfile::static_pose).first.video.frames[0];
    EXPECT_EQ(a.features(frame), b.features(frame));
    EXPECT_EQ(a.features(frame).size(), ProxyFeatureNet::kDim);
}

TEST(Fid, ClosedFormExamples)
{
    EXPECT_NEAR(fid(gaussian({0.0}, {1.0}), gaussian({1.0}, {1.0})), 1.0, 1e-6);
    EXPECT_NEAR(fid(gaussian({0.0, 0.0}, {1, 0, 0, 1}), gaussian({1.0, 1.0}, {4, 0, 0, 4})), 4.0, 1e-6);
    const auto r = gaussian({0.3, -1.0}, {2.0, 0.5, 0.5, 1.0});
    EXPECT_NEAR(fid(r, r), 0.0, 1e-9);
}

TEST(Fid, SymmetricAndNonNegative)
{
    Rng rng(4);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::vector<double>> xs, ys;
        for (int i = 0; i < 50; ++i) {
            xs.push_back({g(rng), g(rng) * 2.0, g(rng) + 1.0});
            ys.push_back({g(rng) * 0.5, g(rng) + g(rng), g(rng)});
        }
        const auto a = stats_from_samples(xs), b = stats_from_samples(ys);
        EXPECT_NEAR(fid(a, b), fid(b, a), 1e-9);
        EXPECT_GE(fid(a, b), 0.0);
    }
}

TEST(Fid, NonPositiveDefiniteFails)
{
    EXPECT_THROW(fid(gaussian({0.0, 0.0}, {1, 2, 2, 1}), gaussian({0.0, 0.0}, {1, 0, 0, 1})), NumericalFailure);
    EXPECT_THROW(fid(gaussian({0.0}, {1.0}), gaussian({0.0, 0.0}, {1, 0, 0, 1})), InvalidArgument);
}

TEST(Fid, MonteCarloMatchesGaussianFrechetDistance)
{
    // Commuting covariances Q diag(a) Q^T and Q diag(b) Q^T give the closed form
    // |dmu|^2 + sum (sqrt a_i - sqrt b_i)^2.
    const double c = std::cos(0.7), s = std::sin(0.7), c2 = std::cos(-0.4), s2 = std::sin(-0.4);
    const double Q[4][4] = {{c, -s, 0, 0}, {s, c, 0, 0}, {0, 0, c2, -s2}, {0, 0, s2, c2}};
    const double a[4] = {1.0, 2.0, 0.5, 1.5}, b[4] = {2.0, 1.0, 1.0, 0.5};
    const double mu_g[4] = {1.0, -0.5, 0.5, 0.25};
    double expected = 0.0;
    for (int i = 0; i < 4; ++i) {
        expected += mu_g[i] * mu_g[i] + std::pow(std::sqrt(a[i]) - std::sqrt(b[i]), 2);
    }

    Rng rng(0xFD);
    std::normal_distribution<double> g;
    auto draw = [&](const double* scale, const double* mu) {
        std::vector<std::vector<double>> out(10000, std::vector<double>(4));
        for (auto& x : out) {
            double z[4];
            for (int i = 0; i < 4; ++i) {
                z[i] = std::sqrt(scale[i]) * g(rng);
            }
            for (int i = 0; i < 4; ++i) {
                x[i] = (mu ? mu[i] : 0.0);
                for (int j = 0; j < 4; ++j) {
                    x[i] += Q[i][j] * z[j];
                }
            }
        }
        return out;
    };
    const double measured = fid(stats_from_samples(draw(a, nullptr)), stats_from_samples(draw(b, mu_g)));
    EXPECT_NEAR(measured / expected, 1.0, 0.05);
}

TEST(SegmentalSnr, Examples)
{
    const auto a = media::synth_scene(0, 1.0, 25.0, 8000.0, media::MotionProfile::static_pose).first.audio.samples;
    EXPECT_DOUBLE_EQ(segmental_snr(a, a, 160), 35.0);
    EXPECT_NEAR(segmental_snr(a, std::vector<double>(a.size(), 0.0), 160), 0.0, 1e-12);

    Rng rng(9);
    std::normal_distribution<double> g;
    std::vector<double> est = a;
    for (std::size_t start = 0; start < a.size(); start += 160) {
        double e = 0.0, ne = 0.0;
        std::vector<double> n(160);
        for (std::size_t i = 0; i < 160; ++i) {
            e += a[start + i] * a[start + i];
            n[i] = g(rng);
            ne += n[i] * n[i];
        }
        const double k = std::sqrt(e / 10.0 / ne);
        for (std::size_t i = 0; i < 160; ++i) {
            est[start + i] += k * n[i];
        }
    }
    EXPECT_NEAR(segmental_snr(a, est, 160), 10.0, 0.1);
}

TEST(SegmentalSnr, Errors)
{
    const std::vector<double> z(320, 0.0);
    EXPECT_THROW(segmental_snr(z, z, 160), UndefinedReference);
    EXPECT_THROW(segmental_snr(z, std::vector<double>(10, 0.0), 160), InvalidArgument);
    EXPECT_THROW(segmental_snr(z, z, 0), InvalidArgument);
}

TEST(Metrics, NrmseReexport)
{
    EXPECT_DOUBLE_EQ(metrics::nrmse(std::vector<double>{1.0, 2.0}, std::vector<double>{2.0, 1.0}), 0.4);
}

TEST(Pearson, ExamplesAndErrors)
{
    const std::vector<double> a{1.0, 2.0, 3.0, 4.0};
    EXPECT_NEAR(pearson(a, std::vector<double>{2.0, 4.0, 6.0, 8.0}), 1.0, 1e-12);
    EXPECT_NEAR(pearson(a, std::vector<double>{4.0, 3.0, 2.0, 1.0}), -1.0, 1e-12);
    EXPECT_NEAR(pearson(a, std::vector<double>{1.0, -1.0, -1.0, 1.0}), 0.0, 1e-12);
    EXPECT_THROW(pearson(a, std::vector<double>{1.0, 1.0, 1.0, 1.0}), UndefinedReference);
    EXPECT_THROW(pearson(std::vector<double>{1.0}, std::vector<double>{1.0}), InvalidArgument);
}
