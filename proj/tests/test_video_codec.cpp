#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <random>
#include <tuple>

#include "wav2vid/errors.hpp"
#include "wav2vid/metrics.hpp"
#include "wav2vid/video_codec.hpp"

using namespace w2v;
using namespace w2v::video;

namespace {

media::VideoClip scene(std::uint64_t seed, media::MotionProfile profile = media::MotionProfile::gentle,
                       double seconds = 1.0)
{
    return media::synth_scene(seed, seconds, 25.0, 8000.0, profile).first.video;
}

const VideoCodecModel& trained()
{
    static const VideoCodecModel model = [] {
        auto m = make_video_codec({}, 0);
        std::vector<media::VideoClip> clips;
        for (std::uint64_t s = 0; s < 4; ++s) {
            clips.push_back(scene(300 + s, s % 2 ? media::MotionProfile::gentle : media::MotionProfile::turning));
        }
        pretrain_video(m, clips, {});
        return m;
    }();
    return model;
}

media::Frame noise_frame(std::size_t h, std::size_t w, Rng& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    media::Frame f(h, w);
    for (auto& p : f.pixels) {
        p = u(rng);
    }
    return f;
}

// Exhaustive search written independently of the library: order candidates by
// (SAD, |m|^2, dy, dx) and take the first.
std::pair<int, int> oracle_block(const media::Frame& cur, const media::Frame& prev, int y0, int x0, int B, int R)
{
    std::vector<std::tuple<double, int, int, int>> cands;
    for (int dy = -R; dy <= R; ++dy) {
        for (int dx = -R; dx <= R; ++dx) {
            const int ry = y0 - dy, rx = x0 - dx;
            if (ry < 0 || rx < 0 || ry + B > static_cast<int>(prev.height) || rx + B > static_cast<int>(prev.width)) {
                continue;
            }
            double sad = 0.0;
            for (int i = 0; i < B; ++i) {
                for (int j = 0; j < B; ++j) {
                    sad += std::abs(cur(y0 + i, x0 + j) - prev(ry + i, rx + j));
                }
            }
            cands.emplace_back(sad, dy * dy + dx * dx, dy, dx);
        }
    }
    const auto best = *std::min_element(cands.begin(), cands.end());
    return {std::get<2>(best), std::get<3>(best)};
}

channel::ChannelConfig ideal()
{
    channel::ChannelConfig c;
    c.fading = channel::Fading::ideal;
    return c;
}

} // namespace

TEST(ExtractFeatures, ShapeAndDeterminism)
{
    const auto m = make_video_codec({}, 0);
    const auto clip = scene(1);
    const auto y = extract_features(m, clip.frames[0]);
    EXPECT_EQ(y.shape(), (nn::Tensor::Shape{8, 16, 16}));
    EXPECT_EQ(extract_features(m, clip.frames[0]), y);
    EXPECT_THROW(extract_features(m, media::Frame(62, 64)), InvalidArgument);
}

TEST(ExtractFeatures, ConstantFrameGivesConstantInterior)
{
    const auto m = make_video_codec({}, 3);
    const auto y = extract_features(m, media::Frame(64, 64, 0.6));
    for (std::size_t c = 0; c < 8; ++c) {
        const double ref = y[(c * 16 + 5) * 16 + 5];
        for (std::size_t i = 2; i < 14; ++i) {
            for (std::size_t j = 2; j < 14; ++j) {
                EXPECT_NEAR(y[(c * 16 + i) * 16 + j], ref, 1e-12);
            }
        }
    }
}

TEST(EstimateMotion, IdenticalFramesGiveZeroField)
{
    const auto f = scene(2).frames[3];
    const auto m = estimate_motion(f, f, 8, 4);
    EXPECT_EQ(m.rows, 8u);
    EXPECT_EQ(m.cols, 8u);
    EXPECT_TRUE(m.all_zero());
}

TEST(EstimateMotion, ShiftRightByTwo)
{
    Rng rng(5);
    const auto prev = noise_frame(64, 64, rng);
    media::Frame cur(64, 64);
    for (std::size_t y = 0; y < 64; ++y) {
        for (std::size_t x = 0; x < 64; ++x) {
            cur(y, x) = prev(y, x >= 2 ? x - 2 : 0);
        }
    }
    const auto m = estimate_motion(cur, prev, 8, 4);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 1; c < m.cols; ++c) {
            EXPECT_EQ(m.dy[r * m.cols + c], 0);
            EXPECT_EQ(m.dx[r * m.cols + c], 2);
        }
    }
    EXPECT_TRUE(estimate_motion(cur, prev, 8, 0).all_zero());
}

TEST(EstimateMotion, MatchesExhaustiveOracle)
{
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const auto prev = noise_frame(16, 16, rng);
        auto cur = noise_frame(16, 16, rng);
        // Half of the trials use a true shift so that the optimum is not arbitrary.
        if (trial % 2 == 0) {
            const int sy = static_cast<int>(rng() % 5) - 2, sx = static_cast<int>(rng() % 5) - 2;
            for (int y = 0; y < 16; ++y) {
                for (int x = 0; x < 16; ++x) {
                    cur(y, x) = prev(std::clamp(y - sy, 0, 15), std::clamp(x - sx, 0, 15));
                }
            }
        }
        // Quantize a few frames coarsely to provoke ties.
        if (trial % 3 == 0) {
            for (auto& p : cur.pixels) {
                p = std::round(p);
            }
        }
        for (int R : {0, 1, 3}) {
            const auto m = estimate_motion(cur, prev, 4, static_cast<std::size_t>(R));
            for (int br = 0; br < 4; ++br) {
                for (int bc = 0; bc < 4; ++bc) {
                    const auto [dy, dx] = oracle_block(cur, prev, 4 * br, 4 * bc, 4, R);
                    EXPECT_EQ(m.dy[br * 4 + bc], dy);
                    EXPECT_EQ(m.dx[br * 4 + bc], dx);
                }
            }
        }
    }
}

TEST(EstimateMotion, Errors)
{
    EXPECT_THROW(estimate_motion(media::Frame(16, 16), media::Frame(16, 12), 4, 1), InvalidArgument);
    EXPECT_THROW(estimate_motion(media::Frame(16, 16), media::Frame(16, 16), 5, 1), InvalidArgument);
}

TEST(BuildContext, IdentityRefinerAndZeroMotion)
{
    const auto m = make_video_codec({}, 7);
    const auto y = extract_features(m, scene(3).frames[0]);
    EXPECT_EQ(build_context(m, y, zero_motion(64, 64, 8)), y);
}

TEST(BuildContext, UniformShiftAndEdgeClamp)
{
    nn::Tensor y({2, 16, 16});
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = static_cast<double>(i);
    }
    auto m = zero_motion(64, 64, 8);
    std::fill(m.dx.begin(), m.dx.end(), 4); // one feature column
    std::fill(m.dy.begin(), m.dy.end(), -8); // two feature rows up
    const auto w = warp_features(y, m, 4);
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t i = 0; i < 16; ++i) {
            for (std::size_t j = 0; j < 16; ++j) {
                const std::size_t si = std::min<std::size_t>(i + 2, 15), sj = j == 0 ? 0 : j - 1;
                EXPECT_EQ(w[(c * 16 + i) * 16 + j], y[(c * 16 + si) * 16 + sj]);
            }
        }
    }
}

TEST(Laplace, NormalizedAndConsistent)
{
    for (auto [mu, b] : {std::pair{0.3, 3.0}, {-4.7, 0.4}, {12.0, 2.5}}) {
        double total = 0.0;
        for (int v = -2000; v <= 2000; ++v) {
            total += laplace_probability(v, mu, b) > kMinProbability ? laplace_probability(v, mu, b) : 0.0;
        }
        EXPECT_NEAR(total, 1.0, 1e-4);
        const double v = std::round(mu);
        EXPECT_NEAR(laplace_nll(v, mu, b).bits, -std::log2(laplace_probability(v, mu, b)), 1e-12);
    }
    EXPECT_EQ(laplace_probability(1e6, 0.0, 1.0), kMinProbability);
    EXPECT_THROW(laplace_probability(0.0, 0.0, 0.0), InvalidArgument);
}

TEST(Laplace, NllDerivativesMatchFiniteDifferences)
{
    Rng rng(21);
    std::uniform_real_distribution<double> u(-3.0, 3.0), ub(0.2, 4.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double v = std::round(u(rng) * 2.0), mu = u(rng), b = ub(rng);
        const auto r = laplace_nll(v, mu, b);
        const double h = 1e-6;
        const double dmu = (laplace_nll(v, mu + h, b).bits - laplace_nll(v, mu - h, b).bits) / (2 * h);
        const double db = (laplace_nll(v, mu, b + h).bits - laplace_nll(v, mu, b - h).bits) / (2 * h);
        EXPECT_LE(nn::relative_error(r.d_mu, dmu), 1e-4);
        EXPECT_LE(nn::relative_error(r.d_scale, db), 1e-4);
    }
}

TEST(RateAllocate, Examples)
{
    const std::vector<double> uniform(10, 1.0 / 256.0);
    const auto r = rate_allocate(uniform, {}, 1.0, 1.0);
    EXPECT_DOUBLE_EQ(r.nll_y, 80.0);
    EXPECT_EQ(r.k_y, 80u);
    EXPECT_EQ(r.k(), 80u);

    const std::vector<double> certain(25, 1.0);
    const auto d = rate_allocate(certain, certain, 1.0, 1.0);
    EXPECT_EQ(d.k(), 0u);

    const std::vector<double> zero(3, 0.0);
    EXPECT_DOUBLE_EQ(rate_allocate({}, zero, 1.0, 1.0).nll_m, 48.0);

    EXPECT_THROW(rate_allocate(uniform, {}, -1.0, 1.0), InvalidArgument);
    EXPECT_THROW(rate_allocate(std::vector<double>{1.5}, {}, 1.0, 1.0), InvalidArgument);
}

TEST(RateAllocate, LinearInEta)
{
    Rng rng(2);
    std::uniform_real_distribution<double> u(1e-3, 1.0);
    std::vector<double> p(100), q(40);
    for (auto& v : p) {
        v = u(rng);
    }
    for (auto& v : q) {
        v = u(rng);
    }
    for (double eta : {0.1, 0.25, 0.7, 1.3}) {
        const auto a = rate_allocate(p, q, eta, eta * 2.0);
        const auto b = rate_allocate(p, q, 2.0 * eta, eta * 4.0);
        EXPECT_EQ(b.raw_y, 2.0 * a.raw_y);
        EXPECT_EQ(b.raw_m, 2.0 * a.raw_m);
        EXPECT_EQ(a.k_y, static_cast<std::size_t>(std::ceil(a.raw_y)));
    }
}

TEST(RateAllocate, GibbsOnModelDraws)
{
    Rng rng(0xC0DE);
    for (auto [mu, b] : {std::pair{0.0, 1.5}, {2.3, 0.6}, {-1.0, 6.0}}) {
        std::exponential_distribution<double> e(1.0 / b);
        std::bernoulli_distribution sign(0.5);
        const std::size_t n = 20000;
        std::map<int, std::size_t> hist;
        std::vector<double> p;
        double true_entropy = 0.0;
        for (int v = -200; v <= 200; ++v) {
            const double pv = laplace_probability(v, mu, b);
            if (pv > kMinProbability) {
                true_entropy -= pv * std::log2(pv);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double x = mu + (sign(rng) ? 1.0 : -1.0) * e(rng);
            const int v = static_cast<int>(std::round(x));
            ++hist[v];
            p.push_back(laplace_probability(v, mu, b));
        }
        const double avg_nll = rate_allocate(p, {}, 1.0, 1.0).nll_y / static_cast<double>(n);
        double empirical = 0.0;
        for (const auto& [v, c] : hist) {
            const double f = static_cast<double>(c) / static_cast<double>(n);
            empirical -= f * std::log2(f);
        }
        EXPECT_GE(avg_nll, empirical - 1e-12);
        EXPECT_NEAR(avg_nll, true_entropy, 0.05);
    }
}

TEST(VideoEncode, BookkeepingAndDeterminism)
{
    const auto m = make_video_codec({}, 1);
    const auto clip = scene(4);
    const auto [s, sem] = video_encode(m, clip, 10.0);
    ASSERT_EQ(s.frames.size(), clip.length());
    ASSERT_EQ(sem.frames.size(), clip.length());
    std::size_t sum = 0;
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
        const auto& f = s.frames[t];
        EXPECT_EQ(f.symbols.size(), f.k());
        EXPECT_EQ(f.k_y, sem.frames[t].rate.k_y);
        EXPECT_EQ(f.k_m, sem.frames[t].rate.k_m);
        EXPECT_LE(f.k_y, 8u * 16u * 16u);
        for (double v : sem.frames[t].y_bar.values()) {
            EXPECT_EQ(v, std::nearbyint(v));
        }
        sum += f.k();
    }
    EXPECT_EQ(s.total_symbols(), sum);
    EXPECT_EQ(s.concatenated().size(), sum);
    EXPECT_NEAR(channel::average_power(s.concatenated()), 1.0, 1e-6);

    EXPECT_TRUE(sem.frames[0].intra);
    EXPECT_EQ(s.frames[0].k_m, 0u);
    for (double v : sem.frames[0].context.values()) {
        EXPECT_EQ(v, 0.0);
    }
    EXPECT_FALSE(sem.frames[1].intra);

    const auto [s2, sem2] = video_encode(m, clip, 10.0);
    ASSERT_EQ(s2.frames.size(), s.frames.size());
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
        EXPECT_EQ(s2.frames[t].symbols, s.frames[t].symbols);
        EXPECT_EQ(s2.frames[t].gain, s.frames[t].gain);
    }
    EXPECT_EQ(encode_framing(s2), encode_framing(s));
}

TEST(VideoEncode, EmptyClipRejected)
{
    const auto m = make_video_codec({}, 1);
    EXPECT_THROW(video_encode(m, media::VideoClip{}, 10.0), InvalidArgument);
}

TEST(VideoEncode, StaticSceneRateCollapse)
{
    auto clip = scene(0, media::MotionProfile::static_pose);
    for (auto& f : clip.frames) {
        f = clip.frames[0];
    }
    const auto [s, sem] = video_encode(trained(), clip, 10.0);
    double later = 0.0;
    for (std::size_t t = 1; t < s.frames.size(); ++t) {
        EXPECT_LT(s.frames[t].k(), s.frames[0].k()) << t;
        EXPECT_TRUE(sem.frames[t].motion.all_zero());
        later += static_cast<double>(s.frames[t].k());
    }
    EXPECT_LT(later / static_cast<double>(s.frames.size() - 1), static_cast<double>(s.frames[0].k()));
}

TEST(VideoDecode, NoiselessTrainedPsnr)
{
    for (std::uint64_t seed : {0u, 900u, 901u}) {
        const auto clip = scene(seed);
        const auto [s, sem] = video_encode(trained(), clip, 20.0);
        const auto out = video_decode(trained(), transmit_stream(s, ideal()));
        ASSERT_EQ(out.length(), clip.length());
        EXPECT_GE(metrics::psnr(clip, out), 25.0) << seed;
        for (const auto& f : out.frames) {
            for (double p : f.pixels) {
                EXPECT_GE(p, 0.0);
                EXPECT_LE(p, clip.peak);
            }
        }
    }
}

TEST(VideoDecode, FirstFrameIsIntra)
{
    const auto clip = scene(6);
    const auto [s, sem] = video_encode(trained(), clip, 10.0);
    VideoStream first = s;
    first.frames.resize(1);
    DecoderState state;
    const auto one = video_decode(trained(), first, &state);
    const auto all = video_decode(trained(), s);
    EXPECT_EQ(one.frames[0], all.frames[0]);
    EXPECT_EQ(state.features.shape(), (nn::Tensor::Shape{8, 16, 16}));
}

TEST(VideoDecode, LengthMismatchIsFramingError)
{
    const auto m = make_video_codec({}, 2);
    auto [s, sem] = video_encode(m, scene(7), 10.0);
    s.frames[3].symbols.pop_back();
    EXPECT_THROW(video_decode(m, s), FramingError);
}

TEST(Framing, RoundTripAndTruncation)
{
    const auto m = make_video_codec({}, 2);
    const auto [s, sem] = video_encode(m, scene(8, media::MotionProfile::gentle, 0.2), 10.0);
    const auto bytes = encode_framing(s);
    std::size_t expected = 4;
    for (const auto& f : s.frames) {
        expected += 8 + 4 * f.k();
    }
    EXPECT_EQ(bytes.size(), expected);
    std::uint32_t count = 0;
    std::memcpy(&count, bytes.data(), 4);
    EXPECT_EQ(count, s.frames.size());

    VideoStream back = s;
    decode_framing(bytes, back);
    ASSERT_EQ(back.frames.size(), s.frames.size());
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
        EXPECT_EQ(back.frames[t].k_y, s.frames[t].k_y);
        EXPECT_EQ(back.frames[t].k_m, s.frames[t].k_m);
        EXPECT_EQ(back.frames[t].gain, s.frames[t].gain);
        for (std::size_t i = 0; i < s.frames[t].symbols.size(); ++i) {
            EXPECT_EQ(back.frames[t].symbols[i], static_cast<double>(static_cast<float>(s.frames[t].symbols[i])));
        }
    }
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 2);
    EXPECT_THROW(decode_framing(cut, back), FramingError);
    auto extra = bytes;
    extra.push_back(0);
    EXPECT_THROW(decode_framing(extra, back), FramingError);
}

TEST(RdLoss, Examples)
{
    const auto m = make_video_codec({}, 2);
    const auto clip = scene(9, media::MotionProfile::gentle, 0.2);
    const auto [s, sem] = video_encode(m, clip, 10.0);
    const double k = static_cast<double>(s.total_symbols());
    EXPECT_DOUBLE_EQ(rd_loss(clip, clip, s, 1.0), k - 100.0);
    auto noisy = clip;
    for (auto& f : noisy.frames) {
        for (auto& p : f.pixels) {
            p = std::min(1.0, p + 0.05);
        }
    }
    EXPECT_DOUBLE_EQ(rd_loss(clip, noisy, s, 0.0), k);
    const double one = rd_loss(clip, noisy, s, 1.0), two = rd_loss(clip, noisy, s, 2.0);
    EXPECT_NEAR(two - k, 2.0 * (one - k), 1e-9);
    EXPECT_DOUBLE_EQ(rd_loss(clip, noisy, s, -3.0), rd_loss(clip, noisy, s, 3.0));
}

TEST(RdLoss, GradientMatchesFiniteDifferences)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        media::VideoClip ref, est;
        ref.width = est.width = 6;
        ref.height = est.height = 5;
        for (int t = 0; t < 2; ++t) {
            ref.frames.push_back(noise_frame(5, 6, rng));
            est.frames.push_back(noise_frame(5, 6, rng));
        }
        const double lambda = 1.0 + 31.0 * u(rng), rate = 100.0 * u(rng);
        std::vector<std::vector<double>> grad;
        rd_objective(ref, est, rate, lambda, &grad);
        nn::Tensor x({60}), analytic({60});
        for (std::size_t i = 0; i < 60; ++i) {
            x[i] = est.frames[i / 30].pixels[i % 30];
            analytic[i] = grad[i / 30][i % 30];
        }
        const auto rep = nn::check_gradient(
            [&](const nn::Tensor& v) {
                auto e = est;
                for (std::size_t i = 0; i < 60; ++i) {
                    e.frames[i / 30].pixels[i % 30] = v[i];
                }
                return rd_objective(ref, e, rate, lambda, nullptr);
            },
            x, analytic, 1e-4);
        EXPECT_TRUE(rep.passed) << seed << " " << rep.max_relative_error;
    }
}

TEST(VideoCodec, PsnrNonDecreasingInSnr)
{
    const auto clip = scene(900);
    double prev = -1.0;
    for (double snr : {0.0, 5.0, 10.0, 15.0, 20.0}) {
        const auto [st, se] = video_encode(trained(), clip, snr);
        double mean = 0.0;
        for (std::uint64_t r = 0; r < 20; ++r) {
            channel::ChannelConfig c;
            c.snr_db = snr;
            c.seed = split_seed(r, {17});
            mean += metrics::psnr(clip, video_decode(trained(), transmit_stream(st, c))) / 20.0;
        }
        EXPECT_GE(mean, prev) << snr;
        prev = mean;
    }
}

TEST(FineTuneVideo, FreezeContractAndDecrease)
{
    auto m = trained();
    const auto before = m;
    std::vector<media::VideoClip> clips{scene(300, media::MotionProfile::turning), scene(301)};
    channel::ChannelConfig c;
    c.snr_db = 10.0;
    VideoFineTuneOptions o;
    o.epochs = 50;
    const auto log = fine_tune_video(m, clips, c, o);
    ASSERT_EQ(log.losses.size(), 50u);
    EXPECT_TRUE(m.params.nets_equal(before.params, {VideoCodecModel::kExtractor, VideoCodecModel::kSynthesizer,
                                                    VideoCodecModel::kRefiner}));
    EXPECT_FALSE(m.params.nets_equal(before.params, {VideoCodecModel::kProjection}));
    EXPECT_FALSE(m.params.nets_equal(before.params, {VideoCodecModel::kPriorY}));
    const auto s = smoothed(log.losses, 10);
    EXPECT_LT(s.back(), s[9]);
}

TEST(FineTuneVideo, ZeroLearningRateAndEmptySet)
{
    auto m = trained();
    const auto before = m;
    VideoFineTuneOptions o;
    o.lr = 0.0;
    o.epochs = 2;
    std::vector<media::VideoClip> clips{scene(5, media::MotionProfile::gentle, 0.2)};
    fine_tune_video(m, clips, channel::ChannelConfig{}, o);
    EXPECT_TRUE(m.params == before.params);
    EXPECT_THROW(fine_tune_video(m, std::vector<media::VideoClip>{}, channel::ChannelConfig{}, o), InvalidArgument);
    EXPECT_THROW(pretrain_video(m, std::vector<media::VideoClip>{}, {}), InvalidArgument);
}
