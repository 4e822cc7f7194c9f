#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "wav2vid/errors.hpp"
#include "wav2vid/generator.hpp"
#include "wav2vid/metrics.hpp"

using namespace w2v;
using namespace w2v::gen;

namespace {

struct Trained {
    GeneratorModel model;
    GeneratorTrainLog log;
};

const Trained& trained()
{
    static const Trained t = [] {
        Trained r{make_generator({}, 0), {}};
        std::vector<LipClip> clips;
        for (std::uint64_t s = 0; s < 4; ++s) {
            clips.push_back(make_lip_clip(700 + s, 2.0));
        }
        GeneratorTrainOptions o;
        o.seed = 0;
        r.log = train_generator(r.model, clips, o);
        return r;
    }();
    return t;
}

media::VideoClip single_frame_clip(const media::Frame& f)
{
    media::VideoClip c;
    c.width = f.width;
    c.height = f.height;
    c.frames = {f};
    return c;
}

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0)
{
    std::normal_distribution<double> g(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) {
        x = g(rng);
    }
    return v;
}

} // namespace

TEST(PSync, Examples)
{
    const std::vector<double> u{0.6, 0.8};
    EXPECT_NEAR(p_sync(u, u, 1e-6), 1.0, 1e-15);
    EXPECT_NEAR(p_sync(std::vector<double>{1.0, 0.0}, u, 1e-6), 0.6, 1e-15);
    const std::vector<double> small{0.01, 0.0};
    EXPECT_NEAR(p_sync(small, small, 0.1), 0.001, 1e-15);
    EXPECT_THROW(p_sync(u, std::vector<double>{1.0}, 1e-6), InvalidArgument);
    EXPECT_THROW(p_sync(u, u, 0.0), InvalidArgument);
}

TEST(PSync, RangeProperty)
{
    Rng rng(1);
    std::uniform_real_distribution<double> scale(1e-4, 10.0);
    for (int i = 0; i < 1000; ++i) {
        const auto v = random_vector(rng, 16, scale(rng)), a = random_vector(rng, 16, scale(rng));
        const double p = p_sync(v, a, i % 2 ? 1e-6 : 1.0);
        EXPECT_GE(p, -1.0);
        EXPECT_LE(p, 1.0);
    }
}

TEST(SyncLoss, Examples)
{
    EXPECT_EQ(sync_loss(std::vector<double>{1.0, 1.0}, 1e-3), 0.0);
    EXPECT_NEAR(sync_loss(std::vector<double>{1e-3, -0.5, 0.0}, 1e-3), 6.9078, 1e-4);
    EXPECT_NEAR(sync_loss(std::vector<double>{1.0, std::exp(-1.0)}, 1e-3), 0.5, 1e-12);
    EXPECT_THROW(sync_loss(std::vector<double>{}, 1e-3), InvalidArgument);
}

TEST(ReconLoss, Examples)
{
    media::VideoClip a, b;
    a.width = b.width = a.height = b.height = 2;
    a.frames = {media::Frame(2, 2, 0.2)};
    b.frames = {media::Frame(2, 2, 0.7)};
    EXPECT_EQ(recon_loss(a, a), 0.0);
    EXPECT_DOUBLE_EQ(recon_loss(a, b), 2.0);
    auto c = a;
    c.frames.push_back(a.frames[0]);
    EXPECT_THROW(recon_loss(a, c), InvalidArgument);
}

TEST(ReconLoss, TriangleInequality)
{
    Rng rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto clip = [&] {
        media::VideoClip c;
        c.width = c.height = 4;
        for (int t = 0; t < 3; ++t) {
            media::Frame f(4, 4);
            for (auto& p : f.pixels) {
                p = u(rng);
            }
            c.frames.push_back(f);
        }
        return c;
    };
    for (int i = 0; i < 50; ++i) {
        const auto v = clip(), w = clip(), x = clip();
        EXPECT_LE(recon_loss(v, x), recon_loss(v, w) + recon_loss(w, x) + 1e-12);
        EXPECT_GE(recon_loss(v, x), 0.0);
    }
}

TEST(GanLoss, Examples)
{
    EXPECT_NEAR(gan_loss(std::vector<double>{0.5, 0.5}), -0.6931, 1e-4);
    EXPECT_NEAR(gan_loss(std::vector<double>{0.0}), 0.0, 1e-5);
    EXPECT_NEAR(gan_loss(std::vector<double>{1.0}), std::log(1e-6), 1e-9);
}

TEST(TotalGenLoss, Examples)
{
    GenLossWeights w;
    w.w_s = w.w_g = 0.0;
    EXPECT_EQ(total_gen_loss(2.0, 4.0, -1.0, w), 2.0);
    w.w_s = w.w_g = 0.25;
    EXPECT_DOUBLE_EQ(total_gen_loss(2.0, 4.0, -1.0, w), 1.75);
    GenLossWeights a, b;
    a.w_s = a.w_g = 0.0;
    b.w_s = 1e-9;
    b.w_g = 0.0;
    EXPECT_LE(std::abs(total_gen_loss(3.0, 7.0, -0.5, a) - total_gen_loss(3.0, 7.0, -0.5, b)), 1e-8 * 4.0);
    w.w_s = 0.6;
    w.w_g = 0.5;
    EXPECT_THROW(total_gen_loss(1.0, 1.0, 1.0, w), InvalidArgument);
    w.w_s = -0.1;
    w.w_g = 0.0;
    EXPECT_THROW(total_gen_loss(1.0, 1.0, 1.0, w), InvalidArgument);
}

TEST(GeneratorGradients, LossesMatchFiniteDifferences)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        std::uniform_real_distribution<double> u(0.05, 0.95);

        // p_sync (both branches) through sync_loss.
        const auto a = random_vector(rng, 6);
        const double kappa = seed % 2 ? 1e-6 : 50.0;
        nn::Tensor v({6}, random_vector(rng, 6));
        auto sync_of = [&](const nn::Tensor& x) {
            const std::vector<double> P{p_sync(x.values(), a, kappa)};
            return sync_loss(P, 1e-3) + p_sync(x.values(), a, kappa);
        };
        std::vector<double> dv;
        p_sync_gradient(v.values(), a, kappa, &dv, nullptr);
        const std::vector<double> P{p_sync(v.values(), a, kappa)};
        const double dP = sync_loss_gradient(P, 1e-3)[0] + 1.0;
        nn::Tensor analytic({6});
        for (std::size_t i = 0; i < 6; ++i) {
            analytic[i] = dP * dv[i];
        }
        auto rep = nn::check_gradient(sync_of, v, analytic, 1e-4);
        EXPECT_TRUE(rep.passed) << "sync " << seed << " " << rep.max_relative_error;

        // sync_loss over P values inside (kappa_p, 1).
        nn::Tensor p({5});
        for (std::size_t i = 0; i < 5; ++i) {
            p[i] = u(rng);
        }
        rep = nn::check_gradient([](const nn::Tensor& x) { return sync_loss(x.values(), 1e-3); }, p,
                                 nn::Tensor({5}, sync_loss_gradient(p.values(), 1e-3)), 1e-4);
        EXPECT_TRUE(rep.passed) << "sync_loss " << seed;

        // gan_loss over discriminator outputs.
        rep = nn::check_gradient([](const nn::Tensor& x) { return gan_loss(x.values()); }, p,
                                 nn::Tensor({5}, gan_loss_gradient(p.values())), 1e-4);
        EXPECT_TRUE(rep.passed) << "gan " << seed;

        // recon_loss over generated pixels (no ties).
        media::VideoClip ref, gen;
        ref.width = gen.width = 3;
        ref.height = gen.height = 2;
        nn::Tensor x({12});
        for (int t = 0; t < 2; ++t) {
            media::Frame r(2, 3), g(2, 3);
            for (std::size_t i = 0; i < 6; ++i) {
                r.pixels[i] = u(rng);
                g.pixels[i] = r.pixels[i] + (i % 2 ? 0.1 : -0.1) * u(rng);
                x[t * 6 + i] = g.pixels[i];
            }
            ref.frames.push_back(r);
            gen.frames.push_back(g);
        }
        const auto rg = recon_loss_gradient(ref, gen);
        nn::Tensor ra({12});
        for (std::size_t i = 0; i < 12; ++i) {
            ra[i] = rg[i / 6][i % 6];
        }
        rep = nn::check_gradient(
            [&](const nn::Tensor& y) {
                auto g = gen;
                for (std::size_t i = 0; i < 12; ++i) {
                    g.frames[i / 6].pixels[i % 6] = y[i];
                }
                return recon_loss(ref, g);
            },
            x, ra, 1e-4);
        EXPECT_TRUE(rep.passed) << "recon " << seed;

        // Total loss through the video processor and the discriminator.
        GeneratorConfig tiny;
        tiny.embedding = 4;
        tiny.mouth_h = 4;
        tiny.mouth_w = 8;
        tiny.window = 32;
        const auto model = make_generator(tiny, seed);
        nn::Tensor patch({1, 4, 8}), target({1, 4, 8});
        for (std::size_t i = 0; i < patch.size(); ++i) {
            target[i] = u(rng);
            patch[i] = target[i] + (i % 2 ? 0.2 : -0.2) * u(rng);
        }
        const auto emb = random_vector(rng, 4);
        GenLossWeights w;
        w.w_s = 0.3;
        w.w_g = 0.2;
        nn::Tensor dpatch;
        patch_objective(model, patch, target, emb, w, &dpatch);
        rep = nn::check_gradient(
            [&](const nn::Tensor& y) { return patch_objective(model, y, target, emb, w, nullptr).total; }, patch,
            dpatch, 1e-4);
        EXPECT_TRUE(rep.passed) << "total " << seed << " " << rep.max_relative_error;

        // Discriminator parameters under the GAN loss.
        const auto& disc = model.params.net(GeneratorModel::kDiscriminator);
        rep = nn::grad_check(disc, patch, [](const nn::Tensor& y, nn::Tensor* dy) {
            const std::vector<double> d{y[0]};
            if (dy) {
                *dy = nn::Tensor({1}, gan_loss_gradient(d));
            }
            return gan_loss(d);
        }, 1e-4);
        EXPECT_TRUE(rep.passed) << "disc " << seed << " " << rep.worst;
    }
}

TEST(PatchObjective, ComponentsAreAffine)
{
    const auto model = make_generator({}, 2);
    Rng rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    nn::Tensor patch({1, 12, 16}), target({1, 12, 16});
    for (std::size_t i = 0; i < patch.size(); ++i) {
        patch[i] = u(rng);
        target[i] = u(rng);
    }
    const auto emb = random_vector(rng, 16);
    GenLossWeights w;
    const auto r = patch_objective(model, patch, target, emb, w, nullptr);
    EXPECT_DOUBLE_EQ(r.total, total_gen_loss(r.recon, r.sync, r.gan, w));
    EXPECT_GE(r.sync, 0.0);
    EXPECT_LE(r.gan, 0.0);
}

TEST(Embed, DeterministicShapesAndErrors)
{
    const auto model = make_generator({}, 1);
    const auto lc = make_lip_clip(3, 1.0);
    const auto e = embed(model, lc.clip.video, lc.clip.audio, lc.mouth);
    ASSERT_EQ(e.size(), 25u);
    EXPECT_EQ(e.video[0].size(), 16u);
    EXPECT_EQ(e.audio[0].size(), 16u);
    const auto again = embed(model, lc.clip.video, lc.clip.audio, lc.mouth);
    EXPECT_EQ(again.video, e.video);
    EXPECT_EQ(again.audio, e.audio);

    const std::vector<double> zeros(320, 0.0);
    for (double x : audio_embedding(model, zeros)) {
        EXPECT_TRUE(std::isfinite(x));
    }
    auto shorter = lc.clip.audio;
    shorter.samples.resize(7000);
    EXPECT_THROW(embed(model, lc.clip.video, shorter, lc.mouth), InvalidArgument);
}

TEST(Generate, MaskingDurationAndDeterminism)
{
    const auto model = make_generator({}, 1);
    const auto lc = make_lip_clip(4, 1.0);
    auto audio = lc.clip.audio;
    audio.samples.resize(3200); // 0.4 s
    const auto out = generate(model, lc.clip.video, audio, lc.mouth);
    ASSERT_EQ(out.length(), 10u);
    const auto& ref = lc.clip.video.frames.back();
    for (const auto& f : out.frames) {
        for (std::size_t y = 0; y < f.height; ++y) {
            for (std::size_t x = 0; x < f.width; ++x) {
                if (!lc.mouth.contains(y, x)) {
                    EXPECT_EQ(f(y, x), ref(y, x));
                }
            }
        }
    }
    EXPECT_EQ(generate(model, lc.clip.video, audio, lc.mouth), out);
    EXPECT_EQ(generate(model, lc.clip.video, lc.clip.audio, lc.mouth).length(), 25u);
    EXPECT_THROW(generate(model, media::VideoClip{}, audio, lc.mouth), MissingReference);
}

TEST(Generate, SilenceClosesMouth)
{
    auto [clip, scene] = media::synth_scene(9200, 1.0, 25.0, 8000.0, media::MotionProfile::static_pose);
    const auto mouth = media::mouth_region(scene.face, scene.width, scene.height);
    auto closed = scene, open = scene;
    std::fill(closed.mouth_openness.begin(), closed.mouth_openness.end(), 0.0);
    std::fill(open.mouth_openness.begin(), open.mouth_openness.end(), 1.0);
    const double d_closed = media::mouth_darkness(media::render_frame(closed, 0), mouth);
    const double d_open = media::mouth_darkness(media::render_frame(open, 0), mouth);

    media::AudioWaveform silence;
    silence.samples.assign(8000, 0.0);
    // Cache a frame with the mouth wide open so that closing it is the generator's doing.
    const auto out = generate(trained().model, single_frame_clip(media::render_frame(open, 0)), silence, mouth);
    for (const auto& f : out.frames) {
        EXPECT_LE(std::abs(media::mouth_darkness(f, mouth) - d_closed), 0.1 * (d_open - d_closed));
    }
}

TEST(TrainGenerator, SyncCorrelationOnHeldOutSeeds)
{
    for (std::uint64_t seed : {9000u, 9001u, 9002u}) {
        EXPECT_GE(sync_correlation(trained().model, make_lip_clip(seed, 2.0)), 0.8) << seed;
    }
}

TEST(TrainGenerator, Diagnostics)
{
    const auto& log = trained().log;
    ASSERT_EQ(log.recon.losses.size(), 200u);
    const auto s = smoothed(log.recon.losses, 10);
    EXPECT_LT(s.back(), s[9]);
    double acc = 0.0;
    for (double a : log.discriminator_accuracy) {
        acc += a;
    }
    EXPECT_GT(acc / static_cast<double>(log.discriminator_accuracy.size()), 0.5);
    EXPECT_LT(log.sync_expert.final(), log.sync_expert.initial());
}

TEST(TrainGenerator, ZeroLearningRateAndEmptySet)
{
    auto model = make_generator({}, 5);
    const auto before = model;
    std::vector<LipClip> clips{make_lip_clip(1, 0.4)};
    GeneratorTrainOptions o;
    o.lr = 0.0;
    o.epochs = 2;
    o.sync_epochs = 2;
    train_generator(model, clips, o);
    EXPECT_TRUE(model.params == before.params);
    EXPECT_THROW(train_generator(model, std::vector<LipClip>{}, o), InvalidArgument);
}
