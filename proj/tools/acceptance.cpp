// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wav2vid/channel.hpp"
#include "wav2vid/errors.hpp"
#include "wav2vid/generator.hpp"
#include "wav2vid/harness.hpp"
#include "wav2vid/metrics.hpp"
#include "wav2vid/nn.hpp"
#include "wav2vid/rng.hpp"
#include "wav2vid/video_codec.hpp"

using namespace w2v;
using namespace w2v::harness;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

int failures = 0;
int ran = 0;
std::vector<int> selected; // empty selects every criterion

bool wanted(int id)
{
    return selected.empty() || std::find(selected.begin(), selected.end(), id) != selected.end();
}

void report(int id, const char* name, double budget_s, const std::function<Outcome()>& run, double extra_s = 0.0)
{
    if (!wanted(id)) {
        return;
    }
    ++ran;
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = run();
    } catch (const std::exception& e) {
        o = {false, std::string("error: ") + e.what()};
    }
    const double took = seconds_since(t0) + extra_s;
    const bool in_time = took < budget_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("[%s] %2d %s: %s (%.1fs of %.0fs budget%s)\n", pass ? "PASS" : "FAIL", id, name, o.detail.c_str(),
                took, budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
}

nn::Tensor random_tensor(nn::Tensor::Shape shape, Rng& rng, double scale = 1.0)
{
    nn::Tensor t(std::move(shape));
    std::normal_distribution<double> g(0.0, scale);
    for (auto& v : t.values()) {
        v = g(rng);
    }
    return t;
}

// 1 ---------------------------------------------------------------------------------

Outcome accounting()
{
    const auto cfg = load_config(std::string(W2V_SOURCE_DIR) + "/configs/table2.json");
    const auto rep = table2_accounting(cfg, {}, cfg.scene.duration_s);
    const auto& w = rep.row("wav2vid");
    const bool ok = std::abs(w.total_units - 2.6e6) < 1.0 && std::abs(w.reduction_vs_traditional - 0.8375) <= 1e-4;
    return {ok, "wav2vid total " + format_real(w.total_units) + ", reduction " +
                    fmt("%.4f%%", 100.0 * w.reduction_vs_traditional)};
}

// 2 ---------------------------------------------------------------------------------

Outcome gating(const PipelineConfig& base, const Models& models)
{
    PipelineConfig cfg = base;
    cfg.scene.profile = media::MotionProfile::gentle;
    cfg.scene.duration_s = 18.0;
    const auto scene = make_scene(cfg.scene);
    const auto scores = gate_scores(cfg, scene);
    // Open the gate for the first clip plus the top round(2/15 * clips) - 1 others.
    const auto target = static_cast<std::size_t>(std::lround(2.0 / 15.0 * static_cast<double>(scores.size())));
    std::vector<double> rest(scores.begin() + 1, scores.end());
    std::sort(rest.rbegin(), rest.rend());
    cfg.epsilon = target <= 1 ? rest.front() + 1.0 : 0.5 * (rest[target - 2] + rest[target - 1]);

    const auto& ch = cfg.channels.front();
    const auto gated = run_pipeline(cfg, models, scene, ch);
    const auto dvst = run_pipeline(cfg, models, scene, ch, GateMode::always);
    const auto a = table2_accounting(cfg, gated.transmissions, cfg.scene.duration_s).row("wav2vid");
    const auto b = table2_accounting(cfg, dvst.transmissions, cfg.scene.duration_s).row("wav2vid");
    std::size_t sent = 0;
    for (const auto& t : gated.transmissions) {
        sent += t.gate.transmit_video ? 1 : 0;
    }
    const bool metered = a.video_units == static_cast<double>(gated.meter.video) &&
                         a.audio_units == static_cast<double>(gated.meter.audio);
    const double ratio = a.total_units / b.total_units;
    return {metered && ratio >= 0.10 && ratio <= 0.20,
            std::to_string(sent) + "/" + std::to_string(scores.size()) + " clips carry video at epsilon " +
                fmt("%.3f", cfg.epsilon) + ", total ratio " + fmt("%.4f", ratio) +
                (metered ? "" : ", meter mismatch")};
}

// 3 ---------------------------------------------------------------------------------

Outcome gradients()
{
    struct LayerCase {
        const char* name;
        std::function<nn::Sequential()> make;
        nn::Tensor::Shape input;
    };
    const std::vector<LayerCase> cases{
        {"dense", [] { return nn::Sequential({nn::layers::dense(6, 4)}); }, {6}},
        {"conv1d", [] { return nn::Sequential({nn::layers::conv1d(2, 3, 3, 2, 1)}); }, {2, 9}},
        {"conv2d", [] { return nn::Sequential({nn::layers::conv2d(2, 3, 3, 2, 1)}); }, {2, 5, 6}},
        {"deconv1d", [] { return nn::Sequential({nn::layers::deconv1d(2, 3, 4, 2, 1)}); }, {2, 5}},
        {"deconv2d", [] { return nn::Sequential({nn::layers::deconv2d(2, 2, 4, 2, 1)}); }, {2, 3, 4}},
        {"pointwise", [] { return nn::Sequential({nn::layers::pointwise(3, 2)}); }, {3, 4, 2}},
        {"relu", [] { return nn::Sequential({nn::layers::relu()}); }, {12}},
        {"tanh", [] { return nn::Sequential({nn::layers::tanh()}); }, {12}},
        {"sigmoid", [] { return nn::Sequential({nn::layers::sigmoid()}); }, {12}},
        {"stack",
         [] {
             return nn::Sequential({nn::layers::conv2d(1, 3, 3, 1, 1), nn::layers::tanh(),
                                    nn::layers::deconv2d(3, 2, 4, 2, 1), nn::layers::sigmoid(),
                                    nn::layers::dense(2 * 8 * 8, 3)});
         },
         {1, 4, 4}},
    };
    std::map<std::string, double> worst;
    bool ok = true;
    auto note = [&](const std::string& what, const nn::GradCheckReport& r) {
        worst[what] = std::max(worst[what], r.max_relative_error);
        ok = ok && r.passed;
    };
    constexpr double tol = 1e-4;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (const auto& c : cases) {
            Rng rng(seed);
            auto net = c.make();
            net.initialize(rng);
            for (std::size_t i = 0; i < net.size(); ++i) {
                if (net.layer(i).has_parameters()) {
                    net.mutable_layer(i).bias = random_tensor(net.layer(i).bias.shape(), rng, 0.3);
                }
            }
            auto x = random_tensor(c.input, rng);
            for (auto& v : x.values()) {
                // Inputs stay at least 1e-2 away from the ReLU kink.
                if (std::abs(v) < 1e-2) {
                    v = std::copysign(1e-2, v);
                }
            }
            const auto target = random_tensor(net.output_shape(c.input), rng);
            note(c.name, nn::grad_check(net, x,
                                        [&](const nn::Tensor& y, nn::Tensor* dy) {
                                            double l = 0.0;
                                            for (std::size_t i = 0; i < y.size(); ++i) {
                                                l += 0.5 * (y[i] - target[i]) * (y[i] - target[i]);
                                                if (dy) {
                                                    (*dy)[i] = y[i] - target[i];
                                                }
                                            }
                                            return l;
                                        },
                                        tol));
        }

        Rng rng(seed);
        std::uniform_real_distribution<double> u(0.05, 0.95);

        // NRMSE over the estimate.
        std::vector<double> a(20);
        for (auto& v : a) {
            v = u(rng) - 0.5;
        }
        const auto e = random_tensor({20}, rng, 0.3);
        note("nrmse", nn::check_gradient([&](const nn::Tensor& x) { return metrics::nrmse(a, x.values()); }, e,
                                         nn::Tensor({20}, audio::nrmse_gradient(a, e.values())), tol));

        // Pixel clips without ties for the L1 and PSNR based losses.
        media::VideoClip ref, est;
        ref.width = est.width = 6;
        ref.height = est.height = 5;
        nn::Tensor x({60});
        for (int t = 0; t < 2; ++t) {
            media::Frame r(5, 6), g(5, 6);
            for (std::size_t i = 0; i < 30; ++i) {
                r.pixels[i] = u(rng);
                g.pixels[i] = r.pixels[i] + (i % 2 ? 0.04 : -0.04) * (1.0 + u(rng));
                x[t * 30 + i] = g.pixels[i];
            }
            ref.frames.push_back(r);
            est.frames.push_back(g);
        }
        auto with = [&](const nn::Tensor& v) {
            auto c = est;
            for (std::size_t i = 0; i < 60; ++i) {
                c.frames[i / 30].pixels[i % 30] = v[i];
            }
            return c;
        };
        auto flat = [](const std::vector<std::vector<double>>& g) {
            nn::Tensor t({60});
            for (std::size_t i = 0; i < 60; ++i) {
                t[i] = g[i / 30][i % 30];
            }
            return t;
        };
        const double lambda = 1.0 + 31.0 * u(rng), rate = 100.0 * u(rng);
        std::vector<std::vector<double>> d_rd;
        video::rd_objective(ref, est, rate, lambda, &d_rd);
        note("rd", nn::check_gradient(
                       [&](const nn::Tensor& v) { return video::rd_objective(ref, with(v), rate, lambda, nullptr); }, x,
                       flat(d_rd), tol));
        note("recon", nn::check_gradient([&](const nn::Tensor& v) { return gen::recon_loss(ref, with(v)); }, x,
                                         flat(gen::recon_loss_gradient(ref, est)), tol));

        // Sync loss through P_sync, with v correlated with a.
        const auto a_emb = random_tensor({6}, rng);
        const auto av = a_emb.values();
        auto vv = random_tensor({6}, rng, 0.5);
        for (std::size_t i = 0; i < 6; ++i) {
            vv[i] += av[i];
        }
        std::vector<double> dv;
        gen::p_sync_gradient(vv.values(), av, 1e-6, &dv, nullptr);
        const std::vector<double> P{gen::p_sync(vv.values(), av, 1e-6)};
        const double dP = gen::sync_loss_gradient(P, 1e-3)[0];
        nn::Tensor d_sync({6});
        for (std::size_t i = 0; i < 6; ++i) {
            d_sync[i] = dP * dv[i];
        }
        note("sync", nn::check_gradient(
                         [&](const nn::Tensor& v) {
                             const std::vector<double> p{gen::p_sync(v.values(), av, 1e-6)};
                             return gen::sync_loss(p, 1e-3);
                         },
                         vv, d_sync, tol));

        // GAN loss over discriminator outputs.
        nn::Tensor d({5});
        for (auto& v : d.values()) {
            v = u(rng);
        }
        note("gan", nn::check_gradient([](const nn::Tensor& v) { return gen::gan_loss(v.values()); }, d,
                                       nn::Tensor({5}, gen::gan_loss_gradient(d.values())), tol));

        // Total generator loss over a mouth patch.
        gen::GeneratorConfig tiny;
        tiny.embedding = 4;
        tiny.mouth_h = 4;
        tiny.mouth_w = 8;
        tiny.window = 32;
        const auto model = gen::make_generator(tiny, seed);
        nn::Tensor patch({1, 4, 8}), target({1, 4, 8});
        for (std::size_t i = 0; i < patch.size(); ++i) {
            target[i] = u(rng);
            patch[i] = target[i] + (i % 2 ? 0.2 : -0.2) * u(rng);
        }
        const auto emb_t = random_tensor({4}, rng);
        const auto emb = emb_t.values();
        gen::GenLossWeights w;
        w.w_s = 0.3;
        w.w_g = 0.2;
        nn::Tensor d_patch;
        gen::patch_objective(model, patch, target, emb, w, &d_patch);
        note("total", nn::check_gradient(
                          [&](const nn::Tensor& v) { return gen::patch_objective(model, v, target, emb, w, nullptr).total; },
                          patch, d_patch, tol));
    }
    double max_err = 0.0;
    std::string which;
    for (const auto& [k, v] : worst) {
        if (v >= max_err) {
            max_err = v;
            which = k;
        }
    }
    return {ok, std::to_string(worst.size()) + " checks x 10 seeds, worst relative error " + fmt("%.2e", max_err) +
                    " (" + which + ")"};
}

// 4 ---------------------------------------------------------------------------------

Outcome channel_calibration()
{
    Rng rng(11);
    std::normal_distribution<double> g;
    std::vector<double> x(100000);
    for (auto& v : x) {
        v = g(rng);
    }
    channel::normalize_power(x);
    bool ok = true;
    std::string detail = "measured SNR";
    for (double snr : {0.0, 10.0, 20.0}) {
        channel::ChannelConfig c;
        c.snr_db = snr;
        c.seed = split_seed(4, {static_cast<std::uint64_t>(snr)});
        const auto r = channel::transmit(x, c);
        double sig = 0.0, noise = 0.0;
        for (std::size_t i = 0; i < r.sent.size(); ++i) {
            sig += std::norm(r.sent[i]);
            noise += std::norm(r.received[i] - r.gains[i / r.block_size] * r.sent[i]);
        }
        const double measured = 10.0 * std::log10(sig / noise);
        ok = ok && std::abs(measured - snr) <= 0.2;
        detail += " " + fmt("%.3f", measured);
    }
    channel::ChannelConfig c;
    c.block_size = 1;
    c.seed = 5;
    const auto r = channel::transmit(x, c);
    double p = 0.0;
    for (auto h : r.gains) {
        p += std::norm(h);
    }
    p /= static_cast<double>(r.gains.size());
    ok = ok && std::abs(p - 1.0) <= 0.01;
    return {ok, detail + " dB, E|h|^2 " + fmt("%.4f", p)};
}

// 5 ---------------------------------------------------------------------------------

metrics::FeatureStats gaussian(std::vector<double> mean, std::vector<double> cov)
{
    metrics::FeatureStats s;
    s.mean = std::move(mean);
    s.cov = std::move(cov);
    s.n = 2;
    return s;
}

Outcome fid_oracle()
{
    const double one_d = metrics::fid(gaussian({0.0}, {1.0}), gaussian({1.0}, {1.0}));
    const double two_d = metrics::fid(gaussian({0.0, 0.0}, {1, 0, 0, 1}), gaussian({1.0, 1.0}, {4, 0, 0, 4}));
    bool ok = std::abs(one_d - 1.0) <= 1e-6 && std::abs(two_d - 4.0) <= 1e-6;

    // Commuting covariances Q diag(a) Q^T and Q diag(b) Q^T.
    const double c = std::cos(0.7), s = std::sin(0.7), c2 = std::cos(-0.4), s2 = std::sin(-0.4);
    const double Q[4][4] = {{c, -s, 0, 0}, {s, c, 0, 0}, {0, 0, c2, -s2}, {0, 0, s2, c2}};
    const double a[4] = {1.0, 2.0, 0.5, 1.5}, b[4] = {2.0, 1.0, 1.0, 0.5};
    const double mu[4] = {1.0, -0.5, 0.5, 0.25};
    double expected = 0.0;
    for (int i = 0; i < 4; ++i) {
        expected += mu[i] * mu[i] + std::pow(std::sqrt(a[i]) - std::sqrt(b[i]), 2);
    }
    Rng rng(0xFD);
    std::normal_distribution<double> g;
    auto draw = [&](const double* scale, const double* m) {
        std::vector<std::vector<double>> out(10000, std::vector<double>(4));
        for (auto& x : out) {
            double z[4];
            for (int i = 0; i < 4; ++i) {
                z[i] = std::sqrt(scale[i]) * g(rng);
            }
            for (int i = 0; i < 4; ++i) {
                x[i] = m ? m[i] : 0.0;
                for (int j = 0; j < 4; ++j) {
                    x[i] += Q[i][j] * z[j];
                }
            }
        }
        return out;
    };
    const double sampled =
        metrics::fid(metrics::stats_from_samples(draw(a, nullptr)), metrics::stats_from_samples(draw(b, mu)));
    const double rel = std::abs(sampled - expected) / expected;
    ok = ok && rel <= 0.05;
    return {ok, "hand cases " + fmt("%.8f", one_d) + " / " + fmt("%.8f", two_d) + ", sampled 4-D " +
                    fmt("%.4f", sampled) + " vs " + fmt("%.4f", expected) + " (" + fmt("%.2f%%", 100.0 * rel) + ")"};
}

// 6 ---------------------------------------------------------------------------------

Outcome entropy_model()
{
    Rng rng(0xC0DE);
    bool ok = true;
    double min_gap = 1e9;
    for (auto [mu, b] : {std::pair{0.0, 1.5}, {2.3, 0.6}, {-1.0, 6.0}}) {
        std::exponential_distribution<double> e(1.0 / b);
        std::bernoulli_distribution sign(0.5);
        const std::size_t n = 20000;
        std::map<int, std::size_t> hist;
        std::vector<double> p;
        for (std::size_t i = 0; i < n; ++i) {
            const int v = static_cast<int>(std::round(mu + (sign(rng) ? 1.0 : -1.0) * e(rng)));
            ++hist[v];
            p.push_back(video::laplace_probability(v, mu, b));
        }
        const double avg_nll = video::rate_allocate(p, {}, 1.0, 1.0).nll_y / static_cast<double>(n);
        double empirical = 0.0;
        for (const auto& [v, c] : hist) {
            const double f = static_cast<double>(c) / static_cast<double>(n);
            empirical -= f * std::log2(f);
        }
        ok = ok && avg_nll >= empirical;
        min_gap = std::min(min_gap, avg_nll - empirical);
    }
    std::uniform_real_distribution<double> u(1e-3, 1.0);
    std::vector<double> py(100), pm(40);
    for (auto& v : py) {
        v = u(rng);
    }
    for (auto& v : pm) {
        v = u(rng);
    }
    bool linear = true;
    for (double eta : {0.1, 0.25, 0.7, 1.3}) {
        const auto x = video::rate_allocate(py, pm, eta, 2.0 * eta);
        const auto y = video::rate_allocate(py, pm, 2.0 * eta, 4.0 * eta);
        linear = linear && y.raw_y == 2.0 * x.raw_y && y.raw_m == 2.0 * x.raw_m;
    }
    return {ok && linear, "min NLL - entropy " + fmt("%.4f", min_gap) + " bits, eta linearity " +
                              (linear ? "exact" : "broken")};
}

// 7 ---------------------------------------------------------------------------------

Outcome trends(const PipelineConfig& cfg, const Models& models)
{
    const auto scene = make_scene(cfg.scene);
    const std::vector<double> snr{0.0, 5.0, 10.0, 15.0, 20.0};
    const auto rep = snr_sweep(cfg, models, scene, snr, std::max<std::size_t>(cfg.sweep.repeats, 20));
    bool ok = true;
    std::string violations;
    for (std::size_t i = 1; i < rep.rows.size(); ++i) {
        const auto& p = rep.rows[i - 1];
        const auto& q = rep.rows[i];
        auto check = [&](const char* name, double prev, double now, double sp, double sq, int direction) {
            const double step = direction * (now - prev);
            if (step < 0.0) {
                violations += std::string(" ") + name + "@" + format_real(q.snr_db);
                ok = ok && -step <= std::max(sp, sq);
            }
        };
        check("psnr", p.mean.psnr, q.mean.psnr, p.std.psnr, q.std.psnr, +1);
        check("msssim", p.mean.msssim, q.mean.msssim, p.std.msssim, q.std.msssim, +1);
        check("nrmse", p.mean.nrmse, q.mean.nrmse, p.std.nrmse, q.std.nrmse, -1);
    }
    const auto& lo = rep.rows.front();
    const auto& hi = rep.rows.back();
    return {ok, "PSNR " + fmt("%.2f", lo.mean.psnr) + " -> " + fmt("%.2f", hi.mean.psnr) + " dB, MS-SSIM " +
                    fmt("%.3f", lo.mean.msssim) + " -> " + fmt("%.3f", hi.mean.msssim) + ", NRMSE " +
                    fmt("%.3f", lo.mean.nrmse) + " -> " + fmt("%.3f", hi.mean.nrmse) + " over " +
                    std::to_string(rep.repeats) + " repeats" +
                    (violations.empty() ? "" : ", reversals within 1 std:" + violations)};
}

// 8 ---------------------------------------------------------------------------------

Outcome ordering(const PipelineConfig& base, const Models& models)
{
    PipelineConfig cfg = base;
    cfg.compare.seeds = 10;
    cfg.compare.snr_db = 10.0;
    const auto rep = compare_wav2vid_vs_txt2vid_audio(cfg, models);
    const auto& m = rep.mean;
    return {rep.wav2vid_wins(), "sync r " + fmt("%.3f", m.wav2vid_r) + " vs " + fmt("%.3f", m.surrogate_r) +
                                    ", FID " + fmt("%.5f", m.wav2vid_fid) + " vs " + fmt("%.5f", m.surrogate_fid) +
                                    " (Wav2Vid vs surrogate, 10 seeds)"};
}

// 9 ---------------------------------------------------------------------------------

Outcome freeze_contract(const TrainedModels& t)
{
    const auto& a = t.models;
    const auto& o = t.offline;
    using A = audio::AudioCodecModel;
    using V = video::VideoCodecModel;
    const bool audio_frozen = a.audio.params.nets_equal(o.audio.params, {A::kExtractor, A::kSynthesizer});
    const bool video_frozen =
        a.video.params.nets_equal(o.video.params, {V::kExtractor, V::kSynthesizer, V::kRefiner});
    const bool generator_frozen = a.generator.params == o.generator.params;
    const bool tuned = !a.audio.params.nets_equal(o.audio.params, {A::kAggregator, A::kDecomposer}) &&
                       !a.video.params.nets_equal(o.video.params, {V::kProjection, V::kInverse});
    double min_r = 1.0;
    for (std::uint64_t seed : {9000u, 9001u, 9002u}) {
        min_r = std::min(min_r, gen::sync_correlation(a.generator, gen::make_lip_clip(seed, 2.0)));
    }
    const bool ok = audio_frozen && video_frozen && generator_frozen && tuned && min_r >= 0.8;
    return {ok, std::string("frozen groups ") + (audio_frozen && video_frozen && generator_frozen ? "unchanged" : "CHANGED") +
                    ", coding modules " + (tuned ? "updated" : "untouched") + ", held-out sync r >= " +
                    fmt("%.3f", min_r)};
}

// 10 --------------------------------------------------------------------------------

Outcome determinism()
{
    PipelineConfig cfg;
    cfg.scene.duration_s = 4.0;
    auto& t = cfg.training;
    t.audio_clips = 2;
    t.audio_epochs = 5;
    t.video_clips = 2;
    t.video_clip_s = 0.4;
    t.video_autoencoder_steps = 100;
    t.video_refiner_steps = 20;
    t.video_prior_steps = 20;
    t.generator_clips = 2;
    t.generator_clip_s = 1.0;
    t.generator_sync_epochs = 2;
    t.generator_epochs = 4;
    t.finetune_audio_clips = 1;
    t.finetune_video_clips = 1;
    t.finetune_round = 3;
    t.finetune_max_epochs = 6;
    cfg.sweep.snr_db = {0.0, 20.0};
    cfg.sweep.repeats = 2;
    cfg.compare.seeds = 2;
    cfg.compare.seconds = 2.0;

    auto once = [&] {
        const auto trained = train_all(cfg);
        const auto scene = make_scene(cfg.scene);
        const auto run = run_pipeline(cfg, trained.models, scene, cfg.channels.front());
        std::string out = sweep_csv(snr_sweep(cfg, trained.models, scene, cfg.sweep.snr_db, cfg.sweep.repeats));
        out += accounting_csv(table2_accounting(cfg, run.transmissions, cfg.scene.duration_s));
        out += compare_csv(compare_wav2vid_vs_txt2vid_audio(cfg, trained.models));
        for (const auto* p : {&trained.models.audio.params, &trained.models.video.params,
                              &trained.models.generator.params}) {
            const auto bytes = nn::serialize_parameters(*p);
            out.append(bytes.begin(), bytes.end());
        }
        const auto clip = media::encode_clip(run.output());
        out.append(clip.begin(), clip.end());
        return out;
    };
    const auto first = once();
    const auto second = once();
    return {first == second, std::to_string(first.size()) + " bytes of CSVs, checkpoints and output " +
                                 (first == second ? "identical" : "DIFFER")};
}

} // namespace

int main(int argc, char** argv)
{
    for (int i = 1; i < argc; ++i) {
        selected.push_back(std::atoi(argv[i]));
    }
    std::printf("wav2vid acceptance criteria\n");
    report(1, "Transmission accounting", 1.0, accounting);
    report(3, "Gradient verification", 120.0, gradients);
    report(4, "Channel calibration", 10.0, channel_calibration);
    report(5, "FID oracle", 30.0, fid_oracle);
    report(6, "Entropy-model sanity", 30.0, entropy_model);

    // Desk-scale training shared by the criteria that need trained models.
    const PipelineConfig cfg;
    std::optional<TrainedModels> trained;
    std::string train_error;
    double train_s = 0.0;
    if (wanted(2) || wanted(7) || wanted(8) || wanted(9)) {
        const auto t0 = Clock::now();
        try {
            trained = train_all(cfg);
        } catch (const std::exception& e) {
            train_error = e.what();
        }
        train_s = seconds_since(t0);
        std::printf("       desk-scale training took %.1fs (%zu online rounds%s)\n", train_s,
                    trained ? trained->report.rounds : 0, trained && trained->report.converged ? ", converged" : "");
    }
    auto needs_models = [&](auto fn) {
        return [&, fn]() -> Outcome {
            if (!trained) {
                return {false, "training failed: " + train_error};
            }
            return fn();
        };
    };
    report(2, "Desk-scale gating reduction", 300.0, needs_models([&] { return gating(cfg, trained->models); }));
    report(7, "SNR trends", 1800.0, needs_models([&] { return trends(cfg, trained->models); }), train_s);
    report(8, "Sync and FID ordering", 600.0, needs_models([&] { return ordering(cfg, trained->models); }));
    report(9, "Freeze contract and sync", 600.0, needs_models([&] { return freeze_contract(*trained); }), train_s);
    report(10, "Determinism", 600.0, determinism);

    std::printf("%d of %d criteria failed\n", failures, ran);
    return failures == 0 ? 0 : 1;
}
