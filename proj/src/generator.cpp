#include "wav2vid/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wav2vid/errors.hpp"
#include "wav2vid/metrics.hpp"
#include "wav2vid/rng.hpp"

namespace w2v::gen {

using nn::Tape;
using nn::Tensor;
using Model = GeneratorModel;

void GeneratorConfig::validate() const
{
    if (embedding == 0 || window < 16 || mouth_h == 0 || mouth_w == 0 || mouth_h % 4 != 0 || mouth_w % 4 != 0) {
        throw InvalidArgument("generator: positive embedding, window >= 16 and mouth dims divisible by 4 required");
    }
}

void GenLossWeights::validate() const
{
    if (!(w_s >= 0.0) || !(w_g >= 0.0) || w_s + w_g > 1.0) {
        throw InvalidArgument("generator loss weights: w_s, w_g >= 0 and w_s + w_g <= 1 required");
    }
    if (!(kappa > 0.0) || !(kappa_p > 0.0) || !(kappa_p < 1.0)) {
        throw InvalidArgument("generator loss weights: kappa > 0 and kappa_p in (0, 1) required");
    }
}

GeneratorModel make_generator(const GeneratorConfig& config, std::uint64_t seed)
{
    config.validate();
    namespace L = nn::layers;
    const std::size_t d = config.embedding, h = config.mouth_h, w = config.mouth_w;
    const std::size_t conv_len = (config.window - 16) / 8 + 1;

    nn::Sequential audio, video, fc, deconv, disc;
    audio.add(L::conv1d(1, 8, 16, 8)).add(L::relu()).add(L::dense(8 * conv_len, d));
    video.add(L::conv2d(1, 4, 3, 2, 1)).add(L::relu()).add(L::dense(4 * (h / 2) * (w / 2), d));
    fc.add(L::dense(2 * d, 8 * (h / 4) * (w / 4))).add(L::relu());
    deconv.add(L::deconv2d(8, 8, 4, 2, 1)).add(L::relu()).add(L::deconv2d(8, 1, 4, 2, 1)).add(L::sigmoid());
    disc.add(L::conv2d(1, 4, 3, 2, 1)).add(L::relu()).add(L::dense(4 * (h / 2) * (w / 2), 1)).add(L::sigmoid());

    Rng rng(split_seed(seed, {0x6E4}));
    for (auto* net : {&audio, &video, &fc, &deconv, &disc}) {
        net->initialize(rng);
    }
    Model m;
    m.config = config;
    m.params.add(Model::kAudioProcessor, std::move(audio));
    m.params.add(Model::kVideoProcessor, std::move(video));
    m.params.add(Model::kHeadFc, std::move(fc));
    m.params.add(Model::kHeadDeconv, std::move(deconv));
    m.params.add(Model::kDiscriminator, std::move(disc));
    return m;
}

Tensor mouth_crop(const media::Frame& frame, const media::MouthRegion& mouth)
{
    if (mouth.y0 + mouth.h > frame.height || mouth.x0 + mouth.w > frame.width) {
        throw InvalidArgument("mouth region leaves the frame");
    }
    Tensor t({1, mouth.h, mouth.w});
    for (std::size_t y = 0; y < mouth.h; ++y) {
        for (std::size_t x = 0; x < mouth.w; ++x) {
            t[y * mouth.w + x] = frame(mouth.y0 + y, mouth.x0 + x);
        }
    }
    return t;
}

namespace {

void check_mouth(const Model& m, const media::MouthRegion& mouth)
{
    if (mouth.h != m.config.mouth_h || mouth.w != m.config.mouth_w) {
        throw InvalidArgument("mouth region size differs from the generator configuration");
    }
}

Tensor audio_input(const Model& m, std::span<const double> window)
{
    if (window.size() > m.config.window) {
        throw InvalidArgument("audio window longer than " + std::to_string(m.config.window) + " samples");
    }
    Tensor x({1, m.config.window});
    std::copy(window.begin(), window.end(), x.data());
    return x;
}

std::vector<double> to_vector(const Tensor& t) { return t.vector(); }

Tensor head_forward(const Model& m, std::span<const double> v, std::span<const double> a, Tape* fc_tape,
                    Tape* deconv_tape)
{
    const std::size_t d = m.config.embedding;
    if (v.size() != d || a.size() != d) {
        throw InvalidArgument("generator head: embedding length mismatch");
    }
    Tensor in({2 * d});
    std::copy(v.begin(), v.end(), in.data());
    std::copy(a.begin(), a.end(), in.data() + d);
    const Tensor h = m.params.forward(Model::kHeadFc, in, fc_tape);
    return m.params.forward(Model::kHeadDeconv, h.reshaped({8, m.config.mouth_h / 4, m.config.mouth_w / 4}),
                            deconv_tape);
}

void paste(media::Frame& frame, const Tensor& patch, const media::MouthRegion& mouth)
{
    for (std::size_t y = 0; y < mouth.h; ++y) {
        for (std::size_t x = 0; x < mouth.w; ++x) {
            frame(mouth.y0 + y, mouth.x0 + x) = patch[y * mouth.w + x];
        }
    }
}

double clamp_d(double d) { return std::clamp(d, kDiscriminatorClamp, 1.0 - kDiscriminatorClamp); }

} // namespace

std::vector<double> audio_embedding(const GeneratorModel& model, std::span<const double> window)
{
    return to_vector(model.params.forward(Model::kAudioProcessor, audio_input(model, window)));
}

std::vector<double> video_embedding(const GeneratorModel& model, const media::Frame& frame,
                                    const media::MouthRegion& mouth)
{
    check_mouth(model, mouth);
    return to_vector(model.params.forward(Model::kVideoProcessor, mouth_crop(frame, mouth)));
}

Embeddings embed(const GeneratorModel& model, const media::VideoClip& video, const media::AudioWaveform& audio,
                 const media::MouthRegion& mouth)
{
    if (media::frame_count(audio, video.fps) != video.length()) {
        throw InvalidArgument("embed: audio spans " + std::to_string(media::frame_count(audio, video.fps)) +
                              " frame windows but the video has " + std::to_string(video.length()) + " frames");
    }
    Embeddings e;
    for (std::size_t t = 0; t < video.length(); ++t) {
        e.video.push_back(video_embedding(model, video.frames[t], mouth));
        e.audio.push_back(audio_embedding(model, media::frame_window(audio, t, video.fps).samples));
    }
    return e;
}

double p_sync(std::span<const double> v, std::span<const double> a, double kappa)
{
    if (v.size() != a.size()) {
        throw InvalidArgument("p_sync: embedding lengths differ");
    }
    if (!(kappa > 0.0)) {
        throw InvalidArgument("p_sync: kappa must be positive");
    }
    const double dotp = std::inner_product(v.begin(), v.end(), a.begin(), 0.0);
    const double nv = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    const double na = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
    return std::clamp(dotp / std::max(nv * na, kappa), -1.0, 1.0);
}

void p_sync_gradient(std::span<const double> v, std::span<const double> a, double kappa, std::vector<double>* dv,
                     std::vector<double>* da)
{
    if (v.size() != a.size()) {
        throw InvalidArgument("p_sync: embedding lengths differ");
    }
    const double dotp = std::inner_product(v.begin(), v.end(), a.begin(), 0.0);
    const double vv = std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
    const double aa = std::inner_product(a.begin(), a.end(), a.begin(), 0.0);
    const double nv = std::sqrt(vv), na = std::sqrt(aa);
    const std::size_t n = v.size();
    if (dv) {
        dv->assign(n, 0.0);
    }
    if (da) {
        da->assign(n, 0.0);
    }
    if (nv * na > kappa) {
        const double den = nv * na;
        for (std::size_t i = 0; i < n; ++i) {
            if (dv) {
                (*dv)[i] = a[i] / den - dotp * v[i] / (vv * den);
            }
            if (da) {
                (*da)[i] = v[i] / den - dotp * a[i] / (aa * den);
            }
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            if (dv) {
                (*dv)[i] = a[i] / kappa;
            }
            if (da) {
                (*da)[i] = v[i] / kappa;
            }
        }
    }
}

double sync_loss(std::span<const double> p, double kappa_p)
{
    if (p.empty()) {
        throw InvalidArgument("sync_loss: no frames");
    }
    double s = 0.0;
    for (double v : p) {
        s -= std::log(std::clamp(v, kappa_p, 1.0));
    }
    return s / static_cast<double>(p.size());
}

std::vector<double> sync_loss_gradient(std::span<const double> p, double kappa_p)
{
    std::vector<double> g(p.size(), 0.0);
    const auto n = static_cast<double>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > kappa_p && p[i] < 1.0) {
            g[i] = -1.0 / (p[i] * n);
        }
    }
    return g;
}

namespace {

void check_pair(const media::VideoClip& a, const media::VideoClip& b)
{
    if (a.length() != b.length() || a.length() == 0) {
        throw InvalidArgument("recon_loss: clips differ in length or are empty");
    }
    for (std::size_t t = 0; t < a.length(); ++t) {
        if (a.frames[t].height != b.frames[t].height || a.frames[t].width != b.frames[t].width) {
            throw InvalidArgument("recon_loss: frame shapes differ");
        }
    }
}

} // namespace

double recon_loss(const media::VideoClip& reference, const media::VideoClip& generated)
{
    check_pair(reference, generated);
    double s = 0.0;
    for (std::size_t t = 0; t < reference.length(); ++t) {
        for (std::size_t i = 0; i < reference.frames[t].pixels.size(); ++i) {
            s += std::abs(reference.frames[t].pixels[i] - generated.frames[t].pixels[i]);
        }
    }
    return s / static_cast<double>(reference.length());
}

std::vector<std::vector<double>> recon_loss_gradient(const media::VideoClip& reference,
                                                     const media::VideoClip& generated)
{
    check_pair(reference, generated);
    const auto T = static_cast<double>(reference.length());
    std::vector<std::vector<double>> g(reference.length());
    for (std::size_t t = 0; t < reference.length(); ++t) {
        g[t].resize(reference.frames[t].pixels.size());
        for (std::size_t i = 0; i < g[t].size(); ++i) {
            const double d = generated.frames[t].pixels[i] - reference.frames[t].pixels[i];
            g[t][i] = (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0) / T;
        }
    }
    return g;
}

double gan_loss(std::span<const double> d_outputs)
{
    if (d_outputs.empty()) {
        throw InvalidArgument("gan_loss: no frames");
    }
    double s = 0.0;
    for (double d : d_outputs) {
        s += std::log(1.0 - clamp_d(d));
    }
    return s / static_cast<double>(d_outputs.size());
}

std::vector<double> gan_loss_gradient(std::span<const double> d_outputs)
{
    std::vector<double> g(d_outputs.size(), 0.0);
    const auto n = static_cast<double>(d_outputs.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = d_outputs[i];
        if (d > kDiscriminatorClamp && d < 1.0 - kDiscriminatorClamp) {
            g[i] = -1.0 / ((1.0 - d) * n);
        }
    }
    return g;
}

double discriminate(const GeneratorModel& model, const Tensor& patch)
{
    return model.params.forward(Model::kDiscriminator, patch)[0];
}

double gan_loss(const GeneratorModel& model, const media::VideoClip& generated, const media::MouthRegion& mouth)
{
    check_mouth(model, mouth);
    std::vector<double> d;
    for (const auto& f : generated.frames) {
        d.push_back(discriminate(model, mouth_crop(f, mouth)));
    }
    return gan_loss(d);
}

double total_gen_loss(double recon, double sync, double gan, const GenLossWeights& weights)
{
    weights.validate();
    return (1.0 - weights.w_s - weights.w_g) * recon + weights.w_s * sync + weights.w_g * gan;
}

Tensor generate_patch(const GeneratorModel& model, std::span<const double> video_emb,
                      std::span<const double> audio_emb)
{
    return head_forward(model, video_emb, audio_emb, nullptr, nullptr);
}

media::VideoClip generate(const GeneratorModel& model, const media::VideoClip& cached,
                          const media::AudioWaveform& audio, const media::MouthRegion& mouth)
{
    if (cached.frames.empty()) {
        throw MissingReference("generate: no cached video frame at the receiver");
    }
    check_mouth(model, mouth);
    const auto& ref = cached.frames.back();
    const auto v = video_embedding(model, ref, mouth);
    media::VideoClip out;
    out.width = ref.width;
    out.height = ref.height;
    out.fps = cached.fps;
    out.peak = cached.peak;
    const std::size_t T = media::frame_count(audio, cached.fps);
    for (std::size_t t = 0; t < T; ++t) {
        const auto a = audio_embedding(model, media::frame_window(audio, t, cached.fps).samples);
        media::Frame f = ref;
        paste(f, head_forward(model, v, a, nullptr, nullptr), mouth);
        out.frames.push_back(std::move(f));
    }
    return out;
}

PatchLoss patch_objective(const GeneratorModel& model, const Tensor& patch, const Tensor& target,
                          std::span<const double> audio_emb, const GenLossWeights& weights, Tensor* d_patch)
{
    weights.validate();
    if (patch.shape() != target.shape()) {
        throw InvalidArgument("patch_objective: patch and target differ in shape");
    }
    const auto& ps = model.params;
    const double w_r = 1.0 - weights.w_s - weights.w_g;
    PatchLoss r;
    Tensor d(patch.shape());
    for (std::size_t i = 0; i < patch.size(); ++i) {
        const double diff = patch[i] - target[i];
        r.recon += std::abs(diff);
        d[i] = w_r * (diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0);
    }

    Tape tv;
    const Tensor v = ps.forward(Model::kVideoProcessor, patch, &tv);
    const std::vector<double> P{p_sync(v.values(), audio_emb, weights.kappa)};
    r.sync = sync_loss(P, weights.kappa_p);

    Tape td;
    const Tensor D = ps.forward(Model::kDiscriminator, patch, &td);
    const std::vector<double> Dv{D[0]};
    r.gan = gan_loss(Dv);
    r.total = total_gen_loss(r.recon, r.sync, r.gan, weights);

    if (d_patch) {
        std::vector<double> dv;
        p_sync_gradient(v.values(), audio_emb, weights.kappa, &dv, nullptr);
        const double dP = sync_loss_gradient(P, weights.kappa_p)[0];
        Tensor gv(v.shape());
        for (std::size_t i = 0; i < dv.size(); ++i) {
            gv[i] = weights.w_s * dP * dv[i];
        }
        const Tensor from_sync = ps.backward(Model::kVideoProcessor, tv, gv, nullptr);
        const Tensor from_gan =
            ps.backward(Model::kDiscriminator, td, Tensor({1}, {weights.w_g * gan_loss_gradient(Dv)[0]}), nullptr);
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] += from_sync[i] + from_gan[i];
        }
        *d_patch = std::move(d);
    }
    return r;
}

LipClip make_lip_clip(std::uint64_t seed, double seconds, media::MotionProfile profile)
{
    auto [clip, scene] = media::synth_scene(seed, seconds, 25.0, 8000.0, profile);
    return {std::move(clip), media::mouth_region(scene.face, scene.width, scene.height)};
}

// Training --------------------------------------------------------------------------------

namespace {

nn::Gradients only(const nn::Gradients& g, std::initializer_list<std::string_view> nets)
{
    nn::Gradients out;
    for (const auto& [name, t] : g) {
        for (auto n : nets) {
            if (name.size() > n.size() && name.compare(0, n.size(), n) == 0 && name[n.size()] == '.') {
                out.emplace(name, t);
            }
        }
    }
    return out;
}

double bce(double p, double label, double* dp)
{
    const double q = clamp_d(p);
    if (dp) {
        *dp = (p > kDiscriminatorClamp && p < 1.0 - kDiscriminatorClamp) ? (-label / q + (1.0 - label) / (1.0 - q)) : 0.0;
    }
    return -(label * std::log(q) + (1.0 - label) * std::log(1.0 - q));
}

struct Sample {
    std::size_t clip, t;
};

struct ClipData {
    std::vector<Tensor> windows; // [1, window]
    std::vector<Tensor> crops;   // [1, h, w]
};

// BCE on (P + 1) / 2 for a matched (label 1) or mismatched (label 0) pair.
double sync_pair_step(const Model& m, const Tensor& crop, const Tensor& window, double label, double kappa,
                      nn::Gradients& g)
{
    Tape tv, ta;
    const Tensor v = m.params.forward(Model::kVideoProcessor, crop, &tv);
    const Tensor a = m.params.forward(Model::kAudioProcessor, window, &ta);
    const double P = p_sync(v.values(), a.values(), kappa);
    double dp = 0.0;
    const double loss = bce(0.5 * (P + 1.0), label, &dp);
    std::vector<double> dv, da;
    p_sync_gradient(v.values(), a.values(), kappa, &dv, &da);
    Tensor gv(v.shape()), ga(a.shape());
    for (std::size_t i = 0; i < dv.size(); ++i) {
        gv[i] = 0.5 * dp * dv[i];
        ga[i] = 0.5 * dp * da[i];
    }
    m.params.backward(Model::kVideoProcessor, tv, gv, &g);
    m.params.backward(Model::kAudioProcessor, ta, ga, &g);
    return loss;
}

} // namespace

GeneratorTrainLog train_generator(GeneratorModel& model, std::span<const LipClip> clips,
                                  const GeneratorTrainOptions& options)
{
    if (clips.empty()) {
        throw InvalidArgument("train_generator: empty training set");
    }
    options.weights.validate();
    const auto& w = options.weights;
    auto& ps = model.params;
    for (const auto& n : ps.names()) {
        ps.set_frozen(n, false);
    }

    std::vector<ClipData> data(clips.size());
    std::vector<Sample> samples;
    for (std::size_t c = 0; c < clips.size(); ++c) {
        const auto& lc = clips[c];
        check_mouth(model, lc.mouth);
        const auto& v = lc.clip.video;
        const std::size_t T = std::min(v.length(), media::frame_count(lc.clip.audio, v.fps));
        if (T < 2) {
            throw InvalidArgument("train_generator: clips need at least two frames");
        }
        for (std::size_t t = 0; t < T; ++t) {
            data[c].windows.push_back(audio_input(model, media::frame_window(lc.clip.audio, t, v.fps).samples));
            data[c].crops.push_back(mouth_crop(v.frames[t], lc.mouth));
            samples.push_back({c, t});
        }
    }

    GeneratorTrainLog log;
    Rng rng(split_seed(options.seed, {0x6E4, 1}));

    // Sync expert: audio and video processors.
    {
        nn::Adam adam(options.lr);
        for (std::size_t epoch = 0; epoch < options.sync_epochs; ++epoch) {
            std::shuffle(samples.begin(), samples.end(), rng);
            double total = 0.0;
            for (const auto& s : samples) {
                const auto& d = data[s.clip];
                std::size_t other = rng() % (d.windows.size() - 1);
                other += other >= s.t ? 1 : 0;
                nn::Gradients g;
                total += sync_pair_step(model, d.crops[s.t], d.windows[s.t], 1.0, w.kappa, g);
                total += sync_pair_step(model, d.crops[s.t], d.windows[other], 0.0, w.kappa, g);
                adam.step(ps, only(g, {Model::kAudioProcessor, Model::kVideoProcessor}));
            }
            log.sync_expert.losses.push_back(total / (2.0 * static_cast<double>(samples.size())));
            check_divergence(log.sync_expert.final(), log.sync_expert.initial(), "sync expert training");
        }
    }
    ps.set_frozen(Model::kAudioProcessor, true);
    ps.set_frozen(Model::kVideoProcessor, true);

    // Embeddings are fixed from here on.
    std::vector<std::vector<std::vector<double>>> v_emb(clips.size()), a_emb(clips.size());
    for (std::size_t c = 0; c < clips.size(); ++c) {
        for (std::size_t t = 0; t < data[c].crops.size(); ++t) {
            v_emb[c].push_back(to_vector(ps.forward(Model::kVideoProcessor, data[c].crops[t])));
            a_emb[c].push_back(to_vector(ps.forward(Model::kAudioProcessor, data[c].windows[t])));
        }
    }

    nn::Adam adam_g(options.lr), adam_d(options.lr);
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(samples.begin(), samples.end(), rng);
        double recon_sum = 0.0, total_sum = 0.0;
        std::size_t correct = 0;
        for (const auto& s : samples) {
            const auto& lc = clips[s.clip];
            const std::size_t ref = rng() % data[s.clip].crops.size();
            const auto& target = lc.clip.video.frames[s.t];
            const auto& reference = lc.clip.video.frames[ref];

            Tape t_fc, t_dc;
            const Tensor patch = head_forward(model, v_emb[s.clip][ref], a_emb[s.clip][s.t], &t_fc, &t_dc);

            // Discriminator step on the detached patch.
            {
                nn::Gradients gd;
                Tape tr, tf;
                const Tensor dr = ps.forward(Model::kDiscriminator, data[s.clip].crops[s.t], &tr);
                const Tensor df = ps.forward(Model::kDiscriminator, patch, &tf);
                double gr = 0.0, gf = 0.0;
                bce(dr[0], 1.0, &gr);
                bce(df[0], 0.0, &gf);
                correct += (dr[0] > 0.5 ? 1 : 0) + (df[0] < 0.5 ? 1 : 0);
                ps.backward(Model::kDiscriminator, tr, Tensor({1}, {gr}), &gd);
                ps.backward(Model::kDiscriminator, tf, Tensor({1}, {gf}), &gd);
                adam_d.step(ps, only(gd, {Model::kDiscriminator}));
            }

            // Generator step; pixels outside the mouth add a constant to L_recon.
            double outside = 0.0;
            for (std::size_t y = 0; y < target.height; ++y) {
                for (std::size_t x = 0; x < target.width; ++x) {
                    if (!lc.mouth.contains(y, x)) {
                        outside += std::abs(reference(y, x) - target(y, x));
                    }
                }
            }
            Tensor d_patch;
            const auto pl = patch_objective(model, patch, data[s.clip].crops[s.t], a_emb[s.clip][s.t], w, &d_patch);
            const double recon = pl.recon + outside;
            const double sync = pl.sync, gan = pl.gan;
            nn::Gradients g;
            const Tensor d_hidden = ps.backward(Model::kHeadDeconv, t_dc, d_patch, &g);
            ps.backward(Model::kHeadFc, t_fc, d_hidden.reshaped({d_hidden.size()}), &g);
            adam_g.step(ps, only(g, {Model::kHeadFc, Model::kHeadDeconv}));

            recon_sum += recon;
            total_sum += total_gen_loss(recon, sync, gan, w);
        }
        const auto n = static_cast<double>(samples.size());
        log.recon.losses.push_back(recon_sum / n);
        log.total.losses.push_back(total_sum / n);
        log.discriminator_accuracy.push_back(static_cast<double>(correct) / (2.0 * n));
        check_divergence(log.recon.final(), log.recon.initial(), "generator training");
    }
    ps.set_frozen(Model::kAudioProcessor, false);
    ps.set_frozen(Model::kVideoProcessor, false);
    return log;
}

double sync_correlation(const GeneratorModel& model, const media::VideoClip& cached,
                        const media::AudioWaveform& driving, const media::AudioWaveform& reference,
                        const media::MouthRegion& mouth)
{
    const auto out = generate(model, cached, driving, mouth);
    const auto rms = media::frame_rms(reference, cached.fps, out.length());
    std::vector<double> dark;
    for (const auto& f : out.frames) {
        dark.push_back(media::mouth_darkness(f, mouth));
    }
    try {
        return metrics::pearson(dark, rms);
    } catch (const UndefinedReference&) {
        return 0.0;
    }
}

double sync_correlation(const GeneratorModel& model, const LipClip& clip)
{
    media::VideoClip cached = clip.clip.video;
    cached.frames.resize(1);
    return sync_correlation(model, cached, clip.clip.audio, clip.clip.audio, clip.mouth);
}

} // namespace w2v::gen
