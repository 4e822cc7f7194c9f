#include "wav2vid/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "wav2vid/errors.hpp"
#include "wav2vid/metrics.hpp"
#include "wav2vid/rng.hpp"

namespace w2v::harness {

namespace {

using nlohmann::json;

// Seed path tags.
constexpr std::uint64_t kAudioData = 0xA0D1;
constexpr std::uint64_t kVideoData = 0x71DE;
constexpr std::uint64_t kLipData = 0x11B5;
constexpr std::uint64_t kOnline = 0x0411;
constexpr std::uint64_t kAudioChannel = 0xA;
constexpr std::uint64_t kVideoChannel = 0xB;
constexpr std::uint64_t kSweep = 0x5EE9;
constexpr std::uint64_t kCompare = 0xC0;

[[noreturn]] void rethrow_with(const std::string& context)
{
    try {
        throw;
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(context + ": " + e.what());
    } catch (const MissingReference& e) {
        throw MissingReference(context + ": " + e.what());
    } catch (const FramingError& e) {
        throw FramingError(context + ": " + e.what());
    } catch (const UndefinedReference& e) {
        throw UndefinedReference(context + ": " + e.what());
    } catch (const NumericalFailure& e) {
        throw NumericalFailure(context + ": " + e.what());
    } catch (const EstimationFailure& e) {
        throw EstimationFailure(context + ": " + e.what());
    } catch (const ContractViolation& e) {
        throw ContractViolation(context + ": " + e.what());
    } catch (const TrainingFailure& e) {
        throw TrainingFailure(context + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(context + ": " + e.what());
    } catch (const MalformedHeader& e) {
        throw MalformedHeader(context + ": " + e.what());
    } catch (const TruncatedPayload& e) {
        throw TruncatedPayload(context + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(context + ": " + e.what());
    } catch (const Error& e) {
        throw Error(context + ": " + e.what());
    }
}

// Config parsing -------------------------------------------------------------------

class Object {
public:
    Object(const json& j, std::string path, std::initializer_list<std::string_view> keys) : j_(j), path_(std::move(path))
    {
        if (!j.is_object()) {
            throw ConfigError(path_ + ": expected an object");
        }
        for (const auto& [k, v] : j.items()) {
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
                throw ConfigError(path_ + ": unknown key '" + k + "'");
            }
        }
    }

    const json* find(std::string_view key) const
    {
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }
    std::string path(std::string_view key) const { return path_ + "." + std::string(key); }

    void read(std::string_view key, double& out) const
    {
        if (const auto* v = find(key)) {
            if (!v->is_number()) {
                throw ConfigError(path(key) + ": expected a number");
            }
            out = v->get<double>();
        }
    }
    void read(std::string_view key, std::uint64_t& out) const
    {
        if (const auto* v = find(key)) {
            if (!v->is_number_unsigned()) {
                throw ConfigError(path(key) + ": expected a non-negative integer");
            }
            out = v->get<std::uint64_t>();
        }
    }
    void read(std::string_view key, std::string& out) const
    {
        if (const auto* v = find(key)) {
            if (!v->is_string()) {
                throw ConfigError(path(key) + ": expected a string");
            }
            out = v->get<std::string>();
        }
    }
    void read(std::string_view key, media::MotionProfile& out) const
    {
        if (const auto* v = find(key)) {
            const std::string s = v->is_string() ? v->get<std::string>() : "";
            if (s == "static") {
                out = media::MotionProfile::static_pose;
            } else if (s == "gentle") {
                out = media::MotionProfile::gentle;
            } else if (s == "turning") {
                out = media::MotionProfile::turning;
            } else {
                throw ConfigError(path(key) + ": expected one of static, gentle, turning");
            }
        }
    }
    void read(std::string_view key, channel::Fading& out) const
    {
        if (const auto* v = find(key)) {
            const std::string s = v->is_string() ? v->get<std::string>() : "";
            if (s == "rayleigh") {
                out = channel::Fading::rayleigh;
            } else if (s == "awgn") {
                out = channel::Fading::awgn_only;
            } else if (s == "ideal") {
                out = channel::Fading::ideal;
            } else {
                throw ConfigError(path(key) + ": expected one of rayleigh, awgn, ideal");
            }
        }
    }
    void read(std::string_view key, std::vector<double>& out) const
    {
        if (const auto* v = find(key)) {
            if (!v->is_array()) {
                throw ConfigError(path(key) + ": expected an array of numbers");
            }
            out.clear();
            for (const auto& x : *v) {
                if (!x.is_number()) {
                    throw ConfigError(path(key) + ": expected an array of numbers");
                }
                out.push_back(x.get<double>());
            }
        }
    }

private:
    const json& j_;
    std::string path_;
};

RateRow parse_rate(const json& j, const std::string& path)
{
    const Object o(j, path, {"video", "audio", "side", "unit"});
    RateRow r;
    o.read("video", r.video);
    o.read("audio", r.audio);
    o.read("side", r.side);
    o.read("unit", r.unit);
    return r;
}

void require(bool ok, const std::string& what)
{
    if (!ok) {
        throw ConfigError(what);
    }
}

bool integral(double x)
{
    return std::abs(x - std::round(x)) <= 1e-9 * std::max(1.0, std::abs(x));
}

// Pipeline helpers -----------------------------------------------------------------

std::vector<double> metered_pass(std::size_t& counter, ChannelMeter& meter, std::span<const double> symbols,
                                 const channel::ChannelConfig& cfg)
{
    counter += symbols.size();
    ++meter.passes;
    return channel::pass(symbols, cfg);
}

std::vector<double> darkness_series(const media::VideoClip& clip, const media::MouthRegion& mouth)
{
    std::vector<double> d;
    d.reserve(clip.length());
    for (const auto& f : clip.frames) {
        d.push_back(media::mouth_darkness(f, mouth));
    }
    return d;
}

double correlation_or_zero(std::span<const double> a, std::span<const double> b)
{
    try {
        return metrics::pearson(a, b);
    } catch (const UndefinedReference&) {
        return 0.0;
    }
}

const metrics::ProxyFeatureNet& proxy_net(std::size_t width, std::size_t height)
{
    static const metrics::ProxyFeatureNet standard(64, 64);
    if (width == standard.width() && height == standard.height()) {
        return standard;
    }
    thread_local std::vector<std::unique_ptr<metrics::ProxyFeatureNet>> others;
    for (const auto& n : others) {
        if (n->width() == width && n->height() == height) {
            return *n;
        }
    }
    others.push_back(std::make_unique<metrics::ProxyFeatureNet>(width, height));
    return *others.back();
}

double clip_fid(const media::VideoClip& reference, const media::VideoClip& generated)
{
    const auto& net = proxy_net(reference.width, reference.height);
    return metrics::fid(metrics::feature_stats(net, reference), metrics::feature_stats(net, generated));
}

} // namespace

// Config -----------------------------------------------------------------------------

void PipelineConfig::validate() const
{
    require(scene.duration_s > 0.0, "scene.duration_s must be positive");
    require(scene.fps == 25.0 && scene.sample_rate == 8000.0,
            "scene: the desk-scale models run at 25 fps and 8000 Hz");
    require(clip_seconds > 0.0, "clip_seconds must be positive");
    require(integral(scene.duration_s / clip_seconds), "clip_seconds must divide scene.duration_s");
    require(integral(clip_seconds * scene.fps) && integral(clip_seconds * scene.sample_rate),
            "clip_seconds must span whole frames and samples");
    require(epsilon >= 0.0 && std::isfinite(epsilon), "epsilon must be a non-negative number of degrees");
    require(!channels.empty(), "channels must not be empty");
    for (const auto& c : channels) {
        require(c.block_size >= 1, "channels.block_size must be positive");
        require(!std::isnan(c.snr_db), "channels.snr_db must be a number");
    }
    require(std::isfinite(codec.lambda), "codec.lambda must be finite");
    require(codec.eta_y > 0.0 && codec.eta_x > 0.0, "codec.eta_y and codec.eta_x must be positive");
    try {
        audio::AudioCodecConfig a;
        a.compression = codec.compression;
        a.validate();
        weights.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    const auto& t = training;
    require(t.audio_clips >= 1 && t.video_clips >= 1 && t.generator_clips >= 1,
            "training: every data set needs at least one clip");
    require(t.finetune_audio_clips >= 1 && t.finetune_audio_clips <= t.audio_clips,
            "training.finetune_audio_clips must be in [1, audio_clips]");
    require(t.finetune_video_clips >= 1 && t.finetune_video_clips <= t.video_clips,
            "training.finetune_video_clips must be in [1, video_clips]");
    require(t.audio_clip_s > 0.0 && t.video_clip_s > 0.0 && t.generator_clip_s > 0.0,
            "training clip lengths must be positive");
    require(t.finetune_round >= 1, "training.finetune_round must be positive");
    require(t.snr_lo_db <= t.snr_hi_db, "training.snr_lo_db must not exceed snr_hi_db");
    for (const RateRow* r : {&rates.traditional, &rates.dvst, &rates.txt2vid}) {
        require(r->video >= 0.0 && r->audio >= 0.0 && r->side >= 0.0, "rates must be non-negative");
    }
    require(rates.traditional.video + rates.traditional.audio + rates.traditional.side > 0.0,
            "rates.traditional must be positive");
    if (rates.wav2vid) {
        require(rates.wav2vid->video >= 0.0 && rates.wav2vid->audio >= 0.0 && rates.wav2vid->side >= 0.0,
                "rates must be non-negative");
    }
    require(!sweep.snr_db.empty(), "sweep.snr_db must not be empty");
    require(sweep.repeats >= 1, "sweep.repeats must be positive");
    require(compare.seeds >= 1, "compare.seeds must be positive");
    require(compare.seconds > clip_seconds && integral(compare.seconds / clip_seconds),
            "compare.seconds must be a multiple of clip_seconds above one clip");
    require(compare.warp_factor >= 1.0, "compare.warp_factor must be at least 1");
    require(compare.jitter >= 0.0 && compare.jitter < 0.5, "compare.jitter must be in [0, 0.5)");
}

PipelineConfig parse_config(std::string_view text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    PipelineConfig cfg;
    const Object root(j, "config",
                      {"scene", "clip_seconds", "epsilon", "channels", "codec", "generator", "training", "rates",
                       "sweep", "compare", "seed", "output_dir"});
    if (const auto* s = root.find("scene")) {
        const Object o(*s, "scene", {"seed", "duration_s", "fps", "sample_rate", "profile"});
        o.read("seed", cfg.scene.seed);
        o.read("duration_s", cfg.scene.duration_s);
        o.read("fps", cfg.scene.fps);
        o.read("sample_rate", cfg.scene.sample_rate);
        o.read("profile", cfg.scene.profile);
    }
    root.read("clip_seconds", cfg.clip_seconds);
    root.read("epsilon", cfg.epsilon);
    if (const auto* c = root.find("channels")) {
        if (!c->is_array()) {
            throw ConfigError("config.channels: expected an array");
        }
        cfg.channels.clear();
        for (std::size_t i = 0; i < c->size(); ++i) {
            const Object o((*c)[i], "config.channels[" + std::to_string(i) + "]",
                           {"snr_db", "fading", "block_size", "seed"});
            channel::ChannelConfig ch;
            std::uint64_t block = ch.block_size;
            o.read("snr_db", ch.snr_db);
            o.read("fading", ch.fading);
            o.read("block_size", block);
            o.read("seed", ch.seed);
            ch.block_size = block;
            cfg.channels.push_back(ch);
        }
    }
    if (const auto* c = root.find("codec")) {
        const Object o(*c, "codec", {"lambda", "eta_y", "eta_x", "compression"});
        std::uint64_t compression = cfg.codec.compression;
        o.read("lambda", cfg.codec.lambda);
        o.read("eta_y", cfg.codec.eta_y);
        o.read("eta_x", cfg.codec.eta_x);
        o.read("compression", compression);
        cfg.codec.compression = compression;
    }
    if (const auto* g = root.find("generator")) {
        const Object o(*g, "generator", {"w_s", "w_g", "kappa", "kappa_p"});
        o.read("w_s", cfg.weights.w_s);
        o.read("w_g", cfg.weights.w_g);
        o.read("kappa", cfg.weights.kappa);
        o.read("kappa_p", cfg.weights.kappa_p);
    }
    if (const auto* t = root.find("training")) {
        const Object o(*t, "training",
                       {"audio_clips", "audio_clip_s", "audio_epochs", "video_clips", "video_clip_s",
                        "video_autoencoder_steps", "video_refiner_steps", "video_prior_steps", "generator_clips",
                        "generator_clip_s", "generator_sync_epochs", "generator_epochs", "finetune_audio_clips",
                        "finetune_video_clips", "finetune_round", "finetune_max_epochs", "snr_lo_db", "snr_hi_db"});
        auto& s = cfg.training;
        for (auto [key, field] : std::initializer_list<std::pair<std::string_view, std::size_t*>>{
                 {"audio_clips", &s.audio_clips},
                 {"audio_epochs", &s.audio_epochs},
                 {"video_clips", &s.video_clips},
                 {"video_autoencoder_steps", &s.video_autoencoder_steps},
                 {"video_refiner_steps", &s.video_refiner_steps},
                 {"video_prior_steps", &s.video_prior_steps},
                 {"generator_clips", &s.generator_clips},
                 {"generator_sync_epochs", &s.generator_sync_epochs},
                 {"generator_epochs", &s.generator_epochs},
                 {"finetune_audio_clips", &s.finetune_audio_clips},
                 {"finetune_video_clips", &s.finetune_video_clips},
                 {"finetune_round", &s.finetune_round},
                 {"finetune_max_epochs", &s.finetune_max_epochs}}) {
            std::uint64_t v = *field;
            o.read(key, v);
            *field = v;
        }
        o.read("audio_clip_s", s.audio_clip_s);
        o.read("video_clip_s", s.video_clip_s);
        o.read("generator_clip_s", s.generator_clip_s);
        o.read("snr_lo_db", s.snr_lo_db);
        o.read("snr_hi_db", s.snr_hi_db);
    }
    if (const auto* r = root.find("rates")) {
        const Object o(*r, "rates", {"traditional", "dvst", "txt2vid", "wav2vid"});
        if (const auto* v = o.find("traditional")) {
            cfg.rates.traditional = parse_rate(*v, "rates.traditional");
        }
        if (const auto* v = o.find("dvst")) {
            cfg.rates.dvst = parse_rate(*v, "rates.dvst");
        }
        if (const auto* v = o.find("txt2vid")) {
            cfg.rates.txt2vid = parse_rate(*v, "rates.txt2vid");
        }
        if (const auto* v = o.find("wav2vid")) {
            cfg.rates.wav2vid = parse_rate(*v, "rates.wav2vid");
        }
    }
    if (const auto* s = root.find("sweep")) {
        const Object o(*s, "sweep", {"snr_db", "repeats"});
        std::uint64_t repeats = cfg.sweep.repeats;
        o.read("snr_db", cfg.sweep.snr_db);
        o.read("repeats", repeats);
        cfg.sweep.repeats = repeats;
    }
    if (const auto* c = root.find("compare")) {
        const Object o(*c, "compare", {"seeds", "first_seed", "seconds", "snr_db", "warp_factor", "jitter", "profile"});
        std::uint64_t seeds = cfg.compare.seeds;
        o.read("seeds", seeds);
        cfg.compare.seeds = seeds;
        o.read("first_seed", cfg.compare.first_seed);
        o.read("seconds", cfg.compare.seconds);
        o.read("snr_db", cfg.compare.snr_db);
        o.read("warp_factor", cfg.compare.warp_factor);
        o.read("jitter", cfg.compare.jitter);
        o.read("profile", cfg.compare.profile);
    }
    root.read("seed", cfg.seed);
    std::string out = cfg.output_dir.string();
    root.read("output_dir", out);
    cfg.output_dir = out;
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// Models -----------------------------------------------------------------------------

Models make_models(const PipelineConfig& cfg)
{
    audio::AudioCodecConfig a;
    a.compression = cfg.codec.compression;
    video::VideoCodecConfig v;
    v.eta_y = cfg.codec.eta_y;
    v.eta_x = cfg.codec.eta_x;
    return Models{audio::make_audio_codec(a, split_seed(cfg.seed, {kAudioData})),
                  video::make_video_codec(v, split_seed(cfg.seed, {kVideoData})),
                  gen::make_generator({}, split_seed(cfg.seed, {kLipData}))};
}

void save_models(const Models& models, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    nn::save_checkpoint(models.audio.params, dir / "audio.w2vp");
    nn::save_checkpoint(models.video.params, dir / "video.w2vp");
    nn::save_checkpoint(models.generator.params, dir / "generator.w2vp");
}

Models load_models(const PipelineConfig& cfg, const std::filesystem::path& dir)
{
    auto m = make_models(cfg);
    nn::load_checkpoint(m.audio.params, dir / "audio.w2vp");
    nn::load_checkpoint(m.video.params, dir / "video.w2vp");
    nn::load_checkpoint(m.generator.params, dir / "generator.w2vp");
    return m;
}

TrainedModels train_all(const PipelineConfig& cfg)
{
    cfg.validate();
    const auto& t = cfg.training;
    const auto& sc = cfg.scene;
    Models m = make_models(cfg);
    TrainReport rep;

    std::vector<media::AudioWaveform> audio_clips;
    for (std::size_t i = 0; i < t.audio_clips; ++i) {
        audio_clips.push_back(media::synth_scene(split_seed(cfg.seed, {kAudioData, i}), t.audio_clip_s, sc.fps,
                                                 sc.sample_rate, media::MotionProfile::static_pose)
                                  .first.audio);
    }
    std::vector<media::VideoClip> video_clips;
    for (std::size_t i = 0; i < t.video_clips; ++i) {
        const auto profile = i % 2 == 0 ? media::MotionProfile::turning : media::MotionProfile::gentle;
        video_clips.push_back(
            media::synth_scene(split_seed(cfg.seed, {kVideoData, i}), t.video_clip_s, sc.fps, sc.sample_rate, profile)
                .first.video);
    }
    std::vector<gen::LipClip> lip_clips;
    for (std::size_t i = 0; i < t.generator_clips; ++i) {
        lip_clips.push_back(gen::make_lip_clip(split_seed(cfg.seed, {kLipData, i}), t.generator_clip_s));
    }

    // Stage 1: offline pretraining.
    audio::AudioTrainOptions ao;
    ao.epochs = t.audio_epochs;
    ao.seed = split_seed(cfg.seed, {kAudioData});
    rep.audio_pretrain = audio::pretrain_audio(m.audio, audio_clips, ao);
    if (!rep.audio_pretrain.empty()) {
        check_divergence(rep.audio_pretrain.final(), rep.audio_pretrain.initial(), "audio pretraining");
    }

    video::VideoTrainOptions vo;
    vo.autoencoder_steps = t.video_autoencoder_steps;
    vo.refiner_steps = t.video_refiner_steps;
    vo.prior_steps = t.video_prior_steps;
    vo.seed = split_seed(cfg.seed, {kVideoData});
    rep.video_pretrain = video::pretrain_video(m.video, video_clips, vo);
    if (!rep.video_pretrain.empty()) {
        check_divergence(rep.video_pretrain.final(), rep.video_pretrain.initial(), "video pretraining");
    }

    gen::GeneratorTrainOptions go;
    go.sync_epochs = t.generator_sync_epochs;
    go.epochs = t.generator_epochs;
    go.seed = split_seed(cfg.seed, {kLipData});
    go.weights = cfg.weights;
    rep.generator = gen::train_generator(m.generator, lip_clips, go);
    if (!rep.generator.total.empty()) {
        check_divergence(rep.generator.total.final(), rep.generator.total.initial(), "generator training");
    }

    TrainedModels out{m, m, {}};

    // Stage 2: online fine-tuning of the coding modules through the channel.
    const std::span<const media::AudioWaveform> ft_audio(audio_clips.data(), t.finetune_audio_clips);
    const std::span<const media::VideoClip> ft_video(video_clips.data(), t.finetune_video_clips);
    channel::ChannelConfig ch = cfg.channels.front();
    ch.snr_db = 0.5 * (t.snr_lo_db + t.snr_hi_db);
    ch.seed = split_seed(cfg.seed, {kOnline});
    while (rep.audio_finetune.losses.size() < t.finetune_max_epochs) {
        const std::size_t n = std::min(t.finetune_round, t.finetune_max_epochs - rep.audio_finetune.losses.size());

        audio::FineTuneOptions fa;
        fa.epochs = n;
        fa.seed = split_seed(cfg.seed, {kOnline, kAudioChannel});
        fa.sample_snr = true;
        fa.snr_lo_db = t.snr_lo_db;
        fa.snr_hi_db = t.snr_hi_db;
        const auto la = audio::fine_tune_audio(m.audio, ft_audio, ch, fa);

        video::VideoFineTuneOptions fv;
        fv.lambda = cfg.codec.lambda;
        fv.epochs = n;
        fv.seed = split_seed(cfg.seed, {kOnline, kVideoChannel});
        const auto lv = video::fine_tune_video(m.video, ft_video, ch, fv);

        for (double l : la.losses) {
            rep.audio_finetune.losses.push_back(l);
            check_divergence(l, rep.audio_finetune.initial(), "audio fine-tuning");
        }
        for (double l : lv.losses) {
            rep.video_finetune.losses.push_back(l);
            check_divergence(l, rep.video_finetune.initial(), "video fine-tuning");
        }
        ++rep.rounds;
        if (converged(rep.audio_finetune.losses) && converged(rep.video_finetune.losses)) {
            rep.converged = true;
            break;
        }
    }
    out.models = std::move(m);
    out.report = std::move(rep);
    return out;
}

// Pipeline ---------------------------------------------------------------------------

Scene make_scene(const SceneConfig& cfg)
{
    auto [clip, params] = media::synth_scene(cfg.seed, cfg.duration_s, cfg.fps, cfg.sample_rate, cfg.profile);
    const auto mouth = media::mouth_region(params.face, params.width, params.height);
    return Scene{std::move(clip), std::move(params), mouth};
}

std::vector<double> gate_scores(const PipelineConfig& cfg, const Scene& scene)
{
    std::vector<double> scores;
    for (const auto& span : media::segment(scene.clip, cfg.clip_seconds)) {
        std::vector<pose::Pose> poses;
        for (std::size_t t = span.first_frame; t < span.first_frame + span.frames; ++t) {
            poses.push_back(pose::estimate_pose(media::project_landmarks(scene.params, t), scene.params.landmarks));
        }
        scores.push_back(pose::hd_pose_est(poses));
    }
    return scores;
}

media::AudiovisualClip PipelineResult::output() const
{
    return media::concatenate(outputs);
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const Models& models, const Scene& scene,
                            const channel::ChannelConfig& channel, GateMode mode)
{
    const auto spans = media::segment(scene.clip, cfg.clip_seconds);
    const auto scores = mode == GateMode::gated ? gate_scores(cfg, scene) : std::vector<double>{};
    PipelineResult r;
    media::VideoClip cache;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        try {
            const auto part = media::slice(scene.clip, spans[i]);
            ClipTransmission tx;
            tx.gate = mode == GateMode::always ? pose::GateDecision{true, 0.0, 0.0}
                                               : pose::gate(scores[i], cfg.epsilon, i == 0);

            auto sem = audio::audio_encode(models.audio, part.audio);
            auto ac = channel;
            ac.seed = split_seed(channel.seed, {i, kAudioChannel});
            tx.audio_symbols = sem.size();
            tx.audio_side = 1;
            sem.symbols = metered_pass(r.meter.audio, r.meter, sem.symbols, ac);
            auto a_hat = audio::audio_decode(models.audio, sem);

            media::VideoClip v_hat;
            if (tx.gate.transmit_video) {
                auto stream = video::video_encode(models.video, part.video, channel.snr_db).first;
                const auto sent = stream.concatenated();
                tx.video_symbols = stream.total_symbols();
                tx.video_side = stream.side_units();
                if (!sent.empty()) {
                    auto vc = channel;
                    vc.seed = split_seed(channel.seed, {i, kVideoChannel});
                    const auto rx = metered_pass(r.meter.video, r.meter, sent, vc);
                    std::size_t off = 0;
                    for (auto& f : stream.frames) {
                        std::copy(rx.begin() + static_cast<std::ptrdiff_t>(off),
                                  rx.begin() + static_cast<std::ptrdiff_t>(off + f.k()), f.symbols.begin());
                        off += f.k();
                    }
                }
                v_hat = video::video_decode(models.video, stream);
                cache = v_hat;
                r.video_streams.push_back(std::move(stream));
            } else {
                v_hat = gen::generate(models.generator, cache, a_hat, scene.mouth);
            }
            r.outputs.push_back(media::AudiovisualClip{std::move(a_hat), std::move(v_hat)});
            r.transmissions.push_back(tx);
            r.caches.push_back(cache);
        } catch (const Error&) {
            rethrow_with("clip " + std::to_string(i));
        }
    }
    return r;
}

// Accounting ----------------------------------------------------------------------------

const AccountingRow& AccountingReport::row(std::string_view method) const
{
    for (const auto& r : rows) {
        if (r.method == method) {
            return r;
        }
    }
    throw InvalidArgument("no accounting row '" + std::string(method) + "'");
}

AccountingReport table2_accounting(const PipelineConfig& cfg, std::span<const ClipTransmission> transmissions,
                                   double duration_s)
{
    auto declared = [&](std::string method, const RateRow& rate) {
        AccountingRow r{std::move(method), rate.video * duration_s, rate.audio * duration_s, rate.side * duration_s,
                        0.0, rate.unit, 0.0};
        r.total_units = r.video_units + r.audio_units + r.side_units;
        return r;
    };
    AccountingReport rep;
    rep.rows.push_back(declared("traditional", cfg.rates.traditional));
    rep.rows.push_back(declared("dvst", cfg.rates.dvst));
    rep.rows.push_back(declared("txt2vid", cfg.rates.txt2vid));
    if (cfg.rates.wav2vid) {
        rep.rows.push_back(declared("wav2vid", *cfg.rates.wav2vid));
    } else {
        AccountingRow w{"wav2vid", 0.0, 0.0, 0.0, 0.0, "symbol", 0.0};
        for (const auto& t : transmissions) {
            w.video_units += static_cast<double>(t.video_symbols);
            w.audio_units += static_cast<double>(t.audio_symbols);
            w.side_units += static_cast<double>(t.video_side + t.audio_side);
        }
        w.total_units = w.video_units + w.audio_units + w.side_units;
        rep.rows.push_back(w);
    }
    const double traditional = rep.rows.front().total_units;
    for (auto& r : rep.rows) {
        r.reduction_vs_traditional = 1.0 - r.total_units / traditional;
    }
    return rep;
}

// Sweep -----------------------------------------------------------------------------------

QualityMetrics evaluate(const media::AudiovisualClip& reference, const media::AudiovisualClip& output)
{
    QualityMetrics q;
    q.nrmse = metrics::nrmse(reference.audio.samples, output.audio.samples);
    q.segsnr = metrics::segmental_snr(reference.audio.samples, output.audio.samples);
    q.psnr = metrics::psnr(reference.video, output.video);
    q.msssim = metrics::ms_ssim(reference.video, output.video);
    q.fid = clip_fid(reference.video, output.video);
    return q;
}

SweepReport snr_sweep(const PipelineConfig& cfg, const Models& models, const Scene& scene,
                      std::span<const double> snr_db, std::size_t repeats)
{
    if (repeats == 0 || snr_db.empty()) {
        throw InvalidArgument("snr_sweep: need at least one SNR point and one repeat");
    }
    std::vector<double> points(snr_db.begin(), snr_db.end());
    std::sort(points.begin(), points.end());
    SweepReport rep;
    rep.repeats = repeats;
    constexpr std::size_t kMetrics = 5;
    auto fields = [](QualityMetrics& q) {
        return std::array<double*, kMetrics>{&q.nrmse, &q.segsnr, &q.psnr, &q.msssim, &q.fid};
    };
    for (double snr : points) {
        std::vector<QualityMetrics> runs;
        for (std::size_t k = 0; k < repeats; ++k) {
            try {
                auto ch = cfg.channels.front();
                ch.snr_db = snr;
                ch.seed = split_seed(cfg.seed, {kSweep, k});
                runs.push_back(evaluate(scene.clip, run_pipeline(cfg, models, scene, ch).output()));
            } catch (const Error&) {
                rethrow_with("snr " + format_real(snr) + " dB, repeat " + std::to_string(k));
            }
        }
        SweepRow row;
        row.snr_db = snr;
        const auto mean = fields(row.mean), sd = fields(row.std);
        for (std::size_t f = 0; f < kMetrics; ++f) {
            double s = 0.0;
            for (auto& q : runs) {
                s += *fields(q)[f];
            }
            *mean[f] = s / static_cast<double>(repeats);
            double v = 0.0;
            for (auto& q : runs) {
                v += (*fields(q)[f] - *mean[f]) * (*fields(q)[f] - *mean[f]);
            }
            *sd[f] = repeats > 1 ? std::sqrt(v / static_cast<double>(repeats - 1)) : 0.0;
        }
        rep.rows.push_back(row);
    }
    return rep;
}

// Txt2Vid surrogate -----------------------------------------------------------------------

media::AudioWaveform time_warp(const media::AudioWaveform& audio, double factor, double jitter, std::uint64_t seed)
{
    if (!(factor >= 1.0) || !(jitter >= 0.0 && jitter < 0.5)) {
        throw InvalidArgument("time_warp: need factor >= 1 and jitter in [0, 0.5)");
    }
    if (factor == 1.0) {
        return audio;
    }
    const double spacing = 0.25;
    const double duration = audio.duration();
    const auto knots = static_cast<std::size_t>(std::ceil(duration / spacing)) + 1;
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> src(knots);
    for (std::size_t k = 0; k < knots; ++k) {
        const double jit = k == 0 ? 0.0 : (factor - 1.0) * jitter * spacing * u(rng);
        src[k] = factor * spacing * static_cast<double>(k) + jit;
    }
    media::AudioWaveform out;
    out.sample_rate = audio.sample_rate;
    out.samples.assign(audio.length(), 0.0);
    const double last = static_cast<double>(audio.length() - 1);
    for (std::size_t j = 0; j < out.samples.size(); ++j) {
        const double t = static_cast<double>(j) / audio.sample_rate;
        const auto k = std::min(static_cast<std::size_t>(t / spacing), knots - 2);
        const double a = (t - spacing * static_cast<double>(k)) / spacing;
        const double p = (src[k] + a * (src[k + 1] - src[k])) * audio.sample_rate;
        if (p > last) {
            continue;
        }
        const auto i0 = static_cast<std::size_t>(p);
        const double frac = p - static_cast<double>(i0);
        out.samples[j] = frac == 0.0 ? audio.samples[i0]
                                     : (1.0 - frac) * audio.samples[i0] + frac * audio.samples[i0 + 1];
    }
    return out;
}

CompareReport compare_wav2vid_vs_txt2vid_audio(const PipelineConfig& cfg, const Models& models)
{
    const auto& c = cfg.compare;
    CompareReport rep;
    for (std::size_t s = 0; s < c.seeds; ++s) {
        SceneConfig sc = cfg.scene;
        sc.seed = c.first_seed + s;
        sc.duration_s = c.seconds;
        sc.profile = c.profile;
        const auto scene = make_scene(sc);
        auto ch = cfg.channels.front();
        ch.snr_db = c.snr_db;
        ch.seed = split_seed(cfg.seed, {kCompare, s});
        const auto run = run_pipeline(cfg, models, scene, ch);
        const auto spans = media::segment(scene.clip, cfg.clip_seconds);

        media::VideoClip reference, synced, warped;
        reference.width = synced.width = warped.width = scene.clip.video.width;
        reference.height = synced.height = warped.height = scene.clip.video.height;
        std::vector<double> rms;
        for (std::size_t i = 0; i < spans.size(); ++i) {
            if (run.transmissions[i].gate.transmit_video) {
                continue;
            }
            const auto part = media::slice(scene.clip, spans[i]);
            const auto& a_hat = run.outputs[i].audio;
            const auto surrogate = time_warp(a_hat, c.warp_factor, c.jitter, split_seed(sc.seed, {kCompare, i}));
            const auto v_warp = gen::generate(models.generator, run.caches[i - 1], surrogate, scene.mouth);
            const auto r = media::frame_rms(part.audio, part.video.fps, part.video.length());
            rms.insert(rms.end(), r.begin(), r.end());
            for (std::size_t t = 0; t < part.video.length(); ++t) {
                reference.frames.push_back(part.video.frames[t]);
                synced.frames.push_back(run.outputs[i].video.frames[t]);
                warped.frames.push_back(v_warp.frames[t]);
            }
        }
        if (reference.length() < 2) {
            throw InvalidArgument("compare: the gate left fewer than two frames to generation");
        }
        CompareRow row;
        row.seed = sc.seed;
        row.wav2vid_r = correlation_or_zero(darkness_series(synced, scene.mouth), rms);
        row.surrogate_r = correlation_or_zero(darkness_series(warped, scene.mouth), rms);
        row.wav2vid_fid = clip_fid(reference, synced);
        row.surrogate_fid = clip_fid(reference, warped);
        rep.rows.push_back(row);
    }
    const auto n = static_cast<double>(rep.rows.size());
    for (const auto& r : rep.rows) {
        rep.mean.wav2vid_r += r.wav2vid_r / n;
        rep.mean.surrogate_r += r.surrogate_r / n;
        rep.mean.wav2vid_fid += r.wav2vid_fid / n;
        rep.mean.surrogate_fid += r.surrogate_fid / n;
    }
    return rep;
}

// Reporting -------------------------------------------------------------------------------

std::string format_real(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

std::string sweep_csv(const SweepReport& report)
{
    std::string s = "snr_db,nrmse_mean,nrmse_std,segsnr_mean,segsnr_std,psnr_mean,psnr_std,msssim_mean,msssim_std,"
                    "fid_mean,fid_std\n";
    for (const auto& r : report.rows) {
        for (double v : {r.snr_db, r.mean.nrmse, r.std.nrmse, r.mean.segsnr, r.std.segsnr, r.mean.psnr, r.std.psnr,
                         r.mean.msssim, r.std.msssim, r.mean.fid}) {
            s += format_real(v) + ",";
        }
        s += format_real(r.std.fid) + "\n";
    }
    return s;
}

std::string accounting_csv(const AccountingReport& report)
{
    std::string s = "method,video_units,audio_units,side_units,total_units,unit,reduction_vs_traditional\n";
    for (const auto& r : report.rows) {
        s += r.method + "," + format_real(r.video_units) + "," + format_real(r.audio_units) + "," +
             format_real(r.side_units) + "," + format_real(r.total_units) + "," + r.unit + "," +
             format_real(r.reduction_vs_traditional) + "\n";
    }
    return s;
}

std::string compare_csv(const CompareReport& report)
{
    std::string s = "seed,wav2vid_sync_r,surrogate_sync_r,wav2vid_fid,surrogate_fid\n";
    auto line = [&](const std::string& seed, const CompareRow& r) {
        s += seed + "," + format_real(r.wav2vid_r) + "," + format_real(r.surrogate_r) + "," +
             format_real(r.wav2vid_fid) + "," + format_real(r.surrogate_fid) + "\n";
    };
    for (const auto& r : report.rows) {
        line(std::to_string(r.seed), r);
    }
    line("mean", report.mean);
    return s;
}

void write_text(const std::filesystem::path& path, std::string_view text)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
}

} // namespace w2v::harness
