#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wav2vid/audio_codec.hpp"
#include "wav2vid/channel.hpp"
#include "wav2vid/generator.hpp"
#include "wav2vid/media.hpp"
#include "wav2vid/pose_gate.hpp"
#include "wav2vid/training.hpp"
#include "wav2vid/video_codec.hpp"

namespace w2v::harness {

// Configuration ----------------------------------------------------------------

struct SceneConfig {
    std::uint64_t seed = 1;
    double duration_s = 18.0;
    double fps = 25.0;
    double sample_rate = 8000.0;
    media::MotionProfile profile = media::MotionProfile::gentle;
};

struct CodecSettings {
    double lambda = 32.0;
    double eta_y = 0.25;
    double eta_x = 1.0;
    std::size_t compression = 8;
};

struct TrainSettings {
    std::size_t audio_clips = 8;
    double audio_clip_s = 2.0;
    std::size_t audio_epochs = 60;
    std::size_t video_clips = 4;
    double video_clip_s = 1.0;
    std::size_t video_autoencoder_steps = 1500;
    std::size_t video_refiner_steps = 300;
    std::size_t video_prior_steps = 300;
    std::size_t generator_clips = 4;
    double generator_clip_s = 2.0;
    std::size_t generator_sync_epochs = 40;
    std::size_t generator_epochs = 200;
    std::size_t finetune_audio_clips = 4;
    std::size_t finetune_video_clips = 2;
    std::size_t finetune_round = 10;      // epochs per online round
    std::size_t finetune_max_epochs = 50; // cap on online epochs per codec
    double snr_lo_db = 0.0;               // online rounds draw their SNR from [lo, hi]
    double snr_hi_db = 20.0;
};

/// Declared per-second rate of one accounting row.
struct RateRow {
    double video = 0.0;
    double audio = 0.0;
    double side = 0.0;
    std::string unit = "symbol";
};

/// Defaults are the reference amounts for one 18 s video content, per second.
struct AccountingRates {
    RateRow traditional{15e6 / 18.0, 1e6 / 18.0, 0.0, "byte"};
    RateRow dvst{10e6 / 18.0, 1e6 / 18.0, 0.0, "symbol"};
    RateRow txt2vid{2.58e6 / 18.0, 0.0, 20e3 / 18.0, "symbol"}; // side carries the text
    std::optional<RateRow> wav2vid; // measured from the pipeline when absent
};

struct SweepSettings {
    std::vector<double> snr_db{0.0, 5.0, 10.0, 15.0, 20.0};
    std::size_t repeats = 20;
};

struct CompareSettings {
    std::size_t seeds = 10;
    std::uint64_t first_seed = 100;
    double seconds = 4.0;
    double snr_db = 10.0;
    double warp_factor = 1.3;
    double jitter = 0.3; // knot jitter as a fraction of the knot spacing
    media::MotionProfile profile = media::MotionProfile::static_pose;
};

struct PipelineConfig {
    SceneConfig scene;
    double clip_seconds = 1.0;
    double epsilon = pose::kDefaultEpsilon;
    std::vector<channel::ChannelConfig> channels{channel::ChannelConfig{}};
    CodecSettings codec;
    gen::GenLossWeights weights;
    TrainSettings training;
    AccountingRates rates;
    SweepSettings sweep;
    CompareSettings compare;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";

    /// Throws ConfigError on any violated invariant.
    void validate() const;
};

/// Parses a JSON config; absent keys keep their defaults, unknown keys and bad
/// values raise ConfigError.
PipelineConfig parse_config(std::string_view json);
PipelineConfig load_config(const std::filesystem::path& path);

// Models -----------------------------------------------------------------------

struct Models {
    audio::AudioCodecModel audio;
    video::VideoCodecModel video;
    gen::GeneratorModel generator;

    friend bool operator==(const Models& a, const Models& b)
    {
        return a.audio.params == b.audio.params && a.video.params == b.video.params &&
               a.generator.params == b.generator.params;
    }
};

/// Untrained models with the configured architecture.
Models make_models(const PipelineConfig& cfg);

/// audio.w2vp, video.w2vp and generator.w2vp inside `dir`.
void save_models(const Models& models, const std::filesystem::path& dir);
Models load_models(const PipelineConfig& cfg, const std::filesystem::path& dir);

struct TrainReport {
    TrainLog audio_pretrain;
    TrainLog video_pretrain;
    gen::GeneratorTrainLog generator;
    TrainLog audio_finetune; // per online epoch, concatenated over rounds
    TrainLog video_finetune;
    std::size_t rounds = 0;
    bool converged = false; // false when the epoch cap ended the online loop
};

struct TrainedModels {
    Models models;
    Models offline; // snapshot after stage 1
    TrainReport report;
};

/// Stage 1 pretrains the codecs and the generator offline; stage 2 fine-tunes
/// the coding modules through the channel in rounds until both codec losses
/// converge or the epoch cap is reached. Throws TrainingFailure on divergence.
TrainedModels train_all(const PipelineConfig& cfg);

// Pipeline ---------------------------------------------------------------------

struct Scene {
    media::AudiovisualClip clip;
    media::SceneParams params;
    media::MouthRegion mouth;
};

Scene make_scene(const SceneConfig& cfg);

enum class GateMode {
    gated,  // pose gate with the configured epsilon
    always, // dedicated always-transmit path (DVST)
};

/// Real symbols handed to the channel, by modality.
struct ChannelMeter {
    std::size_t video = 0;
    std::size_t audio = 0;
    std::size_t passes = 0;
};

struct ClipTransmission {
    pose::GateDecision gate;
    std::size_t video_symbols = 0;
    std::size_t video_side = 0;
    std::size_t audio_symbols = 0;
    std::size_t audio_side = 0; // the normalization gain
};

struct PipelineResult {
    std::vector<media::AudiovisualClip> outputs; // X_hat per clip
    std::vector<ClipTransmission> transmissions;
    std::vector<video::VideoStream> video_streams; // received streams of the transmitting clips
    std::vector<media::VideoClip> caches;          // receiver cache after each clip
    ChannelMeter meter;

    media::AudiovisualClip output() const;
};

/// Gate, encode, transmit, decode and generate every clip in order. Component
/// errors propagate with the clip index in the message.
PipelineResult run_pipeline(const PipelineConfig& cfg, const Models& models, const Scene& scene,
                            const channel::ChannelConfig& channel, GateMode mode = GateMode::gated);

/// Per-clip pose scores the gate sees (first clip included).
std::vector<double> gate_scores(const PipelineConfig& cfg, const Scene& scene);

// Accounting -------------------------------------------------------------------

struct AccountingRow {
    std::string method;
    double video_units = 0.0;
    double audio_units = 0.0;
    double side_units = 0.0;
    double total_units = 0.0;
    std::string unit;
    double reduction_vs_traditional = 0.0;
};

struct AccountingReport {
    std::vector<AccountingRow> rows; // traditional, dvst, txt2vid, wav2vid

    const AccountingRow& row(std::string_view method) const;
};

/// Baselines come from the declared per-second rates over `duration_s`; the
/// Wav2Vid row is measured from `transmissions` unless a rate is declared.
AccountingReport table2_accounting(const PipelineConfig& cfg, std::span<const ClipTransmission> transmissions,
                                   double duration_s);

// Sweep ------------------------------------------------------------------------

struct QualityMetrics {
    double nrmse = 0.0;
    double segsnr = 0.0;
    double psnr = 0.0;
    double msssim = 0.0;
    double fid = 0.0;
};

/// Metrics of a reconstruction against the ground-truth clip.
QualityMetrics evaluate(const media::AudiovisualClip& reference, const media::AudiovisualClip& output);

struct SweepRow {
    double snr_db = 0.0;
    QualityMetrics mean;
    QualityMetrics std; // sample standard deviation (0 for one repeat)
};

struct SweepReport {
    std::vector<SweepRow> rows; // sorted by SNR
    std::size_t repeats = 0;
};

/// Runs the pipeline at every SNR point with independent channel seeds per repeat.
SweepReport snr_sweep(const PipelineConfig& cfg, const Models& models, const Scene& scene,
                      std::span<const double> snr_db, std::size_t repeats);

// Txt2Vid surrogate --------------------------------------------------------------

/// Monotone piecewise-linear time warp with average rate `factor` and jittered
/// knots every 0.25 s; samples past the end of the source are silent. The
/// identity for factor 1.
media::AudioWaveform time_warp(const media::AudioWaveform& audio, double factor, double jitter, std::uint64_t seed);

struct CompareRow {
    std::uint64_t seed = 0;
    double wav2vid_r = 0.0;
    double surrogate_r = 0.0;
    double wav2vid_fid = 0.0;
    double surrogate_fid = 0.0;
};

struct CompareReport {
    std::vector<CompareRow> rows;
    CompareRow mean; // seed unused

    bool wav2vid_wins() const noexcept
    {
        return mean.wav2vid_r > mean.surrogate_r && mean.wav2vid_fid < mean.surrogate_fid;
    }
};

/// Drives the generator with the decoded audio and with its time-warped
/// surrogate on the clips the gate leaves to generation.
CompareReport compare_wav2vid_vs_txt2vid_audio(const PipelineConfig& cfg, const Models& models);

// Reporting --------------------------------------------------------------------

/// Fixed-format real with 6 significant digits.
std::string format_real(double x);

std::string sweep_csv(const SweepReport& report);
std::string accounting_csv(const AccountingReport& report);
std::string compare_csv(const CompareReport& report);
void write_text(const std::filesystem::path& path, std::string_view text);

} // namespace w2v::harness
