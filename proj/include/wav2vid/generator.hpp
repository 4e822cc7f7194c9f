#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "wav2vid/media.hpp"
#include "wav2vid/nn.hpp"
#include "wav2vid/training.hpp"

namespace w2v::gen {

struct GeneratorConfig {
    std::size_t embedding = 16; // d
    std::size_t window = 320;   // audio samples per frame window (shorter windows are zero-padded)
    std::size_t mouth_h = 12;
    std::size_t mouth_w = 16;

    void validate() const;
};

struct GenLossWeights {
    double w_s = 0.3;
    double w_g = 0.07;
    double kappa = 1e-6;   // floor of the P_sync denominator
    double kappa_p = 1e-3; // clamp floor of P_sync before the log

    /// Throws InvalidArgument unless w_s, w_g >= 0, w_s + w_g <= 1, kappa > 0 and kappa_p in (0, 1).
    void validate() const;
};

/// One (video, audio) embedding pair per frame.
struct Embeddings {
    std::vector<std::vector<double>> video;
    std::vector<std::vector<double>> audio;

    std::size_t size() const noexcept { return video.size(); }
};

/// Audio and video processors form the sync expert; the head (fc + deconv)
/// paints the mouth patch; the discriminator judges mouth patches.
struct GeneratorModel {
    GeneratorConfig config;
    nn::ParameterSet params;

    static constexpr const char* kAudioProcessor = "audio_processor";
    static constexpr const char* kVideoProcessor = "video_processor";
    static constexpr const char* kHeadFc = "head_fc";
    static constexpr const char* kHeadDeconv = "head_deconv";
    static constexpr const char* kDiscriminator = "discriminator";
};

GeneratorModel make_generator(const GeneratorConfig& config, std::uint64_t seed);

/// Mouth crop as a [1, h, w] tensor. Throws InvalidArgument if the region leaves the frame.
nn::Tensor mouth_crop(const media::Frame& frame, const media::MouthRegion& mouth);

std::vector<double> audio_embedding(const GeneratorModel& model, std::span<const double> window);
std::vector<double> video_embedding(const GeneratorModel& model, const media::Frame& frame,
                                    const media::MouthRegion& mouth);

/// Per-frame embeddings of a clip whose audio spans exactly as many frame windows as it has frames.
Embeddings embed(const GeneratorModel& model, const media::VideoClip& video, const media::AudioWaveform& audio,
                 const media::MouthRegion& mouth);

/// (v . a) / max(|v| |a|, kappa).
double p_sync(std::span<const double> v, std::span<const double> a, double kappa);
/// d p_sync / d v and d p_sync / d a.
void p_sync_gradient(std::span<const double> v, std::span<const double> a, double kappa, std::vector<double>* dv,
                     std::vector<double>* da);

/// Mean of -ln(clamp(P, kappa_p, 1)).
double sync_loss(std::span<const double> p, double kappa_p);
std::vector<double> sync_loss_gradient(std::span<const double> p, double kappa_p);

/// Mean over frames of the per-frame L1 distance.
double recon_loss(const media::VideoClip& reference, const media::VideoClip& generated);
/// d recon_loss / d generated pixels (sign of the difference, 0 on ties), per frame.
std::vector<std::vector<double>> recon_loss_gradient(const media::VideoClip& reference,
                                                     const media::VideoClip& generated);

inline constexpr double kDiscriminatorClamp = 1e-6;

/// Mean of ln(1 - clamp(D, 1e-6, 1 - 1e-6)) over discriminator outputs.
double gan_loss(std::span<const double> d_outputs);
std::vector<double> gan_loss_gradient(std::span<const double> d_outputs);
/// gan_loss over the mouth patches of a generated clip.
double gan_loss(const GeneratorModel& model, const media::VideoClip& generated, const media::MouthRegion& mouth);

/// D(patch) in (0, 1) for a [1, h, w] mouth patch.
double discriminate(const GeneratorModel& model, const nn::Tensor& patch);

/// (1 - w_s - w_g) recon + w_s sync + w_g gan.
double total_gen_loss(double recon, double sync, double gan, const GenLossWeights& weights);

struct PatchLoss {
    double recon = 0.0; // L1 inside the patch
    double sync = 0.0;
    double gan = 0.0;
    double total = 0.0;
};

/// Composite loss of one generated mouth patch against its target patch, with
/// d total / d patch. The sync term embeds the patch with the video processor.
PatchLoss patch_objective(const GeneratorModel& model, const nn::Tensor& patch, const nn::Tensor& target,
                          std::span<const double> audio_emb, const GenLossWeights& weights, nn::Tensor* d_patch);

/// Mouth patch for (reference video embedding, audio embedding).
nn::Tensor generate_patch(const GeneratorModel& model, std::span<const double> video_emb,
                          std::span<const double> audio_emb);

/// One frame per audio frame window (round(duration * fps)); every frame is the
/// last cached frame with its mouth region repainted from the audio.
/// Throws MissingReference when the cache is empty.
media::VideoClip generate(const GeneratorModel& model, const media::VideoClip& cached,
                          const media::AudioWaveform& audio, const media::MouthRegion& mouth);

/// Synthetic clip with its ground-truth mouth placement.
struct LipClip {
    media::AudiovisualClip clip;
    media::MouthRegion mouth;
};

LipClip make_lip_clip(std::uint64_t seed, double seconds, media::MotionProfile profile = media::MotionProfile::static_pose);

struct GeneratorTrainOptions {
    std::size_t sync_epochs = 40; // sync expert pretraining passes
    std::size_t epochs = 200;     // generator/discriminator passes
    double lr = 2e-3;
    std::uint64_t seed = 0;
    GenLossWeights weights{};
};

struct GeneratorTrainLog {
    TrainLog sync_expert;                       // per-epoch BCE of the sync expert
    TrainLog recon;                             // per-epoch mean L_recon
    TrainLog total;                             // per-epoch mean L_psi
    std::vector<double> discriminator_accuracy; // per epoch, measured during discriminator steps
};

/// Trains the sync expert first, then alternates discriminator and generator steps.
GeneratorTrainLog train_generator(GeneratorModel& model, std::span<const LipClip> clips,
                                  const GeneratorTrainOptions& options);

/// Pearson r between generated mouth darkness and frame-window audio RMS when the
/// clip's audio drives generation from its first frame; 0 when either series is constant.
double sync_correlation(const GeneratorModel& model, const LipClip& clip);
double sync_correlation(const GeneratorModel& model, const media::VideoClip& cached,
                        const media::AudioWaveform& driving, const media::AudioWaveform& reference,
                        const media::MouthRegion& mouth);

} // namespace w2v::gen
