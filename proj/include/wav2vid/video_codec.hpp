#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "wav2vid/channel.hpp"
#include "wav2vid/media.hpp"
#include "wav2vid/nn.hpp"
#include "wav2vid/training.hpp"

namespace w2v::video {

struct VideoCodecConfig {
    std::size_t channels = 8;       // feature channels of y_t
    std::size_t hidden = 16;        // hidden channels of extractor and synthesizer
    std::size_t block = 8;          // motion block size in pixels
    std::size_t search_radius = 4;  // motion search radius in pixels
    double quant_scale = 16.0;      // y_bar = round_half_even(quant_scale * y)
    double eta_y = 0.25;            // symbols per bit of feature information
    double eta_x = 1.0;             // symbols per bit of motion information
    std::size_t prior_hidden = 16;  // hidden width of the feature entropy predictor

    static constexpr std::size_t kDownsample = 4;
    static constexpr std::size_t kHyperPool = 4;

    void validate() const;
};

/// Per-block displacement (pixels); block (r, c) is entry r * cols + c.
/// Convention: v_t(p) ~ v_{t-1}(p - m).
struct MotionField {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t block = 0;
    std::vector<int> dy;
    std::vector<int> dx;

    std::size_t size() const noexcept { return dy.size(); }
    bool all_zero() const noexcept;

    friend bool operator==(const MotionField&, const MotionField&) = default;
};

MotionField zero_motion(std::size_t height, std::size_t width, std::size_t block);

/// Exhaustive SAD block matching. Candidates whose reference block leaves the
/// frame are skipped; ties go to the smallest |m|^2, then to the smallest (dy, dx).
MotionField estimate_motion(const media::Frame& current, const media::Frame& previous, std::size_t block,
                            std::size_t search_radius);

/// Nearest-neighbour warp of a [C, h, w] feature map; displacements are divided
/// by `downsample` and rounded, and source positions clamp to the edge.
nn::Tensor warp_features(const nn::Tensor& previous, const MotionField& motion, std::size_t downsample);

// Entropy model ----------------------------------------------------------------

inline constexpr double kMinProbability = 1.0 / 65536.0;

/// P(value) under a Laplace(mu, scale) discretized to unit bins, floored at 2^-16.
double laplace_probability(double value, double mu, double scale);

struct LaplaceNll {
    double bits = 0.0;
    double d_mu = 0.0;    // d bits / d mu
    double d_scale = 0.0; // d bits / d scale
};
/// -log2 of laplace_probability with its derivatives (zero on the floor).
LaplaceNll laplace_nll(double value, double mu, double scale);

struct RateAllocation {
    double nll_y = 0.0;  // bits
    double nll_m = 0.0;
    double raw_y = 0.0;  // eta_y * nll_y before the ceiling
    double raw_m = 0.0;
    std::size_t k_y = 0;
    std::size_t k_m = 0;
    double eta_y = 0.0;
    double eta_x = 0.0;

    std::size_t k() const noexcept { return k_y + k_m; }
};

/// k^y = ceil(eta_y * sum -log2 p_y), k^m likewise; probabilities below 2^-16 are raised to it.
RateAllocation rate_allocate(std::span<const double> p_y, std::span<const double> p_m, double eta_y, double eta_x);

// Codec ------------------------------------------------------------------------

struct FrameSemantics {
    nn::Tensor y;          // [C, H/4, W/4]
    nn::Tensor y_bar;      // integers
    nn::Tensor hyper_y;    // rounded 4x4 average of y_bar
    MotionField motion;    // zero for the intra frame
    std::vector<int> m_bar;    // interleaved (dy, dx) per block, empty for the intra frame
    std::vector<int> hyper_m;  // rounded mean (dy, dx)
    nn::Tensor context;    // c_t (zero for the intra frame)
    RateAllocation rate;
    bool intra = false;
};

struct VideoSemantics {
    std::vector<FrameSemantics> frames;
};

/// Symbols of one frame: k_y feature symbols then k_m motion symbols, scaled by 1/gain.
struct FrameBlock {
    std::size_t k_y = 0;
    std::size_t k_m = 0;
    std::vector<double> symbols;
    double gain = 0.0; // side information

    std::size_t k() const noexcept { return k_y + k_m; }
};

struct VideoStream {
    std::vector<FrameBlock> frames;
    double snr_db = 10.0; // channel state estimate the projection conditioned on
    std::size_t width = 0;
    std::size_t height = 0;
    double fps = 25.0;
    double peak = 1.0;

    std::size_t total_symbols() const noexcept;
    /// Side information units: k^y, k^m and gain per frame.
    std::size_t side_units() const noexcept { return 3 * frames.size(); }
    std::vector<double> concatenated() const;
};

/// Extractor, synthesizer and refiner are frozen; projection, inverse and the
/// two entropy predictors are fine-tuned.
struct VideoCodecModel {
    VideoCodecConfig config;
    nn::ParameterSet params;

    static constexpr const char* kExtractor = "extractor";
    static constexpr const char* kSynthesizer = "synthesizer";
    static constexpr const char* kRefiner = "refiner";
    static constexpr const char* kProjection = "projection";
    static constexpr const char* kInverse = "inverse";
    static constexpr const char* kPriorY = "prior_y";
    static constexpr const char* kPriorM = "prior_m";
};

VideoCodecModel make_video_codec(const VideoCodecConfig& config, std::uint64_t seed);

nn::Tensor extract_features(const VideoCodecModel& model, const media::Frame& frame);
/// Synthesizer output clamped to [0, peak].
media::Frame synthesize_frame(const VideoCodecModel& model, const nn::Tensor& features, double peak);

/// c_t = w + R(w) with w the warped previous features and R the refiner.
nn::Tensor build_context(const VideoCodecModel& model, const nn::Tensor& previous, const MotionField& motion);

/// Per-element probabilities of y_bar given the context, hyperprior and causal neighbours.
std::vector<double> feature_probabilities(const VideoCodecModel& model, const nn::Tensor& y_bar,
                                          const nn::Tensor& context);
/// Per-element probabilities of m_bar given its hyperprior and the previous block.
std::vector<double> motion_probabilities(const VideoCodecModel& model, std::span<const int> m_bar);

std::pair<VideoStream, VideoSemantics> video_encode(const VideoCodecModel& model, const media::VideoClip& clip,
                                                    double snr_estimate_db);

/// Decoder state carried between frames.
struct DecoderState {
    nn::Tensor features; // last decoded y_hat; empty before the first frame
};

/// Every block must hold exactly k_y + k_m symbols (FramingError otherwise).
media::VideoClip video_decode(const VideoCodecModel& model, const VideoStream& received,
                              DecoderState* state = nullptr);

/// Sends the concatenated stream through one channel use; k and gains ride as side information.
VideoStream transmit_stream(const VideoStream& sent, const channel::ChannelConfig& channel);

/// u32 frame count, then per frame u32 k^y, u32 k^m and k float32 symbols.
std::vector<std::uint8_t> encode_framing(const VideoStream& stream);
/// Parses the framing into `into` (gains and metadata are kept). Throws FramingError.
void decode_framing(std::span<const std::uint8_t> bytes, VideoStream& into);

/// sum k_t - |lambda| * PSNR(reference, decoded), PSNR capped at 100 dB.
double rd_loss(const media::VideoClip& reference, const media::VideoClip& decoded, const VideoStream& stream,
               double lambda);

/// Differentiable surrogate of rd_loss for a single frame set: rate measured as
/// eta * NLL before the ceiling. d/d decoded pixels is written to `d_decoded`.
double rd_objective(const media::VideoClip& reference, const media::VideoClip& decoded, double raw_rate,
                    double lambda, std::vector<std::vector<double>>* d_decoded);

struct VideoTrainOptions {
    std::size_t autoencoder_steps = 1500;
    std::size_t refiner_steps = 300;
    std::size_t prior_steps = 300;
    double lr = 2e-3;
    std::uint64_t seed = 0;
};

/// Offline stage: autoencoder, PCA initialisation of the projection, refiner
/// and entropy predictors, in that order. Returns the autoencoder MSE history.
TrainLog pretrain_video(VideoCodecModel& model, std::span<const media::VideoClip> clips,
                        const VideoTrainOptions& options);

struct VideoFineTuneOptions {
    double lambda = 32.0;
    double lr = 1e-3;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
};

/// Online stage: updates projection, inverse and entropy predictors through the
/// channel, minimising the rate surrogate minus |lambda| PSNR. Returns per-epoch
/// mean rd_loss.
TrainLog fine_tune_video(VideoCodecModel& model, std::span<const media::VideoClip> clips,
                         const channel::ChannelConfig& channel, const VideoFineTuneOptions& options);

} // namespace w2v::video
