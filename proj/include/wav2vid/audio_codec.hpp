#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "wav2vid/channel.hpp"
#include "wav2vid/media.hpp"
#include "wav2vid/nn.hpp"
#include "wav2vid/training.hpp"

namespace w2v::audio {

struct AudioCodecConfig {
    std::size_t chunk = 320;      // samples per chunk; inputs are zero-padded to whole chunks
    std::size_t compression = 8;  // samples per symbol
    std::size_t blocks = 4;       // stride-2 conv blocks in the extractor (deconv blocks in the synthesizer)
    std::size_t width = 16;       // hidden channels

    /// Symbol channels at the aggregator output: 2^blocks / compression.
    std::size_t symbol_channels() const;
    void validate() const;
};

/// Power-normalized channel symbols for one waveform.
struct AudioSemantics {
    std::vector<double> symbols;
    std::size_t chunks = 0;
    std::size_t per_chunk = 0;  // symbols per chunk
    std::size_t samples = 0;    // original waveform length
    double gain = 1.0;          // RMS removed by normalization, sent as side information
    double sample_rate = 8000.0;

    std::size_t size() const noexcept { return symbols.size(); }
};

/// Extractor and synthesizer are the frozen groups; aggregator and decomposer are fine-tuned.
struct AudioCodecModel {
    AudioCodecConfig config;
    nn::ParameterSet params;

    static constexpr const char* kExtractor = "extractor";
    static constexpr const char* kAggregator = "aggregator";
    static constexpr const char* kDecomposer = "decomposer";
    static constexpr const char* kSynthesizer = "synthesizer";
};

AudioCodecModel make_audio_codec(const AudioCodecConfig& config, std::uint64_t seed);

AudioSemantics audio_encode(const AudioCodecModel& model, const media::AudioWaveform& audio);
/// Output has the original length and is clamped to [-1, 1].
media::AudioWaveform audio_decode(const AudioCodecModel& model, const AudioSemantics& received);

/// Sum (a - a_hat)^2 / sum a^2. Throws UndefinedReference for an all-zero reference.
double nrmse(std::span<const double> reference, std::span<const double> estimate);
/// d nrmse / d estimate.
std::vector<double> nrmse_gradient(std::span<const double> reference, std::span<const double> estimate);

struct AudioTrainOptions {
    double lr = 3e-3;
    std::size_t epochs = 60;
    std::size_t crops_per_epoch = 8;
    std::size_t crop_chunks = 5;  // crop length in chunks
    std::uint64_t seed = 0;
    // Channel used while training; pretraining runs noiseless when `through_channel` is false.
    bool through_channel = false;
    channel::ChannelConfig channel{};
    double snr_lo_db = 0.0;
    double snr_hi_db = 20.0;
};

/// Offline stage: trains every group noiselessly.
TrainLog pretrain_audio(AudioCodecModel& model, std::span<const media::AudioWaveform> clips,
                        const AudioTrainOptions& options);

/// Online stage: only aggregator and decomposer are updated, through the channel.
/// Per-epoch loss is the mean NRMSE over the clips at the channel's SNR (or a
/// uniformly drawn SNR in [snr_lo_db, snr_hi_db] when `sample_snr` is set).
struct FineTuneOptions {
    double lr = 1e-3;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    bool sample_snr = false;
    double snr_lo_db = 0.0;
    double snr_hi_db = 20.0;
};
TrainLog fine_tune_audio(AudioCodecModel& model, std::span<const media::AudioWaveform> clips,
                         const channel::ChannelConfig& channel, const FineTuneOptions& options);

/// Encode, pass through the channel, decode.
media::AudioWaveform audio_roundtrip(const AudioCodecModel& model, const media::AudioWaveform& audio,
                                     const channel::ChannelConfig& channel);

/// Received semantics after the channel; the gain travels as side information.
AudioSemantics transmit_semantics(const AudioSemantics& sent, const channel::ChannelConfig& channel);

} // namespace w2v::audio
