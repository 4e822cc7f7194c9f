#include "wav2vid/audio_codec.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "wav2vid/errors.hpp"
#include "wav2vid/rng.hpp"

namespace w2v::audio {

using nn::Tape;
using nn::Tensor;
using Model = AudioCodecModel;

std::size_t AudioCodecConfig::symbol_channels() const
{
    const std::size_t down = std::size_t{1} << blocks;
    return compression == 0 ? 0 : down / compression;
}

void AudioCodecConfig::validate() const
{
    if (blocks < 1 || blocks > 8 || width == 0 || compression == 0 || chunk == 0) {
        throw InvalidArgument("audio codec: blocks in [1, 8], positive width, compression and chunk required");
    }
    const std::size_t down = std::size_t{1} << blocks;
    if (down % compression != 0) {
        throw InvalidArgument("audio codec: compression must divide 2^blocks");
    }
    if (chunk % down != 0) {
        throw InvalidArgument("audio codec: chunk must be a multiple of 2^blocks");
    }
}

AudioCodecModel make_audio_codec(const AudioCodecConfig& config, std::uint64_t seed)
{
    config.validate();
    namespace L = nn::layers;
    const std::size_t w = config.width;
    const std::size_t sc = config.symbol_channels();

    nn::Sequential extractor, aggregator, decomposer, synthesizer;
    for (std::size_t b = 0; b < config.blocks; ++b) {
        extractor.add(L::conv1d(b == 0 ? 1 : w, w, 9, 2, 4)).add(L::tanh());
    }
    aggregator.add(L::pointwise(w, sc));
    decomposer.add(L::pointwise(sc, w)).add(L::tanh());
    for (std::size_t b = 0; b < config.blocks; ++b) {
        const bool last = b + 1 == config.blocks;
        synthesizer.add(L::deconv1d(w, last ? 1 : w, 4, 2, 1));
        if (!last) {
            synthesizer.add(L::tanh());
        }
    }

    Rng rng(split_seed(seed, {0xA0D10}));
    extractor.initialize(rng);
    aggregator.initialize(rng);
    decomposer.initialize(rng);
    synthesizer.initialize(rng);

    AudioCodecModel m;
    m.config = config;
    m.params.add(Model::kExtractor, std::move(extractor), true);
    m.params.add(Model::kAggregator, std::move(aggregator));
    m.params.add(Model::kDecomposer, std::move(decomposer));
    m.params.add(Model::kSynthesizer, std::move(synthesizer), true);
    return m;
}

namespace {

std::size_t padded_length(const AudioCodecConfig& c, std::size_t samples)
{
    return (samples + c.chunk - 1) / c.chunk * c.chunk;
}

Tensor padded_input(const AudioCodecConfig& c, std::span<const double> samples)
{
    Tensor x({1, padded_length(c, samples.size())});
    std::copy(samples.begin(), samples.end(), x.data());
    return x;
}

struct ForwardTapes {
    Tape extractor, aggregator, decomposer, synthesizer;
};

Tensor latent(const Model& m, const Tensor& x, ForwardTapes* t)
{
    const Tensor h = m.params.forward(Model::kExtractor, x, t ? &t->extractor : nullptr);
    return m.params.forward(Model::kAggregator, h, t ? &t->aggregator : nullptr);
}

Tensor synthesize(const Model& m, const Tensor& z, ForwardTapes* t)
{
    const Tensor h = m.params.forward(Model::kDecomposer, z, t ? &t->decomposer : nullptr);
    return m.params.forward(Model::kSynthesizer, h, t ? &t->synthesizer : nullptr);
}

double rms(std::span<const double> v)
{
    double e = 0.0;
    for (double x : v) {
        e += x * x;
    }
    return v.empty() ? 0.0 : std::sqrt(e / static_cast<double>(v.size()));
}

// Loss and gradient on the first `n` output samples; padding carries no loss.
double nrmse_on_prefix(std::span<const double> ref, const Tensor& y, Tensor* dy)
{
    const std::span<const double> est(y.data(), ref.size());
    const double loss = nrmse(ref, est);
    if (dy) {
        *dy = Tensor(y.shape());
        const auto g = nrmse_gradient(ref, est);
        std::copy(g.begin(), g.end(), dy->data());
    }
    return loss;
}

double energy(std::span<const double> v)
{
    double e = 0.0;
    for (double x : v) {
        e += x * x;
    }
    return e;
}

} // namespace

AudioSemantics audio_encode(const AudioCodecModel& model, const media::AudioWaveform& audio)
{
    const auto& c = model.config;
    if (audio.length() < c.chunk) {
        throw InvalidArgument("audio_encode: waveform shorter than one chunk (" + std::to_string(c.chunk) +
                              " samples)");
    }
    const Tensor z = latent(model, padded_input(c, audio.samples), nullptr);

    AudioSemantics s;
    s.samples = audio.length();
    s.sample_rate = audio.sample_rate;
    s.chunks = padded_length(c, audio.length()) / c.chunk;
    s.per_chunk = c.chunk / c.compression;
    s.symbols = z.vector();
    s.gain = rms(s.symbols);
    if (s.gain > 0.0) {
        for (auto& v : s.symbols) {
            v /= s.gain;
        }
    } else {
        channel::normalize_power(s.symbols);
        s.gain = 0.0;
    }
    return s;
}

media::AudioWaveform audio_decode(const AudioCodecModel& model, const AudioSemantics& received)
{
    const auto& c = model.config;
    const std::size_t sc = c.symbol_channels();
    if (received.per_chunk * c.compression != c.chunk || received.chunks * received.per_chunk != received.size() ||
        received.chunks == 0 || received.samples > received.chunks * c.chunk ||
        received.samples + c.chunk <= received.chunks * c.chunk) {
        throw InvalidArgument("audio_decode: symbol layout does not match the model");
    }
    const std::size_t len = received.chunks * c.chunk;
    Tensor z({sc, len / (std::size_t{1} << c.blocks)});
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = received.symbols[i] * received.gain;
    }
    const Tensor y = synthesize(model, z, nullptr);

    media::AudioWaveform out;
    out.sample_rate = received.sample_rate;
    out.samples.resize(received.samples);
    for (std::size_t i = 0; i < received.samples; ++i) {
        const double v = y[i];
        out.samples[i] = std::isfinite(v) ? std::clamp(v, -1.0, 1.0) : 0.0;
    }
    return out;
}

double nrmse(std::span<const double> reference, std::span<const double> estimate)
{
    if (reference.size() != estimate.size()) {
        throw InvalidArgument("nrmse: length mismatch");
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double d = reference[i] - estimate[i];
        num += d * d;
        den += reference[i] * reference[i];
    }
    if (!(den > 0.0)) {
        throw UndefinedReference("nrmse: reference has zero energy");
    }
    return num / den;
}

std::vector<double> nrmse_gradient(std::span<const double> reference, std::span<const double> estimate)
{
    if (reference.size() != estimate.size()) {
        throw InvalidArgument("nrmse: length mismatch");
    }
    const double den = energy(reference);
    if (!(den > 0.0)) {
        throw UndefinedReference("nrmse: reference has zero energy");
    }
    std::vector<double> g(reference.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = -2.0 * (reference[i] - estimate[i]) / den;
    }
    return g;
}

TrainLog pretrain_audio(AudioCodecModel& model, std::span<const media::AudioWaveform> clips,
                        const AudioTrainOptions& options)
{
    if (clips.empty()) {
        throw InvalidArgument("pretrain_audio: empty training set");
    }
    const auto& c = model.config;
    const std::size_t crop = options.crop_chunks * c.chunk;
    for (const auto& a : clips) {
        if (a.length() < c.chunk) {
            throw InvalidArgument("pretrain_audio: clip shorter than one chunk");
        }
    }

    // Pretraining touches every group, including the ones frozen online.
    nn::ParameterSet& ps = model.params;
    const auto frozen = ps.frozen_names();
    for (const auto& n : frozen) {
        ps.set_frozen(n, false);
    }

    Rng rng(split_seed(options.seed, {0xA0D1, 1}));
    nn::Adam adam(options.lr);
    TrainLog log;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        adam.set_learning_rate(options.lr * (1.0 - 0.9 * static_cast<double>(epoch) / static_cast<double>(options.epochs)));
        double total = 0.0;
        std::size_t used = 0;
        for (std::size_t k = 0; k < options.crops_per_epoch; ++k) {
            const auto& a = clips[rng() % clips.size()];
            const std::size_t len = std::min(crop, a.length());
            const std::size_t start = a.length() > len ? rng() % (a.length() - len + 1) : 0;
            const std::span<const double> ref(a.samples.data() + start, len);
            if (rms(ref) < 0.02) {
                continue; // near-silent crops make the ratio loss explode
            }
            ForwardTapes t;
            const Tensor z = latent(model, padded_input(c, ref), &t);
            const Tensor y = synthesize(model, z, &t);
            Tensor dy;
            const double loss = nrmse_on_prefix(ref, y, &dy);

            nn::Gradients g;
            Tensor d = ps.backward(Model::kSynthesizer, t.synthesizer, dy, &g);
            d = ps.backward(Model::kDecomposer, t.decomposer, d, &g);
            d = ps.backward(Model::kAggregator, t.aggregator, d, &g);
            ps.backward(Model::kExtractor, t.extractor, d, &g);
            nn::clip_global_norm(g, 5.0);
            adam.step(ps, g);
            total += loss;
            ++used;
        }
        const double epoch_loss = used ? total / static_cast<double>(used) : 0.0;
        log.losses.push_back(epoch_loss);
        check_divergence(epoch_loss, log.initial(), "audio pretraining");
    }
    for (const auto& n : frozen) {
        ps.set_frozen(n, true);
    }
    return log;
}

TrainLog fine_tune_audio(AudioCodecModel& model, std::span<const media::AudioWaveform> clips,
                         const channel::ChannelConfig& channel, const FineTuneOptions& options)
{
    if (clips.empty()) {
        throw InvalidArgument("fine_tune_audio: empty training set");
    }
    const auto& c = model.config;
    nn::ParameterSet& ps = model.params;
    ps.set_frozen(Model::kExtractor, true);
    ps.set_frozen(Model::kSynthesizer, true);
    ps.set_frozen(Model::kAggregator, false);
    ps.set_frozen(Model::kDecomposer, false);

    // Channel draws are fixed per clip so that epochs see the same realizations.
    std::vector<channel::ChannelConfig> draws(clips.size(), channel);
    for (std::size_t i = 0; i < clips.size(); ++i) {
        draws[i].seed = split_seed(options.seed, {0xF1E7, i});
        if (options.sample_snr) {
            Rng r(split_seed(options.seed, {0x5A4, i}));
            draws[i].snr_db = std::uniform_real_distribution<double>(options.snr_lo_db, options.snr_hi_db)(r);
        }
    }

    nn::Adam adam(options.lr);
    TrainLog log;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        double total = 0.0;
        std::size_t used = 0;
        for (std::size_t i = 0; i < clips.size(); ++i) {
            const auto& a = clips[i];
            if (a.length() < c.chunk) {
                throw InvalidArgument("fine_tune_audio: clip shorter than one chunk");
            }
            if (energy(a.samples) < 1e-8) {
                continue;
            }
            ForwardTapes t;
            Tensor z = latent(model, padded_input(c, a.samples), &t);
            const double g = rms(z.values());
            if (g > 0.0) {
                std::vector<double> s(z.values().begin(), z.values().end());
                for (auto& v : s) {
                    v /= g;
                }
                const auto r = channel::pass(s, draws[i]);
                for (std::size_t k = 0; k < z.size(); ++k) {
                    z[k] += g * (r[k] - s[k]);
                }
            }
            const Tensor y = synthesize(model, z, &t);
            Tensor dy;
            const double loss = nrmse_on_prefix(a.samples, y, &dy);

            nn::Gradients grads;
            Tensor d = ps.backward(Model::kSynthesizer, t.synthesizer, dy, &grads);
            d = ps.backward(Model::kDecomposer, t.decomposer, d, &grads);
            ps.backward(Model::kAggregator, t.aggregator, d, &grads);
            nn::clip_global_norm(grads, 5.0);
            adam.step(ps, grads);
            total += loss;
            ++used;
        }
        const double epoch_loss = used ? total / static_cast<double>(used) : 0.0;
        log.losses.push_back(epoch_loss);
        check_divergence(epoch_loss, log.initial(), "audio fine-tuning");
    }
    return log;
}

AudioSemantics transmit_semantics(const AudioSemantics& sent, const channel::ChannelConfig& channel)
{
    AudioSemantics r = sent;
    r.symbols = channel::pass(sent.symbols, channel);
    return r;
}

media::AudioWaveform audio_roundtrip(const AudioCodecModel& model, const media::AudioWaveform& audio,
                                     const channel::ChannelConfig& channel)
{
    return audio_decode(model, transmit_semantics(audio_encode(model, audio), channel));
}

} // namespace w2v::audio
