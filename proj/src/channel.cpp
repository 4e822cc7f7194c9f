#include "wav2vid/channel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "wav2vid/errors.hpp"
#include "wav2vid/rng.hpp"

namespace w2v::channel {

namespace {
constexpr double kDeepFade = 1e-6;
constexpr double kMaxGain = 1e6;
const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
} // namespace

double noise_variance(double snr_db)
{
    if (std::isinf(snr_db) && snr_db > 0) {
        return 0.0;
    }
    return std::pow(10.0, -snr_db / 10.0);
}

double average_power(std::span<const double> symbols)
{
    if (symbols.empty()) {
        return 0.0;
    }
    double e = 0.0;
    for (double s : symbols) {
        e += s * s;
    }
    return e / static_cast<double>(symbols.size());
}

void normalize_power(std::span<double> symbols)
{
    const double p = average_power(symbols);
    if (symbols.empty()) {
        return;
    }
    if (!(p > 1e-300)) {
        std::fill(symbols.begin(), symbols.end(), 1.0);
        return;
    }
    const double g = 1.0 / std::sqrt(p);
    for (auto& s : symbols) {
        s *= g;
    }
}

ChannelRealization transmit(std::span<const double> symbols, const ChannelConfig& cfg)
{
    if (symbols.empty()) {
        throw InvalidArgument("transmit: empty symbol stream");
    }
    if (cfg.block_size == 0) {
        throw InvalidArgument("transmit: block_size must be >= 1");
    }
    const double p = average_power(symbols);
    if (std::abs(p - 1.0) > 1e-3) {
        throw ContractViolation("transmit: input average power " + std::to_string(p) + " is not 1");
    }

    ChannelRealization out;
    out.length = symbols.size();
    out.block_size = cfg.block_size;
    const std::size_t n = (symbols.size() + 1) / 2;
    out.sent.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double re = symbols[2 * k];
        const double im = 2 * k + 1 < symbols.size() ? symbols[2 * k + 1] : 0.0;
        out.sent[k] = Complex(re, im);
    }

    const bool noisy = cfg.fading != Fading::ideal;
    out.noise_variance = noisy ? noise_variance(cfg.snr_db) : 0.0;
    // Stored in the sqrt(2)-scaled domain: each complex value carries two unit-power
    // reals and each noise component has variance sigma^2, so the ratio is unchanged.
    const double sigma = std::sqrt(out.noise_variance);

    Rng rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t blocks = (n + cfg.block_size - 1) / cfg.block_size;
    out.gains.resize(blocks, Complex(1.0, 0.0));
    out.received.resize(n);
    for (std::size_t b = 0; b < blocks; ++b) {
        if (cfg.fading == Fading::rayleigh) {
            const double g1 = gauss(rng);
            const double g2 = gauss(rng);
            out.gains[b] = Complex(g1, g2) * kInvSqrt2;
        }
        const Complex h = out.gains[b];
        const std::size_t end = std::min(n, (b + 1) * cfg.block_size);
        for (std::size_t k = b * cfg.block_size; k < end; ++k) {
            Complex noise(0.0, 0.0);
            if (noisy) {
                const double n1 = gauss(rng);
                const double n2 = gauss(rng);
                noise = Complex(sigma * n1, sigma * n2);
            }
            out.received[k] = h * out.sent[k] + noise;
        }
    }
    return out;
}

Equalized equalize(const ChannelRealization& r)
{
    Equalized out;
    out.deep_fade.assign(r.gains.size(), false);
    out.symbols.resize(r.length);
    for (std::size_t k = 0; k < r.received.size(); ++k) {
        const std::size_t b = k / r.block_size;
        const Complex h = r.gains[b];
        const double mag = std::abs(h);
        Complex s;
        if (mag < kDeepFade) {
            out.deep_fade[b] = true;
            const Complex phase = mag > 0.0 ? std::conj(h) / mag : Complex(1.0, 0.0);
            s = phase * r.received[k] * kMaxGain;
        } else {
            s = std::conj(h) * r.received[k] / (mag * mag);
        }
        out.symbols[2 * k] = s.real();
        if (2 * k + 1 < r.length) {
            out.symbols[2 * k + 1] = s.imag();
        }
    }
    return out;
}

std::vector<double> pass(std::span<const double> symbols, const ChannelConfig& cfg)
{
    return equalize(transmit(symbols, cfg)).symbols;
}

std::vector<ChannelConfig> snr_sweep_points(double lo_db, double hi_db, std::size_t n, const ChannelConfig& base)
{
    if (n < 2 || !(lo_db < hi_db)) {
        throw InvalidArgument("snr_sweep_points needs n >= 2 and lo < hi");
    }
    std::vector<ChannelConfig> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ChannelConfig c = base;
        c.snr_db = i + 1 == n ? hi_db : lo_db + (hi_db - lo_db) * static_cast<double>(i) / static_cast<double>(n - 1);
        c.seed = split_seed(base.seed, {i});
        out.push_back(c);
    }
    return out;
}

} // namespace w2v::channel
