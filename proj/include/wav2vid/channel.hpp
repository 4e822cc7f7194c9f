#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace w2v::channel {

enum class Fading { rayleigh, awgn_only, ideal };

struct ChannelConfig {
    double snr_db = 10.0;
    Fading fading = Fading::rayleigh;
    std::size_t block_size = 1024; // complex channel uses per fading coefficient
    std::uint64_t seed = 0;
};

using Complex = std::complex<double>;

/// One pass of a real symbol stream through the block-fading channel. Real
/// symbols are paired as s0 + j s1; this is the unit-power complex symbol
/// (s0 + j s1) / sqrt(2) scaled by sqrt(2), with the noise scaled alike.
struct ChannelRealization {
    std::vector<Complex> gains;    // one per block
    std::vector<Complex> sent;     // paired input
    std::vector<Complex> received; // h * x + n
    double noise_variance = 0.0;   // sigma^2 of the complex noise
    std::size_t block_size = 1;
    std::size_t length = 0;        // real symbols before pairing
};

/// sigma^2 = 10^(-snr_db/10); infinite SNR gives a noiseless channel.
double noise_variance(double snr_db);

/// r = h s + n. Throws InvalidArgument on empty input and ContractViolation
/// when the average power is outside 1 +- 1e-3.
ChannelRealization transmit(std::span<const double> symbols, const ChannelConfig& cfg);

struct Equalized {
    std::vector<double> symbols;
    std::vector<bool> deep_fade; // per block, |h| < 1e-6
};

/// Zero-forcing with perfect CSI: conj(h) r / |h|^2, unpacked to reals.
Equalized equalize(const ChannelRealization& realization);

/// transmit + equalize.
std::vector<double> pass(std::span<const double> symbols, const ChannelConfig& cfg);

/// Evenly spaced SNR grid; seeds are split from `base.seed` per point.
std::vector<ChannelConfig> snr_sweep_points(double lo_db, double hi_db, std::size_t n, const ChannelConfig& base = {});

/// Scales a real vector to unit average power (all-zero input maps to all ones).
void normalize_power(std::span<double> symbols);
double average_power(std::span<const double> symbols);

} // namespace w2v::channel
