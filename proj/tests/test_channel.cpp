#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "wav2vid/channel.hpp"
#include "wav2vid/errors.hpp"
#include "wav2vid/rng.hpp"

using namespace w2v;
using namespace w2v::channel;

namespace {

std::vector<double> unit_power_symbols(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::normal_distribution<double> g;
    std::vector<double> s(n);
    for (auto& v : s) {
        v = g(rng);
    }
    normalize_power(s);
    return s;
}

double db(double x) { return 10.0 * std::log10(x); }

} // namespace

TEST(Channel, NoiseVariance)
{
    EXPECT_DOUBLE_EQ(noise_variance(0.0), 1.0);
    EXPECT_NEAR(noise_variance(10.0), 0.1, 1e-15);
    EXPECT_NEAR(noise_variance(-10.0), 10.0, 1e-12);
    EXPECT_EQ(noise_variance(std::numeric_limits<double>::infinity()), 0.0);
}

TEST(Channel, IdealIsIdentity)
{
    const std::vector<double> s{0.6, -0.8, 1.0, 0.0, -1.0, 1.2, 0.9, -1.31};
    std::vector<double> x = s;
    normalize_power(x);
    ChannelConfig cfg;
    cfg.fading = Fading::ideal;
    const auto y = pass(x, cfg);
    ASSERT_EQ(y.size(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_NEAR(y[i], x[i], 1e-15);
    }
}

TEST(Channel, OddLengthRoundTrip)
{
    auto x = unit_power_symbols(7, 3);
    ChannelConfig cfg;
    cfg.fading = Fading::ideal;
    EXPECT_EQ(pass(x, cfg).size(), 7u);
    cfg.fading = Fading::rayleigh;
    cfg.snr_db = std::numeric_limits<double>::infinity();
    const auto y = pass(x, cfg);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_NEAR(y[i], x[i], 1e-9);
    }
}

TEST(Channel, RejectsBadInput)
{
    ChannelConfig cfg;
    EXPECT_THROW(transmit(std::vector<double>{}, cfg), InvalidArgument);
    const std::vector<double> loud{2.0, 2.0, 2.0, 2.0};
    EXPECT_THROW(transmit(loud, cfg), ContractViolation);
}

TEST(Channel, MeasuredSnrMatchesAwgn)
{
    const auto x = unit_power_symbols(200000, 11);
    for (double snr : {0.0, 5.0, 10.0, 20.0}) {
        ChannelConfig cfg;
        cfg.fading = Fading::awgn_only;
        cfg.snr_db = snr;
        cfg.seed = 17;
        const auto r = transmit(x, cfg);
        double sig = 0, noise = 0;
        for (std::size_t i = 0; i < r.sent.size(); ++i) {
            sig += std::norm(r.sent[i]);
            noise += std::norm(r.received[i] - r.sent[i]);
        }
        EXPECT_NEAR(db(sig / noise), snr, 0.2) << snr;
        // Noise power matches sigma^2 (in the same scaled domain as the signal).
        const double expected = noise_variance(snr) * sig / static_cast<double>(r.sent.size());
        EXPECT_NEAR(noise / static_cast<double>(r.sent.size()) / expected, 1.0, 0.02);
    }
}

TEST(Channel, RayleighGainsUnitMeanPower)
{
    const auto x = unit_power_symbols(2 * 100000, 5);
    ChannelConfig cfg;
    cfg.block_size = 1;
    cfg.seed = 23;
    const auto r = transmit(x, cfg);
    ASSERT_EQ(r.gains.size(), 100000u);
    double p = 0;
    for (auto h : r.gains) {
        p += std::norm(h);
    }
    EXPECT_NEAR(p / static_cast<double>(r.gains.size()), 1.0, 0.01);
}

TEST(Channel, BlockFadingHoldsGainPerBlock)
{
    const auto x = unit_power_symbols(2 * 1000, 5);
    ChannelConfig cfg;
    cfg.block_size = 100;
    cfg.snr_db = std::numeric_limits<double>::infinity();
    const auto r = transmit(x, cfg);
    ASSERT_EQ(r.gains.size(), 10u);
    for (std::size_t i = 0; i < r.sent.size(); ++i) {
        const Complex h = r.gains[i / 100];
        EXPECT_NEAR(std::abs(r.received[i] - h * r.sent[i]), 0.0, 1e-12);
    }
}

TEST(Channel, EqualizedNoiseScalesWithInverseGain)
{
    // Per block, post-ZF noise variance ~ sigma^2 / |h|^2.
    const std::size_t block = 4000;
    const auto x = unit_power_symbols(2 * block * 20, 9);
    ChannelConfig cfg;
    cfg.block_size = block;
    cfg.snr_db = 10.0;
    cfg.seed = 31;
    const auto r = transmit(x, cfg);
    const auto eq = equalize(r);
    const double sig_scale = 2.0; // paired domain carries s0 + j s1 at unit power per real
    for (std::size_t b = 0; b < r.gains.size(); ++b) {
        double e = 0;
        for (std::size_t k = 0; k < block; ++k) {
            const std::size_t i = b * block + k;
            e += std::pow(eq.symbols[2 * i] - x[2 * i], 2) + std::pow(eq.symbols[2 * i + 1] - x[2 * i + 1], 2);
        }
        const double measured = e / static_cast<double>(block);
        const double predicted = r.noise_variance * sig_scale / std::norm(r.gains[b]);
        EXPECT_NEAR(measured / predicted, 1.0, 0.1) << "block " << b;
        EXPECT_FALSE(eq.deep_fade[b]);
    }
}

TEST(Channel, DeepFadeIsFlaggedAndFinite)
{
    ChannelRealization r;
    r.block_size = 2;
    r.length = 4;
    r.gains = {Complex(1e-9, 0.0)};
    r.sent = {Complex(1, 0), Complex(-1, 0)};
    r.received = {Complex(1e-9 + 0.1, 0.0), Complex(-1e-9, 0.05)};
    r.noise_variance = 0.01;
    const auto eq = equalize(r);
    ASSERT_EQ(eq.deep_fade.size(), 1u);
    EXPECT_TRUE(eq.deep_fade[0]);
    for (double v : eq.symbols) {
        EXPECT_TRUE(std::isfinite(v));
    }
}

TEST(Channel, Deterministic)
{
    const auto x = unit_power_symbols(5000, 1);
    ChannelConfig cfg;
    cfg.seed = 99;
    cfg.block_size = 64;
    EXPECT_EQ(pass(x, cfg), pass(x, cfg));
    ChannelConfig other = cfg;
    other.seed = 100;
    EXPECT_NE(pass(x, cfg), pass(x, other));
}

TEST(Channel, SweepPoints)
{
    const auto pts = snr_sweep_points(0.0, 20.0, 5);
    ASSERT_EQ(pts.size(), 5u);
    const double expected[] = {0.0, 5.0, 10.0, 15.0, 20.0};
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_DOUBLE_EQ(pts[i].snr_db, expected[i]);
    }
    EXPECT_NE(pts[0].seed, pts[1].seed);
    EXPECT_THROW(snr_sweep_points(0.0, 20.0, 1), InvalidArgument);
    EXPECT_THROW(snr_sweep_points(10.0, 0.0, 3), InvalidArgument);
}

TEST(Channel, NormalizePower)
{
    std::vector<double> v{3.0, 4.0};
    normalize_power(v);
    EXPECT_NEAR(average_power(v), 1.0, 1e-15);
    std::vector<double> z(6, 0.0);
    normalize_power(z);
    for (double e : z) {
        EXPECT_EQ(e, 1.0);
    }
}

TEST(Channel, HigherSnrLowersError)
{
    const auto x = unit_power_symbols(20000, 4);
    double prev = std::numeric_limits<double>::infinity();
    for (double snr : {0.0, 10.0, 20.0, 30.0}) {
        ChannelConfig cfg;
        cfg.snr_db = snr;
        cfg.seed = 8;
        cfg.block_size = 20000;
        const auto y = pass(x, cfg);
        double e = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            e += (y[i] - x[i]) * (y[i] - x[i]);
        }
        EXPECT_LT(e, prev);
        prev = e;
    }
}
