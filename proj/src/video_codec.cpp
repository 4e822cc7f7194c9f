#include "wav2vid/video_codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "binary_io.hpp"
#include "wav2vid/errors.hpp"
#include "wav2vid/metrics.hpp"
#include "wav2vid/rng.hpp"

namespace w2v::video {

using nn::Tape;
using nn::Tensor;
using Model = VideoCodecModel;

namespace {

constexpr double kLn2 = 0.69314718055994530942;
constexpr double kMinLogScale = -3.0;
constexpr double kMaxLogScale = 8.0;

double round_even(double v) { return std::nearbyint(v); }

std::size_t feature_dim(std::size_t pixels) { return pixels / VideoCodecConfig::kDownsample; }

} // namespace

void VideoCodecConfig::validate() const
{
    if (channels == 0 || hidden == 0 || block == 0 || prior_hidden == 0) {
        throw InvalidArgument("video codec: channels, hidden, block and prior_hidden must be positive");
    }
    if (block % kDownsample != 0) {
        throw InvalidArgument("video codec: motion block must be a multiple of the downsample factor");
    }
    if (!(quant_scale > 0.0) || !(eta_y >= 0.0) || !(eta_x >= 0.0) || !std::isfinite(eta_y) || !std::isfinite(eta_x)) {
        throw InvalidArgument("video codec: quant_scale > 0 and finite eta >= 0 required");
    }
}

// Motion -------------------------------------------------------------------------

bool MotionField::all_zero() const noexcept
{
    return std::all_of(dy.begin(), dy.end(), [](int v) { return v == 0; }) &&
           std::all_of(dx.begin(), dx.end(), [](int v) { return v == 0; });
}

MotionField zero_motion(std::size_t height, std::size_t width, std::size_t block)
{
    if (block == 0 || height % block != 0 || width % block != 0) {
        throw InvalidArgument("motion: block size must divide the frame dimensions");
    }
    MotionField m;
    m.rows = height / block;
    m.cols = width / block;
    m.block = block;
    m.dy.assign(m.rows * m.cols, 0);
    m.dx.assign(m.rows * m.cols, 0);
    return m;
}

MotionField estimate_motion(const media::Frame& current, const media::Frame& previous, std::size_t block,
                            std::size_t search_radius)
{
    if (current.height != previous.height || current.width != previous.width) {
        throw InvalidArgument("estimate_motion: frame dimensions differ");
    }
    MotionField m = zero_motion(current.height, current.width, block);
    const int R = static_cast<int>(search_radius);
    const int H = static_cast<int>(current.height), W = static_cast<int>(current.width);
    const int B = static_cast<int>(block);
    for (std::size_t br = 0; br < m.rows; ++br) {
        for (std::size_t bc = 0; bc < m.cols; ++bc) {
            const int y0 = static_cast<int>(br) * B, x0 = static_cast<int>(bc) * B;
            double best = std::numeric_limits<double>::infinity();
            int best_dy = 0, best_dx = 0;
            for (int dy = -R; dy <= R; ++dy) {
                for (int dx = -R; dx <= R; ++dx) {
                    const int ry = y0 - dy, rx = x0 - dx;
                    if (ry < 0 || rx < 0 || ry + B > H || rx + B > W) {
                        continue;
                    }
                    double sad = 0.0;
                    for (int i = 0; i < B; ++i) {
                        for (int j = 0; j < B; ++j) {
                            sad += std::abs(current(y0 + i, x0 + j) - previous(ry + i, rx + j));
                        }
                    }
                    const int mag = dy * dy + dx * dx, best_mag = best_dy * best_dy + best_dx * best_dx;
                    const bool better = sad < best ||
                                        (sad == best && (mag < best_mag || (mag == best_mag && std::pair(dy, dx) <
                                                                                               std::pair(best_dy, best_dx))));
                    if (better) {
                        best = sad;
                        best_dy = dy;
                        best_dx = dx;
                    }
                }
            }
            m.dy[br * m.cols + bc] = best_dy;
            m.dx[br * m.cols + bc] = best_dx;
        }
    }
    return m;
}

Tensor warp_features(const Tensor& previous, const MotionField& motion, std::size_t downsample)
{
    if (previous.rank() != 3 || downsample == 0) {
        throw InvalidArgument("warp_features: expected a [C, h, w] feature map");
    }
    const std::size_t C = previous.dim(0), h = previous.dim(1), w = previous.dim(2);
    if (motion.rows * motion.block != h * downsample || motion.cols * motion.block != w * downsample) {
        throw InvalidArgument("warp_features: motion field does not tile the feature map");
    }
    Tensor out(previous.shape());
    const auto ds = static_cast<double>(downsample);
    for (std::size_t fy = 0; fy < h; ++fy) {
        for (std::size_t fx = 0; fx < w; ++fx) {
            const std::size_t b = (fy * downsample / motion.block) * motion.cols + fx * downsample / motion.block;
            const long sy = std::clamp<long>(static_cast<long>(fy) - std::lround(motion.dy[b] / ds), 0,
                                             static_cast<long>(h) - 1);
            const long sx = std::clamp<long>(static_cast<long>(fx) - std::lround(motion.dx[b] / ds), 0,
                                             static_cast<long>(w) - 1);
            for (std::size_t c = 0; c < C; ++c) {
                out[(c * h + fy) * w + fx] = previous[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
            }
        }
    }
    return out;
}

// Entropy model ---------------------------------------------------------------------

namespace {

struct LaplaceTerms {
    double p = 0.0, dp_mu = 0.0, dp_b = 0.0;
};

LaplaceTerms laplace_terms(double value, double mu, double b)
{
    if (!(b > 0.0) || !std::isfinite(b) || !std::isfinite(mu) || !std::isfinite(value)) {
        throw InvalidArgument("laplace: finite location and positive scale required");
    }
    const double lo = value - 0.5 - mu, hi = value + 0.5 - mu;
    const double b2 = b * b;
    LaplaceTerms t;
    if (lo >= 0.0) {
        const double el = std::exp(-lo / b), eh = std::exp(-hi / b);
        t.p = 0.5 * (el - eh);
        t.dp_mu = t.p / b;
        t.dp_b = 0.5 * (el * lo - eh * hi) / b2;
    } else if (hi <= 0.0) {
        const double eh = std::exp(hi / b), el = std::exp(lo / b);
        t.p = 0.5 * (eh - el);
        t.dp_mu = -t.p / b;
        t.dp_b = 0.5 * (el * lo - eh * hi) / b2;
    } else {
        const double eh = std::exp(-hi / b), el = std::exp(lo / b);
        t.p = 1.0 - 0.5 * eh - 0.5 * el;
        t.dp_mu = 0.5 * (el - eh) / b;
        t.dp_b = 0.5 * (el * lo - eh * hi) / b2;
    }
    return t;
}

} // namespace

double laplace_probability(double value, double mu, double scale)
{
    return std::max(laplace_terms(value, mu, scale).p, kMinProbability);
}

LaplaceNll laplace_nll(double value, double mu, double scale)
{
    const auto t = laplace_terms(value, mu, scale);
    LaplaceNll r;
    if (t.p <= kMinProbability) {
        r.bits = -std::log2(kMinProbability);
        return r;
    }
    r.bits = -std::log2(t.p);
    r.d_mu = -t.dp_mu / (t.p * kLn2);
    r.d_scale = -t.dp_b / (t.p * kLn2);
    return r;
}

RateAllocation rate_allocate(std::span<const double> p_y, std::span<const double> p_m, double eta_y, double eta_x)
{
    if (!(eta_y >= 0.0) || !(eta_x >= 0.0) || !std::isfinite(eta_y) || !std::isfinite(eta_x)) {
        throw InvalidArgument("rate_allocate: eta must be finite and >= 0");
    }
    auto bits = [](std::span<const double> p) {
        double s = 0.0;
        for (double v : p) {
            if (!(v <= 1.0)) {
                throw InvalidArgument("rate_allocate: probability above 1");
            }
            s -= std::log2(std::max(v, kMinProbability));
        }
        return s;
    };
    RateAllocation r;
    r.eta_y = eta_y;
    r.eta_x = eta_x;
    r.nll_y = bits(p_y);
    r.nll_m = bits(p_m);
    r.raw_y = eta_y * r.nll_y;
    r.raw_m = eta_x * r.nll_m;
    r.k_y = static_cast<std::size_t>(std::ceil(r.raw_y));
    r.k_m = static_cast<std::size_t>(std::ceil(r.raw_m));
    return r;
}

// Model --------------------------------------------------------------------------------

VideoCodecModel make_video_codec(const VideoCodecConfig& config, std::uint64_t seed)
{
    config.validate();
    namespace L = nn::layers;
    const std::size_t C = config.channels, h = config.hidden;

    nn::Sequential extractor, synthesizer, refiner, projection, inverse, prior_y, prior_m;
    extractor.add(L::conv2d(1, h, 5, 2, 2)).add(L::relu()).add(L::conv2d(h, C, 5, 2, 2));
    synthesizer.add(L::deconv2d(C, h, 4, 2, 1)).add(L::relu()).add(L::deconv2d(h, 1, 4, 2, 1));
    refiner.add(L::conv2d(C, C, 3, 1, 1)).add(L::relu()).add(L::conv2d(C, C, 3, 1, 1));
    projection.add(L::pointwise(C + 1, C));
    inverse.add(L::pointwise(C + 1, C));
    prior_y.add(L::pointwise(4 * C, config.prior_hidden)).add(L::relu()).add(L::pointwise(config.prior_hidden, 2 * C));
    prior_m.add(L::pointwise(4, 8)).add(L::relu()).add(L::pointwise(8, 4));

    Rng rng(split_seed(seed, {0x1DE0}));
    for (auto* net : {&extractor, &synthesizer, &refiner, &projection, &inverse, &prior_y, &prior_m}) {
        net->initialize(rng);
    }
    // Identity refiner at initialisation: the residual branch starts at zero.
    auto& last = refiner.mutable_layer(refiner.size() - 1);
    std::fill(last.weight.values().begin(), last.weight.values().end(), 0.0);

    Model m;
    m.config = config;
    m.params.add(Model::kExtractor, std::move(extractor), true);
    m.params.add(Model::kSynthesizer, std::move(synthesizer), true);
    m.params.add(Model::kRefiner, std::move(refiner), true);
    m.params.add(Model::kProjection, std::move(projection));
    m.params.add(Model::kInverse, std::move(inverse));
    m.params.add(Model::kPriorY, std::move(prior_y));
    m.params.add(Model::kPriorM, std::move(prior_m));
    return m;
}

namespace {

Tensor frame_tensor(const media::Frame& f)
{
    const std::size_t D = VideoCodecConfig::kDownsample;
    if (f.height == 0 || f.width == 0 || f.height % D != 0 || f.width % D != 0) {
        throw InvalidArgument("video codec: frame dimensions must be positive multiples of " + std::to_string(D));
    }
    return Tensor({1, f.height, f.width}, f.pixels);
}

Tensor features(const Model& m, const media::Frame& f, Tape* tape = nullptr)
{
    return m.params.forward(Model::kExtractor, frame_tensor(f), tape);
}

Tensor quantize(const Tensor& y, double q)
{
    Tensor out(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        out[i] = round_even(q * y[i]);
    }
    return out;
}

// Rounded average over kHyperPool x kHyperPool tiles (partial tiles at the edge).
Tensor hyperprior(const Tensor& y_bar)
{
    const std::size_t P = VideoCodecConfig::kHyperPool;
    const std::size_t C = y_bar.dim(0), h = y_bar.dim(1), w = y_bar.dim(2);
    const std::size_t hh = (h + P - 1) / P, hw = (w + P - 1) / P;
    Tensor z({C, hh, hw});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < hh; ++i) {
            for (std::size_t j = 0; j < hw; ++j) {
                double s = 0.0;
                std::size_t n = 0;
                for (std::size_t y = i * P; y < std::min(h, (i + 1) * P); ++y) {
                    for (std::size_t x = j * P; x < std::min(w, (j + 1) * P); ++x) {
                        s += y_bar[(c * h + y) * w + x];
                        ++n;
                    }
                }
                z[(c * hh + i) * hw + j] = round_even(s / static_cast<double>(n));
            }
        }
    }
    return z;
}

double log_scale_clamped(double s, bool* active)
{
    const double c = std::clamp(s, kMinLogScale, kMaxLogScale);
    *active = c == s;
    return c;
}

// Feature entropy predictor. Inputs are in feature units; mu = q (c + delta), b = exp(s).
struct PriorYEval {
    Tape tape;
    Tensor out;
    std::vector<double> mu, scale;
    std::vector<bool> scale_active;
};

PriorYEval eval_prior_y(const Model& m, const Tensor& y_bar, const Tensor& context, bool with_tape)
{
    const auto& cfg = m.config;
    const double q = cfg.quant_scale;
    const std::size_t C = y_bar.dim(0), h = y_bar.dim(1), w = y_bar.dim(2);
    if (context.shape() != y_bar.shape()) {
        throw InvalidArgument("entropy model: context and features differ in shape");
    }
    const Tensor hyper = hyperprior(y_bar);
    const std::size_t P = VideoCodecConfig::kHyperPool, hw = hyper.dim(2), hh = hyper.dim(1);
    Tensor in({4 * C, h, w});
    const std::size_t plane = h * w;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t i = (c * h + y) * w + x, p = y * w + x;
                in[c * plane + p] = context[i];
                in[(C + c) * plane + p] = hyper[(c * hh + y / P) * hw + x / P] / q;
                in[(2 * C + c) * plane + p] = x > 0 ? y_bar[i - 1] / q : 0.0;
                in[(3 * C + c) * plane + p] = y > 0 ? y_bar[i - w] / q : 0.0;
            }
        }
    }
    PriorYEval e;
    e.out = m.params.forward(Model::kPriorY, in, with_tape ? &e.tape : nullptr);
    const std::size_t n = C * plane;
    e.mu.resize(n);
    e.scale.resize(n);
    e.scale_active.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        e.mu[i] = q * (context[i] + e.out[i]);
        bool active = false;
        e.scale[i] = std::exp(log_scale_clamped(e.out[n + i], &active));
        e.scale_active[i] = active;
    }
    return e;
}

// Sum of NLL bits of y_bar; fills d bits / d prior output when requested.
double prior_y_bits(const Model& m, const PriorYEval& e, const Tensor& y_bar, Tensor* d_out)
{
    const std::size_t n = y_bar.size();
    if (d_out) {
        *d_out = Tensor(e.out.shape());
    }
    double bits = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = laplace_nll(y_bar[i], e.mu[i], e.scale[i]);
        bits += r.bits;
        if (d_out) {
            (*d_out)[i] = r.d_mu * m.config.quant_scale;
            (*d_out)[n + i] = e.scale_active[i] ? r.d_scale * e.scale[i] : 0.0;
        }
    }
    return bits;
}

std::vector<int> interleave(const MotionField& m)
{
    std::vector<int> v(2 * m.size());
    for (std::size_t b = 0; b < m.size(); ++b) {
        v[2 * b] = m.dy[b];
        v[2 * b + 1] = m.dx[b];
    }
    return v;
}

std::vector<int> motion_hyper(std::span<const int> m_bar)
{
    const std::size_t nb = m_bar.size() / 2;
    double sy = 0.0, sx = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
        sy += m_bar[2 * b];
        sx += m_bar[2 * b + 1];
    }
    if (nb == 0) {
        return {0, 0};
    }
    return {static_cast<int>(round_even(sy / static_cast<double>(nb))),
            static_cast<int>(round_even(sx / static_cast<double>(nb)))};
}

struct PriorMEval {
    Tape tape;
    Tensor out;
    std::vector<double> mu, scale;
    std::vector<bool> scale_active;
};

PriorMEval eval_prior_m(const Model& m, std::span<const int> m_bar, bool with_tape)
{
    if (m_bar.size() % 2 != 0) {
        throw InvalidArgument("motion entropy model: interleaved field expected");
    }
    const std::size_t nb = m_bar.size() / 2;
    const double R = std::max<double>(1.0, static_cast<double>(m.config.search_radius));
    const auto hyper = motion_hyper(m_bar);
    PriorMEval e;
    if (nb == 0) {
        return e;
    }
    Tensor in({4, nb});
    for (std::size_t b = 0; b < nb; ++b) {
        in[0 * nb + b] = hyper[0] / R;
        in[1 * nb + b] = hyper[1] / R;
        in[2 * nb + b] = b > 0 ? m_bar[2 * (b - 1)] / R : 0.0;
        in[3 * nb + b] = b > 0 ? m_bar[2 * (b - 1) + 1] / R : 0.0;
    }
    e.out = m.params.forward(Model::kPriorM, in, with_tape ? &e.tape : nullptr);
    e.mu.resize(2 * nb);
    e.scale.resize(2 * nb);
    e.scale_active.resize(2 * nb);
    for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t d = 0; d < 2; ++d) {
            e.mu[2 * b + d] = R * e.out[d * nb + b];
            bool active = false;
            e.scale[2 * b + d] = std::exp(log_scale_clamped(e.out[(2 + d) * nb + b], &active));
            e.scale_active[2 * b + d] = active;
        }
    }
    return e;
}

double prior_m_bits(const Model& m, const PriorMEval& e, std::span<const int> m_bar, Tensor* d_out)
{
    const std::size_t nb = m_bar.size() / 2;
    const double R = std::max<double>(1.0, static_cast<double>(m.config.search_radius));
    if (d_out) {
        *d_out = Tensor(e.out.shape());
    }
    double bits = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t d = 0; d < 2; ++d) {
            const std::size_t j = 2 * b + d;
            const auto r = laplace_nll(m_bar[j], e.mu[j], e.scale[j]);
            bits += r.bits;
            if (d_out) {
                (*d_out)[d * nb + b] = r.d_mu * R;
                (*d_out)[(2 + d) * nb + b] = e.scale_active[j] ? r.d_scale * e.scale[j] : 0.0;
            }
        }
    }
    return bits;
}

Tensor with_snr(const Tensor& x, double snr_db)
{
    const std::size_t C = x.dim(0), plane = x.size() / C;
    auto shape = x.shape();
    shape[0] = C + 1;
    Tensor out(shape);
    std::copy(x.values().begin(), x.values().end(), out.data());
    std::fill(out.data() + C * plane, out.data() + (C + 1) * plane, snr_db / 20.0);
    return out;
}

// Drops the gradient of the appended SNR plane.
Tensor without_snr(const Tensor& d, std::size_t C)
{
    auto shape = d.shape();
    shape[0] = C;
    Tensor out(shape);
    std::copy(d.data(), d.data() + out.size(), out.data());
    return out;
}

Tensor context_forward(const Model& m, const Tensor& previous, const MotionField& motion, Tape* tape = nullptr)
{
    Tensor w = warp_features(previous, motion, VideoCodecConfig::kDownsample);
    const Tensor r = m.params.forward(Model::kRefiner, w, tape);
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] += r[i];
    }
    return w;
}

// Adjoint of warp_features: scatters d_out back onto the source positions.
Tensor warp_backward(const Tensor& d_out, const MotionField& motion, std::size_t downsample)
{
    const std::size_t C = d_out.dim(0), h = d_out.dim(1), w = d_out.dim(2);
    Tensor d_prev(d_out.shape());
    const auto ds = static_cast<double>(downsample);
    for (std::size_t fy = 0; fy < h; ++fy) {
        for (std::size_t fx = 0; fx < w; ++fx) {
            const std::size_t b = (fy * downsample / motion.block) * motion.cols + fx * downsample / motion.block;
            const long sy = std::clamp<long>(static_cast<long>(fy) - std::lround(motion.dy[b] / ds), 0,
                                             static_cast<long>(h) - 1);
            const long sx = std::clamp<long>(static_cast<long>(fx) - std::lround(motion.dx[b] / ds), 0,
                                             static_cast<long>(w) - 1);
            for (std::size_t c = 0; c < C; ++c) {
                d_prev[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] +=
                    d_out[(c * h + fy) * w + fx];
            }
        }
    }
    return d_prev;
}

MotionField truncated_motion(const MotionField& m, std::size_t k_m)
{
    MotionField out = m;
    for (std::size_t b = 0; b < m.size(); ++b) {
        if (2 * b >= k_m) {
            out.dy[b] = 0;
        }
        if (2 * b + 1 >= k_m) {
            out.dx[b] = 0;
        }
    }
    return out;
}

double rms(std::span<const double> v)
{
    double e = 0.0;
    for (double x : v) {
        e += x * x;
    }
    return v.empty() ? 0.0 : std::sqrt(e / static_cast<double>(v.size()));
}

void normalize_block(FrameBlock& b, std::vector<double> x)
{
    b.gain = rms(x);
    if (b.gain > 0.0) {
        for (auto& v : x) {
            v /= b.gain;
        }
    } else if (!x.empty()) {
        channel::normalize_power(x);
        b.gain = 0.0;
    }
    b.symbols = std::move(x);
}

// Decoder half shared by the encoder's closed loop and the receiver.
struct FrameDecode {
    Tensor z_hat;   // zero-filled feature symbols [C, h, w]
    MotionField motion;
    Tensor context;
    Tensor y_hat;
};

FrameDecode decode_block(const Model& m, std::span<const double> x, std::size_t k_y, std::size_t k_m,
                         const Tensor* previous, std::size_t H, std::size_t W, double snr_db, Tape* inverse_tape,
                         Tape* refiner_tape)
{
    const auto& cfg = m.config;
    const std::size_t C = cfg.channels, h = feature_dim(H), w = feature_dim(W);
    FrameDecode d;
    d.z_hat = Tensor({C, h, w});
    std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k_y), d.z_hat.data());
    d.motion = zero_motion(H, W, cfg.block);
    const int R = static_cast<int>(cfg.search_radius);
    for (std::size_t j = 0; j < k_m; ++j) {
        const double v = x[k_y + j] * static_cast<double>(R);
        const int mv = std::isfinite(v) ? static_cast<int>(std::clamp(round_even(v), -static_cast<double>(R),
                                                                      static_cast<double>(R)))
                                        : 0;
        (j % 2 == 0 ? d.motion.dy : d.motion.dx)[j / 2] = mv;
    }
    d.context = previous ? context_forward(m, *previous, d.motion, refiner_tape) : Tensor({C, h, w});
    const Tensor r = m.params.forward(Model::kInverse, with_snr(d.z_hat, snr_db), inverse_tape);
    d.y_hat = d.context;
    for (std::size_t i = 0; i < r.size(); ++i) {
        d.y_hat[i] += r[i];
    }
    return d;
}

std::size_t feature_capacity(const Model& m, std::size_t H, std::size_t W)
{
    return m.config.channels * feature_dim(H) * feature_dim(W);
}

// One encoder step with every intermediate needed by training.
struct EncodeStep {
    FrameSemantics sem;
    FrameBlock block;
    std::vector<double> x;  // unnormalized symbols
    Tensor z;               // projection output
    Tensor residual;
    PriorYEval prior_y;
    PriorMEval prior_m;
    Tape projection_tape;
    FrameDecode local;      // noiseless decoder replica
    Tensor d_z_rate;        // rate gradient reaching z through the next frame's context
};

struct FrameCache {
    Tensor y, y_bar;
    MotionField motion;   // motion against the previous frame of the clip
};

std::vector<FrameCache> analyse_clip(const Model& m, const media::VideoClip& clip)
{
    std::vector<FrameCache> out(clip.length());
    for (std::size_t t = 0; t < clip.length(); ++t) {
        out[t].y = features(m, clip.frames[t]);
        out[t].y_bar = quantize(out[t].y, m.config.quant_scale);
        out[t].motion = t == 0 ? zero_motion(clip.frames[t].height, clip.frames[t].width, m.config.block)
                               : estimate_motion(clip.frames[t], clip.frames[t - 1], m.config.block,
                                                 m.config.search_radius);
    }
    return out;
}

EncodeStep encode_step(const Model& m, const FrameCache& fc, bool intra, const Tensor* previous_local, std::size_t H,
                       std::size_t W, double snr_db, bool with_tapes)
{
    const auto& cfg = m.config;
    const double q = cfg.quant_scale;
    EncodeStep s;
    auto& sem = s.sem;
    sem.intra = intra;
    sem.y = fc.y;
    sem.y_bar = fc.y_bar;
    sem.hyper_y = hyperprior(fc.y_bar);

    std::vector<double> p_m;
    std::size_t k_m_cap = 0;
    if (!intra) {
        sem.motion = fc.motion;
        sem.m_bar = interleave(fc.motion);
        sem.hyper_m = motion_hyper(sem.m_bar);
        s.prior_m = eval_prior_m(m, sem.m_bar, with_tapes);
        for (std::size_t j = 0; j < sem.m_bar.size(); ++j) {
            p_m.push_back(laplace_probability(sem.m_bar[j], s.prior_m.mu[j], s.prior_m.scale[j]));
        }
        k_m_cap = sem.m_bar.size();
    } else {
        sem.motion = zero_motion(H, W, cfg.block);
        sem.hyper_m = {0, 0};
    }
    const auto p_m_alloc = rate_allocate({}, p_m, cfg.eta_y, cfg.eta_x);
    const std::size_t k_m = std::min(p_m_alloc.k_m, k_m_cap);

    const std::size_t C = cfg.channels, h = feature_dim(H), w = feature_dim(W);
    sem.context = intra ? Tensor({C, h, w}) : context_forward(m, *previous_local, truncated_motion(fc.motion, k_m));

    s.prior_y = eval_prior_y(m, sem.y_bar, sem.context, with_tapes);
    std::vector<double> p_y(sem.y_bar.size());
    for (std::size_t i = 0; i < p_y.size(); ++i) {
        p_y[i] = laplace_probability(sem.y_bar[i], s.prior_y.mu[i], s.prior_y.scale[i]);
    }
    sem.rate = rate_allocate(p_y, p_m, cfg.eta_y, cfg.eta_x);
    sem.rate.k_y = std::min(sem.rate.k_y, feature_capacity(m, H, W));
    sem.rate.k_m = k_m;

    s.residual = Tensor(sem.y_bar.shape());
    for (std::size_t i = 0; i < s.residual.size(); ++i) {
        s.residual[i] = sem.y_bar[i] / q - sem.context[i];
    }
    s.z = m.params.forward(Model::kProjection, with_snr(s.residual, snr_db), with_tapes ? &s.projection_tape : nullptr);

    const std::size_t k_y = sem.rate.k_y;
    s.x.assign(s.z.data(), s.z.data() + k_y);
    const double R = std::max<double>(1.0, static_cast<double>(cfg.search_radius));
    for (std::size_t j = 0; j < k_m; ++j) {
        s.x.push_back(sem.m_bar[j] / R);
    }
    s.block.k_y = k_y;
    s.block.k_m = k_m;
    normalize_block(s.block, s.x);
    s.local = decode_block(m, s.x, k_y, k_m, intra ? nullptr : previous_local, H, W, snr_db, nullptr, nullptr);
    return s;
}

void check_clip(const media::VideoClip& clip)
{
    if (clip.frames.empty()) {
        throw InvalidArgument("video codec: clip has no frames");
    }
    const auto& f0 = clip.frames.front();
    for (const auto& f : clip.frames) {
        if (f.height != f0.height || f.width != f0.width || f.pixels.size() != f.height * f.width) {
            throw InvalidArgument("video codec: frames differ in shape");
        }
    }
    frame_tensor(f0);
}

std::vector<std::size_t> block_offsets(const VideoStream& s)
{
    std::vector<std::size_t> off{0};
    for (const auto& f : s.frames) {
        off.push_back(off.back() + f.symbols.size());
    }
    return off;
}

} // namespace

Tensor extract_features(const VideoCodecModel& model, const media::Frame& frame)
{
    return features(model, frame);
}

media::Frame synthesize_frame(const VideoCodecModel& model, const Tensor& y, double peak)
{
    const Tensor out = model.params.forward(Model::kSynthesizer, y);
    media::Frame f(out.dim(1), out.dim(2));
    for (std::size_t i = 0; i < f.pixels.size(); ++i) {
        f.pixels[i] = std::isfinite(out[i]) ? std::clamp(out[i], 0.0, peak) : 0.0;
    }
    return f;
}

Tensor build_context(const VideoCodecModel& model, const Tensor& previous, const MotionField& motion)
{
    return context_forward(model, previous, motion);
}

std::vector<double> feature_probabilities(const VideoCodecModel& model, const Tensor& y_bar, const Tensor& context)
{
    const auto e = eval_prior_y(model, y_bar, context, false);
    std::vector<double> p(y_bar.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = laplace_probability(y_bar[i], e.mu[i], e.scale[i]);
    }
    return p;
}

std::vector<double> motion_probabilities(const VideoCodecModel& model, std::span<const int> m_bar)
{
    const auto e = eval_prior_m(model, m_bar, false);
    std::vector<double> p(m_bar.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
        p[j] = laplace_probability(m_bar[j], e.mu[j], e.scale[j]);
    }
    return p;
}

std::size_t VideoStream::total_symbols() const noexcept
{
    std::size_t n = 0;
    for (const auto& f : frames) {
        n += f.symbols.size();
    }
    return n;
}

std::vector<double> VideoStream::concatenated() const
{
    std::vector<double> out;
    out.reserve(total_symbols());
    for (const auto& f : frames) {
        out.insert(out.end(), f.symbols.begin(), f.symbols.end());
    }
    return out;
}

std::pair<VideoStream, VideoSemantics> video_encode(const VideoCodecModel& model, const media::VideoClip& clip,
                                                    double snr_estimate_db)
{
    check_clip(clip);
    const std::size_t H = clip.frames[0].height, W = clip.frames[0].width;
    const auto cache = analyse_clip(model, clip);
    VideoStream stream;
    stream.snr_db = snr_estimate_db;
    stream.width = W;
    stream.height = H;
    stream.fps = clip.fps;
    stream.peak = clip.peak;
    VideoSemantics sem;
    Tensor previous;
    for (std::size_t t = 0; t < clip.length(); ++t) {
        auto step = encode_step(model, cache[t], t == 0, t == 0 ? nullptr : &previous, H, W, snr_estimate_db, false);
        previous = std::move(step.local.y_hat);
        stream.frames.push_back(std::move(step.block));
        sem.frames.push_back(std::move(step.sem));
    }
    return {std::move(stream), std::move(sem)};
}

media::VideoClip video_decode(const VideoCodecModel& model, const VideoStream& received, DecoderState* state)
{
    const std::size_t H = received.height, W = received.width;
    frame_tensor(media::Frame(H, W));
    const std::size_t cap_y = feature_capacity(model, H, W);
    const std::size_t cap_m = 2 * (H / model.config.block) * (W / model.config.block);
    media::VideoClip out;
    out.width = W;
    out.height = H;
    out.fps = received.fps;
    out.peak = received.peak;
    Tensor previous;
    for (std::size_t t = 0; t < received.frames.size(); ++t) {
        const auto& b = received.frames[t];
        if (b.symbols.size() != b.k_y + b.k_m) {
            throw FramingError("video_decode: frame " + std::to_string(t) + " carries " +
                               std::to_string(b.symbols.size()) + " symbols, side information declares " +
                               std::to_string(b.k_y + b.k_m));
        }
        if (b.k_y > cap_y || b.k_m > cap_m || (t == 0 && b.k_m != 0)) {
            throw FramingError("video_decode: frame " + std::to_string(t) + " declares an impossible symbol split");
        }
        std::vector<double> x(b.symbols);
        for (auto& v : x) {
            v *= b.gain;
        }
        auto d = decode_block(model, x, b.k_y, b.k_m, t == 0 ? nullptr : &previous, H, W, received.snr_db, nullptr,
                              nullptr);
        out.frames.push_back(synthesize_frame(model, d.y_hat, received.peak));
        previous = std::move(d.y_hat);
    }
    if (state) {
        state->features = previous;
    }
    return out;
}

VideoStream transmit_stream(const VideoStream& sent, const channel::ChannelConfig& channel)
{
    VideoStream r = sent;
    const auto all = sent.concatenated();
    if (all.empty()) {
        return r;
    }
    const auto rx = channel::pass(all, channel);
    const auto off = block_offsets(sent);
    for (std::size_t t = 0; t < r.frames.size(); ++t) {
        std::copy(rx.begin() + static_cast<std::ptrdiff_t>(off[t]), rx.begin() + static_cast<std::ptrdiff_t>(off[t + 1]),
                  r.frames[t].symbols.begin());
    }
    return r;
}

std::vector<std::uint8_t> encode_framing(const VideoStream& stream)
{
    detail::ByteWriter w;
    w.put(static_cast<std::uint32_t>(stream.frames.size()));
    for (const auto& f : stream.frames) {
        if (f.symbols.size() != f.k()) {
            throw FramingError("encode_framing: block length differs from k");
        }
        w.put(static_cast<std::uint32_t>(f.k_y));
        w.put(static_cast<std::uint32_t>(f.k_m));
        for (double v : f.symbols) {
            w.put_f32(v);
        }
    }
    return std::move(w.bytes());
}

void decode_framing(std::span<const std::uint8_t> bytes, VideoStream& into)
{
    try {
        detail::ByteReader r(bytes);
        const auto n = r.get<std::uint32_t>();
        std::vector<FrameBlock> frames(n);
        for (std::uint32_t t = 0; t < n; ++t) {
            auto& f = frames[t];
            f.k_y = r.get<std::uint32_t>();
            f.k_m = r.get<std::uint32_t>();
            r.require(4 * (f.k_y + f.k_m));
            f.symbols.resize(f.k_y + f.k_m);
            for (auto& v : f.symbols) {
                v = r.get_f32();
            }
            if (t < into.frames.size()) {
                f.gain = into.frames[t].gain;
            }
        }
        if (r.remaining() != 0) {
            throw FramingError("decode_framing: " + std::to_string(r.remaining()) + " trailing bytes");
        }
        into.frames = std::move(frames);
    } catch (const TruncatedPayload& e) {
        throw FramingError(std::string("decode_framing: ") + e.what());
    }
}

double rd_loss(const media::VideoClip& reference, const media::VideoClip& decoded, const VideoStream& stream,
               double lambda)
{
    return static_cast<double>(stream.total_symbols()) - std::abs(lambda) * metrics::psnr(reference, decoded);
}

double rd_objective(const media::VideoClip& reference, const media::VideoClip& decoded, double raw_rate,
                    double lambda, std::vector<std::vector<double>>* d_decoded)
{
    const double p = metrics::psnr(reference, decoded);
    if (d_decoded) {
        d_decoded->assign(decoded.length(), {});
        double sse = 0.0;
        std::size_t n = 0;
        for (std::size_t t = 0; t < decoded.length(); ++t) {
            for (std::size_t i = 0; i < decoded.frames[t].pixels.size(); ++i) {
                const double e = decoded.frames[t].pixels[i] - reference.frames[t].pixels[i];
                sse += e * e;
                ++n;
            }
        }
        const double mse = sse / static_cast<double>(n);
        // d(-|lambda| PSNR)/dv = |lambda| 10/ln10 * (2 e / n) / mse, zero once PSNR is capped.
        const bool capped = !(mse > 0.0) || p >= metrics::kPsnrCap;
        const double k = capped ? 0.0 : std::abs(lambda) * 10.0 / std::log(10.0) * 2.0 / (static_cast<double>(n) * mse);
        for (std::size_t t = 0; t < decoded.length(); ++t) {
            auto& g = (*d_decoded)[t];
            g.resize(decoded.frames[t].pixels.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] = k * (decoded.frames[t].pixels[i] - reference.frames[t].pixels[i]);
            }
        }
    }
    return raw_rate - std::abs(lambda) * p;
}

// Training ------------------------------------------------------------------------------

namespace {

struct ScopedUnfreeze {
    nn::ParameterSet& ps;
    std::vector<std::string> frozen;
    explicit ScopedUnfreeze(nn::ParameterSet& p) : ps(p), frozen(p.frozen_names())
    {
        for (const auto& n : frozen) {
            ps.set_frozen(n, false);
        }
    }
    ~ScopedUnfreeze()
    {
        for (const auto& n : frozen) {
            ps.set_frozen(n, true);
        }
    }
};

// Only the named nets receive updates from the optimiser in this stage.
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

struct FramePair {
    const media::Frame* previous;
    const media::Frame* current;
};

double train_autoencoder(Model& m, const std::vector<const media::Frame*>& frames, const VideoTrainOptions& o,
                         TrainLog& log)
{
    auto& ps = m.params;
    const double q = m.config.quant_scale;
    Rng rng(split_seed(o.seed, {0x7A3, 1}));
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    nn::Adam adam(o.lr);
    const std::size_t report = 50;
    double window = 0.0;
    for (std::size_t step = 0; step < o.autoencoder_steps; ++step) {
        adam.set_learning_rate(o.lr * (1.0 - 0.9 * static_cast<double>(step) / static_cast<double>(o.autoencoder_steps)));
        const auto& f = *frames[rng() % frames.size()];
        Tape te, ts;
        Tensor y = ps.forward(Model::kExtractor, frame_tensor(f), &te);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] += u(rng) / q;
        }
        const Tensor out = ps.forward(Model::kSynthesizer, y, &ts);
        Tensor d(out.shape());
        double mse = 0.0;
        const auto n = static_cast<double>(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double e = out[i] - f.pixels[i];
            mse += e * e / n;
            d[i] = 2.0 * e / n;
        }
        nn::Gradients g;
        const Tensor dy = ps.backward(Model::kSynthesizer, ts, d, &g);
        ps.backward(Model::kExtractor, te, dy, &g);
        adam.step(ps, g);
        window += mse;
        if ((step + 1) % report == 0) {
            log.losses.push_back(window / static_cast<double>(report));
            window = 0.0;
            check_divergence(log.final(), log.initial(), "video autoencoder pretraining");
        }
    }
    return log.empty() ? 0.0 : log.final();
}

// Projection = eigenvectors of the residual second moment, strongest first; inverse = its transpose.
void initialise_projection(Model& m, const std::vector<Tensor>& intra, const std::vector<Tensor>& inter)
{
    const std::size_t C = m.config.channels;
    auto moment = [&](const std::vector<Tensor>& rs) {
        Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(C));
        for (const auto& r : rs) {
            const std::size_t plane = r.size() / C;
            for (std::size_t p = 0; p < plane; ++p) {
                for (std::size_t a = 0; a < C; ++a) {
                    for (std::size_t b = 0; b < C; ++b) {
                        M(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += r[a * plane + p] * r[b * plane + p];
                    }
                }
            }
        }
        const double tr = M.trace();
        return tr > 0.0 ? Eigen::MatrixXd(M / tr) : M;
    };
    Eigen::MatrixXd M = moment(intra) + moment(inter);
    M += 1e-9 * Eigen::MatrixXd::Identity(M.rows(), M.cols());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    const Eigen::MatrixXd E = es.eigenvectors(); // ascending eigenvalues

    auto& proj = m.params.net(Model::kProjection).mutable_layer(0);
    auto& inv = m.params.net(Model::kInverse).mutable_layer(0);
    std::fill(proj.weight.values().begin(), proj.weight.values().end(), 0.0);
    std::fill(inv.weight.values().begin(), inv.weight.values().end(), 0.0);
    std::fill(proj.bias.values().begin(), proj.bias.values().end(), 0.0);
    std::fill(inv.bias.values().begin(), inv.bias.values().end(), 0.0);
    for (std::size_t i = 0; i < C; ++i) {
        const auto col = static_cast<Eigen::Index>(C - 1 - i);
        for (std::size_t a = 0; a < C; ++a) {
            const double v = E(static_cast<Eigen::Index>(a), col);
            proj.weight[i * (C + 1) + a] = v; // [out, in]: symbol channel i reads feature a
            inv.weight[a * (C + 1) + i] = v;  // feature a reads symbol channel i
        }
    }
}

void train_refiner(Model& m, const std::vector<std::vector<FrameCache>>& caches, const VideoTrainOptions& o)
{
    auto& ps = m.params;
    const double q = m.config.quant_scale;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t c = 0; c < caches.size(); ++c) {
        for (std::size_t t = 1; t < caches[c].size(); ++t) {
            pairs.emplace_back(c, t);
        }
    }
    if (pairs.empty()) {
        return;
    }
    Rng rng(split_seed(o.seed, {0x7A3, 2}));
    nn::Adam adam(o.lr * 0.5);
    for (std::size_t step = 0; step < o.refiner_steps; ++step) {
        const auto [c, t] = pairs[rng() % pairs.size()];
        const auto& prev = caches[c][t - 1];
        const auto& cur = caches[c][t];
        Tensor yp = prev.y_bar;
        for (auto& v : yp.values()) {
            v /= q;
        }
        const Tensor w = warp_features(yp, cur.motion, VideoCodecConfig::kDownsample);
        Tape tape;
        const Tensor r = ps.forward(Model::kRefiner, w, &tape);
        Tensor d(r.shape());
        const auto n = static_cast<double>(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
            d[i] = 2.0 * (w[i] + r[i] - cur.y_bar[i] / q) / n;
        }
        nn::Gradients g;
        ps.backward(Model::kRefiner, tape, d, &g);
        adam.step(ps, g);
    }
}

void train_priors(Model& m, const std::vector<std::vector<FrameCache>>& caches, const VideoTrainOptions& o)
{
    auto& ps = m.params;
    const double q = m.config.quant_scale;
    std::vector<std::pair<std::size_t, std::size_t>> items;
    for (std::size_t c = 0; c < caches.size(); ++c) {
        for (std::size_t t = 0; t < caches[c].size(); ++t) {
            items.emplace_back(c, t);
        }
    }
    Rng rng(split_seed(o.seed, {0x7A3, 3}));
    nn::Adam adam(o.lr);
    for (std::size_t step = 0; step < o.prior_steps; ++step) {
        const auto [c, t] = items[rng() % items.size()];
        const auto& cur = caches[c][t];
        // Intra samples are drawn as often as the first frames occur plus a quarter of the time.
        const bool intra = t == 0 || rng() % 4 == 0;
        Tensor context(cur.y_bar.shape());
        if (!intra) {
            Tensor yp = caches[c][t - 1].y_bar;
            for (auto& v : yp.values()) {
                v /= q;
            }
            context = context_forward(m, yp, cur.motion);
        }
        nn::Gradients g;
        auto ey = eval_prior_y(m, cur.y_bar, context, true);
        Tensor dy;
        prior_y_bits(m, ey, cur.y_bar, &dy);
        const double ny = static_cast<double>(cur.y_bar.size());
        for (auto& v : dy.values()) {
            v /= ny;
        }
        ps.backward(Model::kPriorY, ey.tape, dy, &g);
        if (!intra) {
            const auto mb = interleave(cur.motion);
            auto em = eval_prior_m(m, mb, true);
            Tensor dm;
            prior_m_bits(m, em, mb, &dm);
            for (auto& v : dm.values()) {
                v /= static_cast<double>(mb.size());
            }
            ps.backward(Model::kPriorM, em.tape, dm, &g);
        }
        nn::clip_global_norm(g, 10.0);
        adam.step(ps, only(g, {Model::kPriorY, Model::kPriorM}));
    }
}

} // namespace

TrainLog pretrain_video(VideoCodecModel& model, std::span<const media::VideoClip> clips,
                        const VideoTrainOptions& options)
{
    if (clips.empty()) {
        throw InvalidArgument("pretrain_video: empty training set");
    }
    std::vector<const media::Frame*> frames;
    for (const auto& c : clips) {
        check_clip(c);
        for (const auto& f : c.frames) {
            frames.push_back(&f);
        }
    }
    ScopedUnfreeze unfreeze(model.params);
    TrainLog log;
    train_autoencoder(model, frames, options, log);

    std::vector<std::vector<FrameCache>> caches;
    for (const auto& c : clips) {
        caches.push_back(analyse_clip(model, c));
    }
    const double q = model.config.quant_scale;
    std::vector<Tensor> intra, inter;
    for (const auto& cache : caches) {
        for (std::size_t t = 0; t < cache.size(); ++t) {
            Tensor cur = cache[t].y_bar;
            for (auto& v : cur.values()) {
                v /= q;
            }
            if (t == 0) {
                intra.push_back(cur);
                continue;
            }
            Tensor prev = cache[t - 1].y_bar;
            for (auto& v : prev.values()) {
                v /= q;
            }
            const Tensor w = warp_features(prev, cache[t].motion, VideoCodecConfig::kDownsample);
            for (std::size_t i = 0; i < cur.size(); ++i) {
                cur[i] -= w[i];
            }
            inter.push_back(std::move(cur));
        }
    }
    initialise_projection(model, intra, inter);
    train_refiner(model, caches, options);
    train_priors(model, caches, options);
    return log;
}

TrainLog fine_tune_video(VideoCodecModel& model, std::span<const media::VideoClip> clips,
                         const channel::ChannelConfig& channel, const VideoFineTuneOptions& options)
{
    if (clips.empty()) {
        throw InvalidArgument("fine_tune_video: empty training set");
    }
    auto& ps = model.params;
    for (const char* n : {Model::kExtractor, Model::kSynthesizer, Model::kRefiner}) {
        ps.set_frozen(n, true);
    }
    for (const char* n : {Model::kProjection, Model::kInverse, Model::kPriorY, Model::kPriorM}) {
        ps.set_frozen(n, false);
    }
    const auto& cfg = model.config;
    const double lambda = std::abs(options.lambda);

    std::vector<std::vector<FrameCache>> caches;
    std::vector<channel::ChannelConfig> draws(clips.size(), channel);
    for (std::size_t i = 0; i < clips.size(); ++i) {
        check_clip(clips[i]);
        caches.push_back(analyse_clip(model, clips[i]));
        draws[i].seed = split_seed(options.seed, {0xF1E7, 0x71D, i});
    }

    nn::Adam adam(options.lr);
    TrainLog log;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        double total = 0.0;
        for (std::size_t ci = 0; ci < clips.size(); ++ci) {
            const auto& clip = clips[ci];
            const std::size_t H = clip.frames[0].height, W = clip.frames[0].width, T = clip.length();
            nn::Gradients g;

            // Encoder (closed loop, noiseless replica) with rate gradients.
            std::vector<EncodeStep> steps;
            steps.reserve(T);
            VideoStream stream;
            stream.snr_db = channel.snr_db;
            Tensor previous;
            for (std::size_t t = 0; t < T; ++t) {
                auto s = encode_step(model, caches[ci][t], t == 0, t == 0 ? nullptr : &previous, H, W, channel.snr_db,
                                     true);
                Tensor dy;
                prior_y_bits(model, s.prior_y, s.sem.y_bar, &dy);
                for (auto& v : dy.values()) {
                    v *= cfg.eta_y;
                }
                const Tensor d_in = ps.backward(Model::kPriorY, s.prior_y.tape, dy, &g);
                if (!s.sem.intra) {
                    // Rate through the context, one step back into the replica of the previous frame.
                    auto& p = steps.back();
                    const std::size_t n = s.sem.context.size();
                    Tensor d_c(s.sem.context.shape());
                    for (std::size_t i = 0; i < n; ++i) {
                        d_c[i] = d_in[i] + dy[i];
                    }
                    const auto motion = truncated_motion(s.sem.motion, s.sem.rate.k_m);
                    Tape ref_tape, inv_tape;
                    context_forward(model, previous, motion, &ref_tape);
                    Tensor d_w = ps.backward(Model::kRefiner, ref_tape, d_c, nullptr);
                    for (std::size_t i = 0; i < n; ++i) {
                        d_w[i] += d_c[i];
                    }
                    const Tensor d_prev = warp_backward(d_w, motion, VideoCodecConfig::kDownsample);
                    ps.forward(Model::kInverse, with_snr(p.local.z_hat, channel.snr_db), &inv_tape);
                    const Tensor d_zh =
                        without_snr(ps.backward(Model::kInverse, inv_tape, d_prev, &g), cfg.channels);
                    if (p.d_z_rate.empty()) {
                        p.d_z_rate = Tensor(p.z.shape());
                    }
                    for (std::size_t j = 0; j < p.block.k_y; ++j) {
                        p.d_z_rate[j] += d_zh[j];
                    }
                }
                if (!s.sem.intra) {
                    Tensor dm;
                    prior_m_bits(model, s.prior_m, s.sem.m_bar, &dm);
                    for (auto& v : dm.values()) {
                        v *= cfg.eta_x;
                    }
                    ps.backward(Model::kPriorM, s.prior_m.tape, dm, &g);
                }
                previous = s.local.y_hat;
                stream.frames.push_back(s.block);
                steps.push_back(std::move(s));
            }

            // Channel with straight-through noise, then the receiver.
            const auto rx = transmit_stream(stream, draws[ci]);
            media::VideoClip decoded;
            decoded.width = W;
            decoded.height = H;
            decoded.fps = clip.fps;
            decoded.peak = clip.peak;
            std::vector<Tape> inv_tapes(T), syn_tapes(T);
            std::vector<std::vector<bool>> inside(T);
            Tensor prev_hat;
            for (std::size_t t = 0; t < T; ++t) {
                const auto& s = steps[t];
                std::vector<double> x = s.x;
                for (std::size_t j = 0; j < x.size(); ++j) {
                    x[j] += s.block.gain * (rx.frames[t].symbols[j] - s.block.symbols[j]);
                }
                auto d = decode_block(model, x, s.block.k_y, s.block.k_m, t == 0 ? nullptr : &prev_hat, H, W,
                                      channel.snr_db, &inv_tapes[t], nullptr);
                const Tensor out = ps.forward(Model::kSynthesizer, d.y_hat, &syn_tapes[t]);
                media::Frame f(H, W);
                inside[t].resize(out.size());
                for (std::size_t i = 0; i < out.size(); ++i) {
                    f.pixels[i] = std::clamp(out[i], 0.0, clip.peak);
                    inside[t][i] = out[i] >= 0.0 && out[i] <= clip.peak;
                }
                decoded.frames.push_back(std::move(f));
                prev_hat = std::move(d.y_hat);
            }

            std::vector<std::vector<double>> d_frames;
            rd_objective(clip, decoded, 0.0, lambda, &d_frames);
            for (std::size_t t = 0; t < T; ++t) {
                const auto& s = steps[t];
                Tensor d_out({1, H, W});
                for (std::size_t i = 0; i < d_out.size(); ++i) {
                    d_out[i] = inside[t][i] ? d_frames[t][i] : 0.0;
                }
                const Tensor d_y = ps.backward(Model::kSynthesizer, syn_tapes[t], d_out, &g);
                const Tensor d_z_hat = without_snr(ps.backward(Model::kInverse, inv_tapes[t], d_y, &g), cfg.channels);
                Tensor d_z = s.d_z_rate.empty() ? Tensor(s.z.shape()) : s.d_z_rate;
                for (std::size_t j = 0; j < s.block.k_y; ++j) {
                    d_z[j] += d_z_hat[j];
                }
                ps.backward(Model::kProjection, s.projection_tape, d_z, &g);
            }
            nn::clip_global_norm(g, 100.0);
            adam.step(ps, g);
            total += rd_loss(clip, decoded, stream, lambda);
        }
        const double epoch_loss = total / static_cast<double>(clips.size());
        log.losses.push_back(epoch_loss);
        if (!std::isfinite(epoch_loss)) {
            throw TrainingFailure("video fine-tuning: non-finite loss");
        }
    }
    return log;
}

} // namespace w2v::video
