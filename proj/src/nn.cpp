#include "wav2vid/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "wav2vid/errors.hpp"

namespace w2v::nn {

// Tensor ---------------------------------------------------------------------

namespace {

std::size_t element_count(const Tensor::Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

} // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values))
{
    if (data_.size() != element_count(shape_)) {
        throw InvalidArgument("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                              shape_string(shape_));
    }
}

std::size_t Tensor::dim(std::size_t i) const
{
    if (i >= shape_.size()) {
        throw InvalidArgument("dimension index out of range");
    }
    return shape_[i];
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (element_count(shape) != data_.size()) {
        throw InvalidArgument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const Tensor::Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

double dot(const Tensor& a, const Tensor& b)
{
    if (a.size() != b.size()) {
        throw InvalidArgument("dot: size mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

std::string_view to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::deconv1d: return "deconv1d";
    case LayerKind::deconv2d: return "deconv2d";
    case LayerKind::pointwise_conv: return "pointwise_conv";
    case LayerKind::relu: return "relu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::sigmoid: return "sigmoid";
    }
    return "unknown";
}

// Convolution kernels ----------------------------------------------------------

namespace {

// 1-D convolutions run through the 2-D kernels with a unit-height image.
struct ConvGeom {
    std::size_t cin, cout;
    std::size_t h, w;   // input spatial dims
    std::size_t kh, kw;
    std::size_t sh, sw;
    std::size_t ph, pw;
    std::size_t oh, ow; // output spatial dims
};

// Output positions o with 0 <= o*s - p + k < n, as a half-open range.
inline void valid_range(std::size_t k, std::size_t s, std::size_t p, std::size_t n, std::size_t on,
                        std::size_t& lo, std::size_t& hi)
{
    const long kk = static_cast<long>(k), ss = static_cast<long>(s), pp = static_cast<long>(p);
    long first = pp - kk;
    long l = first <= 0 ? 0 : (first + ss - 1) / ss;
    long last = static_cast<long>(n) - 1 + pp - kk;
    long h = last < 0 ? -1 : last / ss;
    lo = static_cast<std::size_t>(std::max(0L, l));
    hi = static_cast<std::size_t>(std::clamp(h + 1, 0L, static_cast<long>(on)));
    if (hi < lo) {
        hi = lo;
    }
}

void conv_forward(const double* x, const double* w, const double* b, double* y, const ConvGeom& g)
{
    const std::size_t out_plane = g.oh * g.ow, in_plane = g.h * g.w;
    for (std::size_t co = 0; co < g.cout; ++co) {
        double* yc = y + co * out_plane;
        std::fill(yc, yc + out_plane, b[co]);
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const double* xc = x + ci * in_plane;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                std::size_t oy0, oy1;
                valid_range(ky, g.sh, g.ph, g.h, g.oh, oy0, oy1);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const double wv = w[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                    std::size_t ox0, ox1;
                    valid_range(kx, g.sw, g.pw, g.w, g.ow, ox0, ox1);
                    for (std::size_t oy = oy0; oy < oy1; ++oy) {
                        const double* xr = xc + (oy * g.sh + ky - g.ph) * g.w;
                        double* yr = yc + oy * g.ow;
                        for (std::size_t ox = ox0; ox < ox1; ++ox) {
                            yr[ox] += wv * xr[ox * g.sw + kx - g.pw];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const double* x, const double* w, const double* dy, double* dx, double* dw, double* db,
                   const ConvGeom& g)
{
    const std::size_t out_plane = g.oh * g.ow, in_plane = g.h * g.w;
    for (std::size_t co = 0; co < g.cout; ++co) {
        const double* dyc = dy + co * out_plane;
        if (db) {
            double s = 0.0;
            for (std::size_t i = 0; i < out_plane; ++i) {
                s += dyc[i];
            }
            db[co] += s;
        }
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const double* xc = x + ci * in_plane;
            double* dxc = dx + ci * in_plane;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                std::size_t oy0, oy1;
                valid_range(ky, g.sh, g.ph, g.h, g.oh, oy0, oy1);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const std::size_t widx = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                    const double wv = w[widx];
                    std::size_t ox0, ox1;
                    valid_range(kx, g.sw, g.pw, g.w, g.ow, ox0, ox1);
                    double acc = 0.0;
                    for (std::size_t oy = oy0; oy < oy1; ++oy) {
                        const std::size_t row = (oy * g.sh + ky - g.ph) * g.w;
                        const double* dyr = dyc + oy * g.ow;
                        for (std::size_t ox = ox0; ox < ox1; ++ox) {
                            const std::size_t ix = row + ox * g.sw + kx - g.pw;
                            acc += xc[ix] * dyr[ox];
                            dxc[ix] += wv * dyr[ox];
                        }
                    }
                    if (dw) {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
}

// Transposed convolution: geometry describes the *output* of the forward conv
// it transposes, i.e. input dims (h,w) here are the small side.
void deconv_forward(const double* x, const double* w, const double* b, double* y, const ConvGeom& g)
{
    // x: [cin, h, w]  y: [cout, oh, ow]  w: [cin, cout, kh, kw]
    const std::size_t out_plane = g.oh * g.ow, in_plane = g.h * g.w;
    for (std::size_t co = 0; co < g.cout; ++co) {
        std::fill(y + co * out_plane, y + (co + 1) * out_plane, b[co]);
    }
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* xc = x + ci * in_plane;
        for (std::size_t co = 0; co < g.cout; ++co) {
            double* yc = y + co * out_plane;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                std::size_t iy0, iy1;
                valid_range(ky, g.sh, g.ph, g.oh, g.h, iy0, iy1);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const double wv = w[((ci * g.cout + co) * g.kh + ky) * g.kw + kx];
                    std::size_t ix0, ix1;
                    valid_range(kx, g.sw, g.pw, g.ow, g.w, ix0, ix1);
                    for (std::size_t iy = iy0; iy < iy1; ++iy) {
                        const double* xr = xc + iy * g.w;
                        double* yr = yc + (iy * g.sh + ky - g.ph) * g.ow;
                        for (std::size_t ix = ix0; ix < ix1; ++ix) {
                            yr[ix * g.sw + kx - g.pw] += wv * xr[ix];
                        }
                    }
                }
            }
        }
    }
}

void deconv_backward(const double* x, const double* w, const double* dy, double* dx, double* dw, double* db,
                     const ConvGeom& g)
{
    const std::size_t out_plane = g.oh * g.ow, in_plane = g.h * g.w;
    if (db) {
        for (std::size_t co = 0; co < g.cout; ++co) {
            double s = 0.0;
            for (std::size_t i = 0; i < out_plane; ++i) {
                s += dy[co * out_plane + i];
            }
            db[co] += s;
        }
    }
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* xc = x + ci * in_plane;
        double* dxc = dx + ci * in_plane;
        for (std::size_t co = 0; co < g.cout; ++co) {
            const double* dyc = dy + co * out_plane;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                std::size_t iy0, iy1;
                valid_range(ky, g.sh, g.ph, g.oh, g.h, iy0, iy1);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const std::size_t widx = ((ci * g.cout + co) * g.kh + ky) * g.kw + kx;
                    const double wv = w[widx];
                    std::size_t ix0, ix1;
                    valid_range(kx, g.sw, g.pw, g.ow, g.w, ix0, ix1);
                    double acc = 0.0;
                    for (std::size_t iy = iy0; iy < iy1; ++iy) {
                        const double* dyr = dyc + (iy * g.sh + ky - g.ph) * g.ow;
                        for (std::size_t ix = ix0; ix < ix1; ++ix) {
                            const double d = dyr[ix * g.sw + kx - g.pw];
                            acc += xc[iy * g.w + ix] * d;
                            dxc[iy * g.w + ix] += wv * d;
                        }
                    }
                    if (dw) {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
}

ConvGeom geometry(const LayerSpec& s, const Tensor::Shape& in, const Tensor::Shape& out)
{
    ConvGeom g{};
    g.cin = s.in;
    g.cout = s.out;
    const bool two_d = s.kind == LayerKind::conv2d || s.kind == LayerKind::deconv2d;
    g.h = two_d ? in[1] : 1;
    g.w = two_d ? in[2] : in[1];
    g.oh = two_d ? out[1] : 1;
    g.ow = two_d ? out[2] : out[1];
    g.kh = two_d ? s.kernel : 1;
    g.kw = s.kernel;
    g.sh = two_d ? s.stride : 1;
    g.sw = s.stride;
    g.ph = two_d ? s.padding : 0;
    g.pw = s.padding;
    return g;
}

std::size_t conv_out(std::size_t n, const LayerSpec& s)
{
    if (n + 2 * s.padding < s.kernel) {
        throw InvalidArgument("input extent " + std::to_string(n) + " smaller than kernel");
    }
    return (n + 2 * s.padding - s.kernel) / s.stride + 1;
}

std::size_t deconv_out(std::size_t n, const LayerSpec& s)
{
    const long v = static_cast<long>((n - 1) * s.stride + s.kernel + s.output_padding) - 2L * static_cast<long>(s.padding);
    if (v <= 0) {
        throw InvalidArgument("transposed convolution output would be empty");
    }
    return static_cast<std::size_t>(v);
}

Layer with_params(LayerSpec spec, Tensor::Shape wshape)
{
    Layer l;
    l.spec = spec;
    l.weight = Tensor(std::move(wshape));
    l.bias = Tensor({spec.out});
    return l;
}

} // namespace

// Layers -----------------------------------------------------------------------

Tensor::Shape Layer::output_shape(const Tensor::Shape& in) const
{
    const auto& s = spec;
    auto need_rank = [&](std::size_t r) {
        if (in.size() != r) {
            throw InvalidArgument(std::string(to_string(s.kind)) + " expects rank " + std::to_string(r) +
                                  " input, got " + shape_string(in));
        }
        if (in[0] != s.in) {
            throw InvalidArgument(std::string(to_string(s.kind)) + " expects " + std::to_string(s.in) +
                                  " channels, got " + shape_string(in));
        }
    };
    switch (s.kind) {
    case LayerKind::dense: {
        if (element_count(in) != s.in || in.empty()) {
            throw InvalidArgument("dense expects " + std::to_string(s.in) + " features, got " + shape_string(in));
        }
        return {s.out};
    }
    case LayerKind::conv1d: need_rank(2); return {s.out, conv_out(in[1], s)};
    case LayerKind::conv2d: need_rank(3); return {s.out, conv_out(in[1], s), conv_out(in[2], s)};
    case LayerKind::deconv1d: need_rank(2); return {s.out, deconv_out(in[1], s)};
    case LayerKind::deconv2d: need_rank(3); return {s.out, deconv_out(in[1], s), deconv_out(in[2], s)};
    case LayerKind::pointwise_conv: {
        if (in.size() < 2 || in[0] != s.in) {
            throw InvalidArgument("pointwise_conv expects [" + std::to_string(s.in) + ",...], got " + shape_string(in));
        }
        auto out = in;
        out[0] = s.out;
        return out;
    }
    case LayerKind::relu:
    case LayerKind::tanh:
    case LayerKind::sigmoid: return in;
    }
    throw InvalidArgument("unknown layer kind");
}

namespace layers {

Layer dense(std::size_t in, std::size_t out)
{
    return with_params({LayerKind::dense, in, out}, {out, in});
}

Layer conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding)
{
    return with_params({LayerKind::conv1d, in, out, kernel, stride, padding}, {out, in, kernel});
}

Layer conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding)
{
    return with_params({LayerKind::conv2d, in, out, kernel, stride, padding}, {out, in, kernel, kernel});
}

Layer deconv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
               std::size_t output_padding)
{
    return with_params({LayerKind::deconv1d, in, out, kernel, stride, padding, output_padding}, {in, out, kernel});
}

Layer deconv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
               std::size_t output_padding)
{
    return with_params({LayerKind::deconv2d, in, out, kernel, stride, padding, output_padding},
                       {in, out, kernel, kernel});
}

Layer pointwise(std::size_t in, std::size_t out)
{
    return with_params({LayerKind::pointwise_conv, in, out}, {out, in});
}

Layer relu() { return Layer{{LayerKind::relu}, {}, {}}; }
Layer tanh() { return Layer{{LayerKind::tanh}, {}, {}}; }
Layer sigmoid() { return Layer{{LayerKind::sigmoid}, {}, {}}; }

} // namespace layers

void init_glorot(Layer& layer, Rng& rng)
{
    if (!layer.has_parameters()) {
        return;
    }
    const auto& s = layer.spec;
    std::size_t receptive = 1;
    switch (s.kind) {
    case LayerKind::conv1d:
    case LayerKind::deconv1d: receptive = s.kernel; break;
    case LayerKind::conv2d:
    case LayerKind::deconv2d: receptive = s.kernel * s.kernel; break;
    default: break;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>((s.in + s.out) * receptive));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (auto& v : layer.weight.values()) {
        v = u(rng);
    }
    std::fill(layer.bias.values().begin(), layer.bias.values().end(), 0.0);
}

// Sequential -------------------------------------------------------------------

Sequential& Sequential::add(Layer layer)
{
    layers_.push_back(std::move(layer));
    touch();
    return *this;
}

void Sequential::initialize(Rng& rng)
{
    for (auto& l : layers_) {
        init_glorot(l, rng);
    }
    touch();
}

Layer& Sequential::mutable_layer(std::size_t i)
{
    touch();
    return layers_.at(i);
}

Tensor::Shape Sequential::output_shape(const Tensor::Shape& input) const
{
    auto shape = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            shape = layers_[i].output_shape(shape);
        } catch (const InvalidArgument& e) {
            throw InvalidArgument("layer " + std::to_string(i) + ": " + e.what());
        }
    }
    return shape;
}

namespace {

Tensor layer_forward(const Layer& l, const Tensor& x, const Tensor::Shape& out_shape)
{
    const auto& s = l.spec;
    Tensor y(out_shape);
    switch (s.kind) {
    case LayerKind::dense: {
        const double* w = l.weight.data();
        for (std::size_t o = 0; o < s.out; ++o) {
            double acc = l.bias[o];
            const double* wr = w + o * s.in;
            for (std::size_t i = 0; i < s.in; ++i) {
                acc += wr[i] * x[i];
            }
            y[o] = acc;
        }
        break;
    }
    case LayerKind::pointwise_conv: {
        const std::size_t n = x.size() / s.in;
        for (std::size_t o = 0; o < s.out; ++o) {
            double* yr = y.data() + o * n;
            std::fill(yr, yr + n, l.bias[o]);
            for (std::size_t i = 0; i < s.in; ++i) {
                const double wv = l.weight[o * s.in + i];
                const double* xr = x.data() + i * n;
                for (std::size_t k = 0; k < n; ++k) {
                    yr[k] += wv * xr[k];
                }
            }
        }
        break;
    }
    case LayerKind::conv1d:
    case LayerKind::conv2d:
        conv_forward(x.data(), l.weight.data(), l.bias.data(), y.data(), geometry(s, x.shape(), out_shape));
        break;
    case LayerKind::deconv1d:
    case LayerKind::deconv2d:
        deconv_forward(x.data(), l.weight.data(), l.bias.data(), y.data(), geometry(s, x.shape(), out_shape));
        break;
    case LayerKind::relu:
        for (std::size_t i = 0; i < x.size(); ++i) {
            y[i] = x[i] > 0.0 ? x[i] : 0.0;
        }
        break;
    case LayerKind::tanh:
        for (std::size_t i = 0; i < x.size(); ++i) {
            y[i] = std::tanh(x[i]);
        }
        break;
    case LayerKind::sigmoid:
        for (std::size_t i = 0; i < x.size(); ++i) {
            y[i] = 1.0 / (1.0 + std::exp(-x[i]));
        }
        break;
    }
    return y;
}

Tensor layer_backward(const Layer& l, const Tensor& x, const Tensor& dy, Tensor* dw, Tensor* db)
{
    const auto& s = l.spec;
    Tensor dx(x.shape());
    double* dwp = dw ? dw->data() : nullptr;
    double* dbp = db ? db->data() : nullptr;
    switch (s.kind) {
    case LayerKind::dense: {
        for (std::size_t o = 0; o < s.out; ++o) {
            const double g = dy[o];
            const double* wr = l.weight.data() + o * s.in;
            for (std::size_t i = 0; i < s.in; ++i) {
                dx[i] += wr[i] * g;
            }
            if (dwp) {
                double* dwr = dwp + o * s.in;
                for (std::size_t i = 0; i < s.in; ++i) {
                    dwr[i] += g * x[i];
                }
            }
            if (dbp) {
                dbp[o] += g;
            }
        }
        break;
    }
    case LayerKind::pointwise_conv: {
        const std::size_t n = x.size() / s.in;
        for (std::size_t o = 0; o < s.out; ++o) {
            const double* dyr = dy.data() + o * n;
            if (dbp) {
                double acc = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    acc += dyr[k];
                }
                dbp[o] += acc;
            }
            for (std::size_t i = 0; i < s.in; ++i) {
                const double wv = l.weight[o * s.in + i];
                const double* xr = x.data() + i * n;
                double* dxr = dx.data() + i * n;
                double acc = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    dxr[k] += wv * dyr[k];
                    acc += xr[k] * dyr[k];
                }
                if (dwp) {
                    dwp[o * s.in + i] += acc;
                }
            }
        }
        break;
    }
    case LayerKind::conv1d:
    case LayerKind::conv2d:
        conv_backward(x.data(), l.weight.data(), dy.data(), dx.data(), dwp, dbp, geometry(s, x.shape(), dy.shape()));
        break;
    case LayerKind::deconv1d:
    case LayerKind::deconv2d:
        deconv_backward(x.data(), l.weight.data(), dy.data(), dx.data(), dwp, dbp,
                        geometry(s, x.shape(), dy.shape()));
        break;
    case LayerKind::relu:
        for (std::size_t i = 0; i < x.size(); ++i) {
            dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
        }
        break;
    case LayerKind::tanh:
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double t = std::tanh(x[i]);
            dx[i] = dy[i] * (1.0 - t * t);
        }
        break;
    case LayerKind::sigmoid:
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double sg = 1.0 / (1.0 + std::exp(-x[i]));
            dx[i] = dy[i] * sg * (1.0 - sg);
        }
        break;
    }
    return dx;
}

} // namespace

Tensor Sequential::forward(const Tensor& x, Tape* tape) const
{
    if (tape) {
        tape->owner = this;
        tape->version = version_;
        tape->inputs.clear();
        tape->inputs.reserve(layers_.size());
    }
    Tensor cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Tensor::Shape out_shape;
        try {
            out_shape = layers_[i].output_shape(cur.shape());
        } catch (const InvalidArgument& e) {
            throw InvalidArgument("layer " + std::to_string(i) + " (" + std::string(to_string(layers_[i].spec.kind)) +
                                  "): " + e.what());
        }
        Tensor next = layer_forward(layers_[i], cur, out_shape);
        if (tape) {
            tape->inputs.push_back(std::move(cur));
        }
        cur = std::move(next);
    }
    if (tape) {
        tape->output = cur;
    }
    return cur;
}

Tensor Sequential::backward(const Tape& tape, const Tensor& dy, Gradients* grads, std::string_view prefix) const
{
    if (tape.owner != this || tape.version != version_ || tape.inputs.size() != layers_.size()) {
        throw InvalidArgument("backward: stale or mismatched tape");
    }
    if (dy.shape() != tape.output.shape()) {
        throw InvalidArgument("backward: gradient shape " + shape_string(dy.shape()) + " does not match output " +
                              shape_string(tape.output.shape()));
    }
    Tensor g = dy;
    for (std::size_t k = layers_.size(); k-- > 0;) {
        const Layer& l = layers_[k];
        Tensor* dw = nullptr;
        Tensor* db = nullptr;
        if (grads && l.has_parameters()) {
            auto wname = parameter_name(prefix, k, false);
            auto bname = parameter_name(prefix, k, true);
            auto wit = grads->try_emplace(wname, l.weight.shape()).first;
            auto bit = grads->try_emplace(bname, l.bias.shape()).first;
            dw = &wit->second;
            db = &bit->second;
        }
        g = layer_backward(l, tape.inputs[k], g, dw, db);
    }
    return g;
}

std::string parameter_name(std::string_view net, std::size_t layer, bool bias)
{
    std::string s(net);
    s += '.';
    s += std::to_string(layer);
    s += bias ? ".bias" : ".weight";
    return s;
}

// ParameterSet -------------------------------------------------------------------

Sequential& ParameterSet::add(std::string name, Sequential net, bool frozen)
{
    if (name.find('.') != std::string::npos) {
        throw InvalidArgument("network names may not contain '.'");
    }
    if (frozen) {
        frozen_.insert(name);
    } else {
        frozen_.erase(name);
    }
    auto [it, inserted] = nets_.insert_or_assign(std::move(name), std::move(net));
    return it->second;
}

bool ParameterSet::contains(std::string_view name) const { return nets_.find(name) != nets_.end(); }

Sequential& ParameterSet::net(std::string_view name)
{
    auto it = nets_.find(name);
    if (it == nets_.end()) {
        throw InvalidArgument("unknown network '" + std::string(name) + "'");
    }
    return it->second;
}

const Sequential& ParameterSet::net(std::string_view name) const
{
    auto it = nets_.find(name);
    if (it == nets_.end()) {
        throw InvalidArgument("unknown network '" + std::string(name) + "'");
    }
    return it->second;
}

void ParameterSet::set_frozen(std::string_view name, bool frozen)
{
    (void)net(name);
    if (frozen) {
        frozen_.emplace(name);
    } else {
        frozen_.erase(std::string(name));
    }
}

bool ParameterSet::frozen(std::string_view name) const { return frozen_.find(name) != frozen_.end(); }

std::vector<std::string> ParameterSet::names() const
{
    std::vector<std::string> out;
    for (const auto& [n, _] : nets_) {
        out.push_back(n);
    }
    return out;
}

std::vector<std::string> ParameterSet::trainable_names() const
{
    std::vector<std::string> out;
    for (const auto& [n, _] : nets_) {
        if (!frozen(n)) {
            out.push_back(n);
        }
    }
    return out;
}

std::vector<std::string> ParameterSet::frozen_names() const { return {frozen_.begin(), frozen_.end()}; }

Tensor ParameterSet::forward(std::string_view name, const Tensor& x, Tape* tape) const
{
    return net(name).forward(x, tape);
}

Tensor ParameterSet::backward(std::string_view name, const Tape& tape, const Tensor& dy, Gradients* grads) const
{
    return net(name).backward(tape, dy, frozen(name) ? nullptr : grads, name);
}

Tensor* ParameterSet::find_parameter(std::string_view param, bool* is_frozen)
{
    const auto dot1 = param.find('.');
    const auto dot2 = param.rfind('.');
    if (dot1 == std::string_view::npos || dot1 == dot2) {
        return nullptr;
    }
    auto it = nets_.find(param.substr(0, dot1));
    if (it == nets_.end()) {
        return nullptr;
    }
    std::size_t idx = 0;
    try {
        idx = std::stoul(std::string(param.substr(dot1 + 1, dot2 - dot1 - 1)));
    } catch (...) {
        return nullptr;
    }
    if (idx >= it->second.size() || !it->second.layer(idx).has_parameters()) {
        return nullptr;
    }
    const auto field = param.substr(dot2 + 1);
    if (field != "weight" && field != "bias") {
        return nullptr;
    }
    if (is_frozen) {
        *is_frozen = frozen(it->first);
    }
    Layer& l = it->second.mutable_layer(idx);
    return field == "weight" ? &l.weight : &l.bias;
}

void ParameterSet::for_each_parameter(const std::function<void(const std::string&, const Tensor&)>& fn) const
{
    for (const auto& [name, net] : nets_) {
        for (std::size_t i = 0; i < net.size(); ++i) {
            const Layer& l = net.layer(i);
            if (l.has_parameters()) {
                fn(parameter_name(name, i, false), l.weight);
                fn(parameter_name(name, i, true), l.bias);
            }
        }
    }
}

std::size_t ParameterSet::parameter_count() const
{
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

bool ParameterSet::nets_equal(const ParameterSet& other, const std::vector<std::string>& names) const
{
    for (const auto& n : names) {
        if (!contains(n) || !other.contains(n) || !(net(n) == other.net(n))) {
            return false;
        }
    }
    return true;
}

// Optimizers -------------------------------------------------------------------

void accumulate(Gradients& into, const Gradients& from, double factor)
{
    for (const auto& [name, g] : from) {
        auto [it, inserted] = into.try_emplace(name, g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
            it->second[i] += factor * g[i];
        }
    }
}

void scale(Gradients& grads, double factor)
{
    for (auto& [_, g] : grads) {
        for (auto& v : g.values()) {
            v *= factor;
        }
    }
}

double global_norm(const Gradients& grads)
{
    double s = 0.0;
    for (const auto& [_, g] : grads) {
        for (double v : g.values()) {
            s += v * v;
        }
    }
    return std::sqrt(s);
}

void clip_global_norm(Gradients& grads, double max_norm)
{
    const double n = global_norm(grads);
    if (n > max_norm && n > 0.0) {
        scale(grads, max_norm / n);
    }
}

namespace {

Tensor& resolve_trainable(ParameterSet& params, const std::string& name, const Tensor& g)
{
    bool is_frozen = false;
    Tensor* p = params.find_parameter(name, &is_frozen);
    if (!p) {
        throw ContractViolation("gradient for unknown parameter '" + name + "'");
    }
    if (is_frozen) {
        throw ContractViolation("gradient supplied for frozen parameter '" + name + "'");
    }
    if (p->shape() != g.shape()) {
        throw ContractViolation("gradient shape mismatch for '" + name + "'");
    }
    return *p;
}

} // namespace

void sgd_step(ParameterSet& params, const Gradients& grads, double lr)
{
    if (!(lr >= 0.0)) {
        throw InvalidArgument("learning rate must be non-negative");
    }
    for (const auto& [name, g] : grads) {
        (void)resolve_trainable(params, name, g);
    }
    if (lr == 0.0) {
        return;
    }
    for (const auto& [name, g] : grads) {
        Tensor& p = resolve_trainable(params, name, g);
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] -= lr * g[i];
        }
    }
}

void Adam::step(ParameterSet& params, const Gradients& grads)
{
    for (const auto& [name, g] : grads) {
        (void)resolve_trainable(params, name, g);
    }
    if (lr_ == 0.0) {
        return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
        Tensor& p = resolve_trainable(params, name, g);
        auto [it, inserted] = moments_.try_emplace(name, Tensor(g.shape()), Tensor(g.shape()));
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

// Gradient verification -----------------------------------------------------------

double relative_error(double analytic, double numeric) noexcept
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double step)
{
    Tensor g(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double fp = f(probe);
        probe[i] = orig - step;
        const double fm = f(probe);
        probe[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

GradCheckReport check_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               const Tensor& analytic, double tol, double step)
{
    GradCheckReport r;
    const Tensor numeric = numeric_gradient(f, x, step);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = relative_error(analytic[i], numeric[i]);
        ++r.checked;
        if (e > r.max_relative_error) {
            r.max_relative_error = e;
            r.worst = "element " + std::to_string(i);
        }
    }
    r.passed = r.max_relative_error < tol;
    return r;
}

GradCheckReport grad_check(const Sequential& net, const Tensor& x, const LossFn& loss, double tol,
                           const Gradients* override_analytic)
{
    constexpr double h = 1e-4;
    GradCheckReport report;

    Tape tape;
    const Tensor y = net.forward(x, &tape);
    Tensor dy(y.shape());
    (void)loss(y, &dy);
    Gradients analytic;
    const Tensor dx = net.backward(tape, dy, &analytic, "net");
    if (override_analytic) {
        analytic = *override_analytic;
    }

    auto note = [&](double e, const std::string& where) {
        ++report.checked;
        if (e >= report.max_relative_error) {
            report.max_relative_error = e;
            report.worst = where;
        }
    };

    Sequential probe = net;
    for (std::size_t k = 0; k < net.size(); ++k) {
        if (!net.layer(k).has_parameters()) {
            continue;
        }
        for (bool bias : {false, true}) {
            const auto name = parameter_name("net", k, bias);
            auto it = analytic.find(name);
            const std::size_t n = bias ? net.layer(k).bias.size() : net.layer(k).weight.size();
            for (std::size_t i = 0; i < n; ++i) {
                Tensor& p = bias ? probe.mutable_layer(k).bias : probe.mutable_layer(k).weight;
                const double orig = p[i];
                p[i] = orig + h;
                const double fp = loss(probe.forward(x), nullptr);
                p[i] = orig - h;
                const double fm = loss(probe.forward(x), nullptr);
                p[i] = orig;
                const double num = (fp - fm) / (2.0 * h);
                const double ana = it == analytic.end() ? 0.0 : it->second[i];
                note(relative_error(ana, num), name + "[" + std::to_string(i) + "]");
            }
        }
    }

    Tensor xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double fp = loss(net.forward(xp), nullptr);
        xp[i] = orig - h;
        const double fm = loss(net.forward(xp), nullptr);
        xp[i] = orig;
        note(relative_error(dx[i], (fp - fm) / (2.0 * h)), "input[" + std::to_string(i) + "]");
    }

    report.passed = report.max_relative_error < tol;
    return report;
}

// Checkpoints ---------------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[4] = {'W', '2', 'V', 'P'};
constexpr std::uint16_t kCheckpointVersion = 1;
} // namespace

std::vector<std::uint8_t> serialize_parameters(const ParameterSet& params)
{
    detail::ByteWriter w;
    w.put_bytes(std::string_view(kCheckpointMagic, 4));
    w.put<std::uint16_t>(kCheckpointVersion);
    std::uint32_t count = 0;
    params.for_each_parameter([&](const std::string&, const Tensor&) { ++count; });
    w.put<std::uint32_t>(count);
    params.for_each_parameter([&](const std::string& name, const Tensor& t) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.put_bytes(name);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) {
            w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        }
        for (double v : t.values()) {
            w.put_f32(v);
        }
    });
    return std::move(w.bytes());
}

void deserialize_parameters(ParameterSet& params, std::span<const std::uint8_t> bytes)
{
    detail::ByteReader r(bytes);
    if (bytes.size() < 4 || r.get_string(4) != std::string_view(kCheckpointMagic, 4)) {
        throw MalformedHeader("checkpoint: bad magic");
    }
    if (r.get<std::uint16_t>() != kCheckpointVersion) {
        throw MalformedHeader("checkpoint: unsupported version");
    }
    const auto count = r.get<std::uint32_t>();
    std::map<std::string, Tensor, std::less<>> loaded;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto len = r.get<std::uint16_t>();
        std::string name = r.get_string(len);
        const auto rank = r.get<std::uint8_t>();
        Tensor::Shape shape(rank);
        for (auto& d : shape) {
            d = r.get<std::uint32_t>();
        }
        const std::size_t n = element_count(shape);
        r.require(n * sizeof(float));
        std::vector<double> values(n);
        for (auto& v : values) {
            v = r.get_f32();
        }
        loaded.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    std::vector<std::string> expected;
    params.for_each_parameter([&](const std::string& name, const Tensor&) { expected.push_back(name); });
    if (expected.size() != loaded.size()) {
        throw InvalidArgument("checkpoint holds " + std::to_string(loaded.size()) + " tensors, model expects " +
                              std::to_string(expected.size()));
    }
    for (const auto& name : expected) {
        auto it = loaded.find(name);
        if (it == loaded.end()) {
            throw InvalidArgument("checkpoint is missing '" + name + "'");
        }
        Tensor* p = params.find_parameter(name);
        if (p->shape() != it->second.shape()) {
            throw InvalidArgument("checkpoint shape mismatch for '" + name + "'");
        }
        *p = it->second;
    }
}

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path)
{
    detail::write_file(path, serialize_parameters(params));
}

void load_checkpoint(ParameterSet& params, const std::filesystem::path& path)
{
    const auto bytes = detail::read_file(path);
    deserialize_parameters(params, bytes);
}

} // namespace w2v::nn
