#pragma once

// Minimal differentiable kernel: tensors, a fixed layer vocabulary with
// hand-written backward rules, named parameter groups and optimizers.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wav2vid/rng.hpp"

namespace w2v::nn {

class Tensor {
public:
    using Shape = std::vector<std::size_t>;

    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& vector() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Same data, new shape. Throws InvalidArgument if the element count differs.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

std::string shape_string(const Tensor::Shape& shape);
double dot(const Tensor& a, const Tensor& b);

enum class LayerKind { dense, conv1d, conv2d, deconv1d, deconv2d, pointwise_conv, relu, tanh, sigmoid };

std::string_view to_string(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in = 0; // input channels (conv) or features (dense)
    std::size_t out = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t output_padding = 0; // transposed convolutions only

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Layer {
    LayerSpec spec;
    Tensor weight;
    Tensor bias;

    bool has_parameters() const noexcept { return !weight.empty(); }
    /// Output shape for a given input shape; throws InvalidArgument on mismatch.
    Tensor::Shape output_shape(const Tensor::Shape& input) const;

    friend bool operator==(const Layer&, const Layer&) = default;
};

namespace layers {
// Weight layouts: dense [out,in]; conv [out,in,k(,k)]; deconv [in,out,k(,k)]; pointwise [out,in].
Layer dense(std::size_t in, std::size_t out);
Layer conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1, std::size_t padding = 0);
Layer conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1, std::size_t padding = 0);
Layer deconv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
               std::size_t padding = 0, std::size_t output_padding = 0);
Layer deconv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
               std::size_t padding = 0, std::size_t output_padding = 0);
Layer pointwise(std::size_t in, std::size_t out);
Layer relu();
Layer tanh();
Layer sigmoid();
} // namespace layers

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
void init_glorot(Layer& layer, Rng& rng);

class Sequential;

/// Cached intermediates of one forward pass.
struct Tape {
    const Sequential* owner = nullptr;
    std::uint64_t version = 0;
    std::vector<Tensor> inputs; // input of every layer
    Tensor output;
};

/// Gradient map keyed by "<net>.<layer>.weight" / "<net>.<layer>.bias".
using Gradients = std::map<std::string, Tensor, std::less<>>;

class Sequential {
public:
    Sequential() = default;
    explicit Sequential(std::vector<Layer> layers) : layers_(std::move(layers)) {}

    Sequential& add(Layer layer);
    void initialize(Rng& rng);

    std::size_t size() const noexcept { return layers_.size(); }
    const Layer& layer(std::size_t i) const { return layers_.at(i); }
    /// Mutable access; invalidates outstanding tapes.
    Layer& mutable_layer(std::size_t i);
    const std::vector<Layer>& layers() const noexcept { return layers_; }

    Tensor::Shape output_shape(const Tensor::Shape& input) const;

    Tensor forward(const Tensor& x, Tape* tape = nullptr) const;

    /// Propagates dL/dy back to dL/dx. When `grads` is non-null, parameter
    /// gradients are accumulated under `prefix`.
    Tensor backward(const Tape& tape, const Tensor& dy, Gradients* grads, std::string_view prefix) const;

    std::uint64_t version() const noexcept { return version_; }
    void touch() noexcept { ++version_; }

    friend bool operator==(const Sequential& a, const Sequential& b) { return a.layers_ == b.layers_; }

private:
    std::vector<Layer> layers_;
    std::uint64_t version_ = 0;
};

std::string parameter_name(std::string_view net, std::size_t layer, bool bias);

/// Named networks split into trainable and frozen groups.
class ParameterSet {
public:
    Sequential& add(std::string name, Sequential net, bool frozen = false);

    bool contains(std::string_view name) const;
    Sequential& net(std::string_view name);
    const Sequential& net(std::string_view name) const;

    void set_frozen(std::string_view name, bool frozen);
    bool frozen(std::string_view name) const;
    std::vector<std::string> names() const;
    std::vector<std::string> trainable_names() const;
    std::vector<std::string> frozen_names() const;

    Tensor forward(std::string_view name, const Tensor& x, Tape* tape = nullptr) const;
    /// Backward through a named net; gradients are recorded only for trainable nets.
    Tensor backward(std::string_view name, const Tape& tape, const Tensor& dy, Gradients* grads) const;

    /// Looks up a parameter tensor by its gradient-map name.
    Tensor* find_parameter(std::string_view param, bool* is_frozen = nullptr);
    void for_each_parameter(const std::function<void(const std::string&, const Tensor&)>& fn) const;
    std::size_t parameter_count() const;

    /// Bitwise equality of every tensor in the named nets.
    bool nets_equal(const ParameterSet& other, const std::vector<std::string>& names) const;

    friend bool operator==(const ParameterSet& a, const ParameterSet& b)
    {
        return a.nets_ == b.nets_ && a.frozen_ == b.frozen_;
    }

private:
    std::map<std::string, Sequential, std::less<>> nets_;
    std::set<std::string, std::less<>> frozen_;
};

void accumulate(Gradients& into, const Gradients& from, double scale = 1.0);
void scale(Gradients& grads, double factor);
double global_norm(const Gradients& grads);
/// Rescales so the global L2 norm does not exceed max_norm.
void clip_global_norm(Gradients& grads, double max_norm);

/// p <- p - lr * g on the trainable group. A gradient naming a frozen or
/// unknown parameter is a ContractViolation; lr must be >= 0.
void sgd_step(ParameterSet& params, const Gradients& grads, double lr);

class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps)
    {
    }
    void step(ParameterSet& params, const Gradients& grads);
    void set_learning_rate(double lr) noexcept { lr_ = lr; }
    double learning_rate() const noexcept { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>, std::less<>> moments_;
};

// Gradient verification ------------------------------------------------------

/// Scalar loss over a tensor; fills dL/dy when the pointer is non-null.
using LossFn = std::function<double(const Tensor& y, Tensor* dy)>;

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    bool passed = true;
    std::string worst; // parameter (or "input") holding the worst error
};

double relative_error(double analytic, double numeric) noexcept;

/// Central-difference gradient of f at x.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double step = 1e-4);

/// Compares analytic parameter and input gradients of `loss(net(x))` against
/// central differences with step 1e-4. Failures are reported, not thrown.
GradCheckReport grad_check(const Sequential& net, const Tensor& x, const LossFn& loss, double tol,
                           const Gradients* override_analytic = nullptr);

/// Compares an analytic gradient against central differences of f.
GradCheckReport check_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               const Tensor& analytic, double tol, double step = 1e-4);

// Checkpoints ----------------------------------------------------------------

std::vector<std::uint8_t> serialize_parameters(const ParameterSet& params);
/// Loads tensors into an already-shaped parameter set; names and shapes must match.
void deserialize_parameters(ParameterSet& params, std::span<const std::uint8_t> bytes);
void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
void load_checkpoint(ParameterSet& params, const std::filesystem::path& path);

} // namespace w2v::nn
