#include "tcnn/network.hpp"

#include <cmath>
#include <random>

#include "tcnn/filter_bank.hpp"
#include "tcnn/topo_graph.hpp"

namespace tcnn {

namespace {

void require_cache(bool has_cache, const std::string& layer) {
  if (!has_cache) throw UsageError(layer + ": backward called before forward");
}

Shape kernel_shape(std::size_t out, std::size_t in, std::size_t dims, std::size_t k) {
  Shape s{out, in};
  s.insert(s.end(), dims, k);
  return s;
}

} // namespace

// --- Convolution ------------------------------------------------------------------

template <typename T>
Convolution<T>::Convolution(std::string name, std::size_t spatial_dims, std::size_t in_slices,
                            std::size_t out_slices, std::size_t kernel_size, bool with_bias)
    : name_(std::move(name)), dims_(spatial_dims) {
  if (dims_ != 2 && dims_ != 3) throw ShapeError("convolutions are 2D or 3D");
  if (in_slices == 0 || out_slices == 0) throw ShapeError(name_ + ": slice counts must be positive");
  if (kernel_size % 2 == 0) throw DomainError(name_ + ": kernel size must be odd");
  weights_ = Parameter<T>(name_ + ".weight", Tensor<T>(kernel_shape(out_slices, in_slices, dims_, kernel_size)));
  if (with_bias) bias_ = Parameter<T>(name_ + ".bias", Tensor<T>(Shape{out_slices}));
}

template <typename T>
void Convolution<T>::set_mask(std::shared_ptr<const CorrespondenceMask> mask) {
  const std::size_t out = weights_.value.extent(0), in = weights_.value.extent(1);
  if (!mask) {
    weights_.channel_mask.reset();
    weights_.keep.clear();
    return;
  }
  if (mask->rows != out || mask->cols != in)
    throw ShapeError(name_ + ": mask is " + std::to_string(mask->rows) + "x" +
                     std::to_string(mask->cols) + ", layer has " + std::to_string(out) + "x" +
                     std::to_string(in) + " slice pairs");
  const std::size_t window = weights_.value.size() / (out * in);
  weights_.keep.assign(weights_.value.size(), 0);
  for (std::size_t j = 0; j < out; ++j)
    for (std::size_t i = 0; i < in; ++i)
      if (mask->at(j, i))
        std::fill_n(weights_.keep.begin() + (j * in + i) * window, window, std::uint8_t{1});
  weights_.channel_mask = std::move(mask);
  weights_.enforce_constraints();
}

template <typename T>
void Convolution<T>::set_fixed_filters(const FilterBank& bank) {
  const std::size_t out = weights_.value.extent(0), in = weights_.value.extent(1);
  const std::size_t k = weights_.value.extent(2);
  if (bank.size() != out)
    throw ShapeError(name_ + ": bank has " + std::to_string(bank.size()) + " filters, layer has " +
                     std::to_string(out) + " slices");
  if (bank.dims() != dims_ || bank.kernel_size != k)
    throw ShapeError(name_ + ": bank filters do not match the kernel shape");
  const std::size_t window = weights_.value.size() / (out * in);
  for (std::size_t j = 0; j < out; ++j) {
    const std::span<const double> f = bank.values(j);
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t t = 0; t < window; ++t)
        weights_.value[(j * in + i) * window + t] = static_cast<T>(f[t]);
  }
  weights_.frozen = true;
  weights_.zero_grad();
}

template <typename T>
Shape Convolution<T>::output_shape(const Shape& sample) const {
  if (sample.size() != dims_ + 1)
    throw ShapeError(name_ + ": expects " + std::to_string(dims_ + 1) + "-axis samples, got " +
                     shape_string(sample));
  if (sample[0] != weights_.value.extent(1))
    throw ShapeError(name_ + ": expects " + std::to_string(weights_.value.extent(1)) +
                     " input slices, got " + std::to_string(sample[0]));
  Shape out = sample;
  out[0] = weights_.value.extent(0);
  return out;
}

template <typename T>
Tensor<T> Convolution<T>::forward(const Tensor<T>& input) {
  cached_input_ = input;
  has_cache_ = true;
  return conv_forward(input, weights_.value, bias_ ? &bias_->value : nullptr);
}

template <typename T>
Tensor<T> Convolution<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  require_cache(has_cache_, name_);
  const bool need_weights = !weights_.frozen;
  ConvGrads<T> g = conv_backward(grad_out, cached_input_, weights_.value, need_input_grad,
                                 need_weights, bias_.has_value());
  if (need_weights) {
    for (std::size_t i = 0; i < g.weights.size(); ++i) weights_.grad[i] += g.weights[i];
    weights_.enforce_constraints();
  }
  if (bias_)
    for (std::size_t i = 0; i < g.bias.size(); ++i) bias_->grad[i] += g.bias[i];
  return std::move(g.input);
}

template <typename T>
std::vector<Parameter<T>*> Convolution<T>::parameters() {
  std::vector<Parameter<T>*> p{&weights_};
  if (bias_) p.push_back(&*bias_);
  return p;
}

// --- Relu / MaxPool / Flatten ------------------------------------------------------

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& input) {
  cached_input_ = input;
  has_cache_ = true;
  return relu(input);
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  require_cache(has_cache_, name());
  if (!need_input_grad) return {};
  return relu_backward(grad_out, cached_input_);
}

template <typename T>
Shape MaxPool<T>::output_shape(const Shape& sample) const {
  if (sample.size() != dims_ + 1)
    throw ShapeError(name() + ": expects " + std::to_string(dims_ + 1) + "-axis samples, got " +
                     shape_string(sample));
  if (window_ == 0) throw ShapeError("pooling window must be positive");
  Shape out = sample;
  for (std::size_t a = 1; a < out.size(); ++a) {
    out[a] /= window_;
    if (out[a] == 0) throw ShapeError(name() + ": window larger than input " + shape_string(sample));
  }
  return out;
}

template <typename T>
Tensor<T> MaxPool<T>::forward(const Tensor<T>& input) {
  PoolResult<T> r = maxpool(input, dims_, window_);
  input_shape_ = input.shape();
  argmax_ = std::move(r.argmax);
  has_cache_ = true;
  return std::move(r.output);
}

template <typename T>
Tensor<T> MaxPool<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  require_cache(has_cache_, name());
  if (!need_input_grad) return {};
  return maxpool_backward(grad_out, std::span<const std::size_t>(argmax_), input_shape_);
}

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& input) {
  input_shape_ = input.shape();
  has_cache_ = true;
  return flatten(input);
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  require_cache(has_cache_, name());
  if (!need_input_grad) return {};
  Tensor<T> g = grad_out;
  g.reshape(input_shape_);
  return g;
}

// --- FullyConnected ---------------------------------------------------------------

template <typename T>
FullyConnected<T>::FullyConnected(std::string name, std::size_t in_features, std::size_t out_features)
    : name_(std::move(name)) {
  if (in_features == 0 || out_features == 0) throw ShapeError(name_ + ": widths must be positive");
  weights_ = Parameter<T>(name_ + ".weight", Tensor<T>(Shape{out_features, in_features}));
  bias_ = Parameter<T>(name_ + ".bias", Tensor<T>(Shape{out_features}));
}

template <typename T>
Shape FullyConnected<T>::output_shape(const Shape& sample) const {
  if (sample.size() != 1 || sample[0] != weights_.value.extent(1))
    throw ShapeError(name_ + ": expects " + std::to_string(weights_.value.extent(1)) +
                     " features, got " + shape_string(sample));
  return {weights_.value.extent(0)};
}

template <typename T>
Tensor<T> FullyConnected<T>::forward(const Tensor<T>& input) {
  cached_input_ = input;
  has_cache_ = true;
  return fully_connected(input, weights_.value, bias_.value);
}

template <typename T>
Tensor<T> FullyConnected<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  require_cache(has_cache_, name_);
  LinearGrads<T> g = fully_connected_backward(grad_out, cached_input_, weights_.value, need_input_grad);
  for (std::size_t i = 0; i < g.weights.size(); ++i) weights_.grad[i] += g.weights[i];
  for (std::size_t i = 0; i < g.bias.size(); ++i) bias_.grad[i] += g.bias[i];
  return std::move(g.input);
}

// --- Network ----------------------------------------------------------------------

template <typename T>
void Network<T>::add(std::unique_ptr<Layer<T>> layer) {
  output_shape_ = layer->output_shape(output_shape_);
  layers_.push_back(std::move(layer));
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& batch) {
  if (batch.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1))
    throw ShapeError("network expects samples of shape " + shape_string(input_shape_) +
                     ", got batch " + shape_string(batch.shape()));
  Tensor<T> x = batch;
  for (auto& layer : layers_) x = layer->forward(x);
  return x;
}

template <typename T>
std::vector<Tensor<T>> Network<T>::forward_trace(const Tensor<T>& batch) {
  std::vector<Tensor<T>> trace;
  Tensor<T> x = batch;
  for (auto& layer : layers_) {
    x = layer->forward(x);
    trace.push_back(x);
  }
  return trace;
}

template <typename T>
void Network<T>::backward(const Tensor<T>& grad_logits) {
  Tensor<T> g = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, i > 0);
}

template <typename T>
std::vector<int> Network<T>::predict(const Tensor<T>& batch) {
  return argmax_rows(forward(batch));
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::parameters() {
  std::vector<Parameter<T>*> all;
  for (auto& layer : layers_)
    for (Parameter<T>* p : layer->parameters()) all.push_back(p);
  return all;
}

template <typename T>
void Network<T>::zero_grad() {
  for (Parameter<T>* p : parameters()) p->zero_grad();
}

// --- build_network ----------------------------------------------------------------

namespace {

// He-uniform: U(-b, b) with b = sqrt(6 / fan_in), fan_in per output row.
template <typename T>
void he_uniform(Parameter<T>& p, std::size_t rows, std::span<const std::size_t> fan_in,
                std::mt19937_64& rng) {
  const std::size_t cols = p.value.size() / rows;
  for (std::size_t j = 0; j < rows; ++j) {
    const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(1, fan_in[j])));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t c = 0; c < cols; ++c) p.value[j * cols + c] = static_cast<T>(dist(rng));
  }
  p.enforce_constraints();
}

std::size_t window_size(std::size_t dims, std::size_t k) {
  std::size_t w = 1;
  for (std::size_t d = 0; d < dims; ++d) w *= k;
  return w;
}

} // namespace

template <typename T>
Network<T> build_network(std::span<const LayerSpec> specs, const Shape& sample_shape,
                         std::uint64_t seed) {
  if (sample_shape.size() < 2) throw ShapeError("sample shape must have a slice axis and a grid");
  Network<T> net(sample_shape);
  std::mt19937_64 rng(seed);
  std::size_t conv_count = 0, fc_count = 0;
  for (std::size_t idx = 0; idx < specs.size(); ++idx) {
    const LayerSpec& spec = specs[idx];
    const Shape& cur = net.output_shape();
    const std::string where = "layer " + std::to_string(idx) +
                              (spec.label.empty() ? "" : " (" + spec.label + ")");
    switch (spec.kind) {
    case LayerKind::conv2d:
    case LayerKind::conv3d:
    case LayerKind::fixed_filter_2d:
    case LayerKind::fixed_filter_3d: {
      const bool fixed = spec.kind == LayerKind::fixed_filter_2d || spec.kind == LayerKind::fixed_filter_3d;
      const std::size_t dims =
          spec.kind == LayerKind::conv2d || spec.kind == LayerKind::fixed_filter_2d ? 2 : 3;
      if (cur.size() != dims + 1)
        throw ShapeError(where + ": " + std::to_string(dims) + "D layer cannot follow shape " +
                         shape_string(cur));
      const std::size_t in = cur[0];
      if (spec.in_slices != 0 && spec.in_slices != in)
        throw ShapeError(where + ": declares " + std::to_string(spec.in_slices) +
                         " input slices, incoming shape is " + shape_string(cur));
      std::size_t out = spec.out_slices;
      std::size_t k = spec.kernel_size;
      if (fixed) {
        if (!spec.bank) throw ShapeError(where + ": fixed-filter layer without a bank");
        if (out == 0) out = spec.bank->size();
        if (k == 0) k = spec.bank->kernel_size;
      } else if (spec.mask && out == 0) {
        out = spec.mask->rows;
      }
      auto conv = std::make_unique<Convolution<T>>("conv" + std::to_string(++conv_count), dims, in,
                                                   out, k, !fixed);
      if (fixed) {
        conv->set_fixed_filters(*spec.bank);
      } else {
        conv->set_mask(spec.mask);
        std::vector<std::size_t> fan_in(out, in * window_size(dims, k));
        if (spec.mask)
          for (std::size_t j = 0; j < out; ++j) fan_in[j] = spec.mask->row_count(j) * window_size(dims, k);
        he_uniform(conv->weights(), out, fan_in, rng);
      }
      net.add(std::move(conv));
      break;
    }
    case LayerKind::relu:
      net.add(std::make_unique<Relu<T>>());
      break;
    case LayerKind::maxpool2d:
    case LayerKind::maxpool3d:
      net.add(std::make_unique<MaxPool<T>>(spec.kind == LayerKind::maxpool2d ? 2 : 3,
                                           spec.kernel_size == 0 ? 2 : spec.kernel_size));
      break;
    case LayerKind::flatten:
      net.add(std::make_unique<Flatten<T>>());
      break;
    case LayerKind::fully_connected: {
      if (cur.size() > 1) net.add(std::make_unique<Flatten<T>>());
      const std::size_t in = net.output_shape()[0];
      if (spec.out_slices == 0) throw ShapeError(where + ": fully connected width must be positive");
      auto fc = std::make_unique<FullyConnected<T>>("fc" + std::to_string(++fc_count), in, spec.out_slices);
      std::vector<std::size_t> fan_in(spec.out_slices, in);
      he_uniform(fc->weights(), spec.out_slices, fan_in, rng);
      net.add(std::move(fc));
      break;
    }
    case LayerKind::softmax_xent:
      if (idx + 1 != specs.size()) throw ShapeError(where + ": the loss must be the last layer");
      if (net.output_shape().size() != 1) throw ShapeError(where + ": loss expects a flat logit vector");
      break;
    }
  }
  return net;
}

// --- Adam -------------------------------------------------------------------------

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (Parameter<T>* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(state.lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(state.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    if (p.frozen) continue;
    if (state.m[i].shape() != p.value.shape())
      throw ShapeError("Adam moments do not match parameter '" + p.name + "'");
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    T* w = p.value.data();
    const T* g = p.grad.data();
    const std::size_t n = p.value.size();
    for (std::size_t e = 0; e < n; ++e) {
      m[e] = b1 * m[e] + (T{1} - b1) * g[e];
      v[e] = b2 * v[e] + (T{1} - b2) * g[e] * g[e];
      w[e] -= step_size * m[e] / (std::sqrt(v[e]) * inv_sqrt_c2 + eps);
    }
    p.enforce_constraints();
  }
}

#define TCNN_INSTANTIATE_NETWORK(T)                                                              \
  template class Convolution<T>;                                                                 \
  template class Relu<T>;                                                                        \
  template class MaxPool<T>;                                                                     \
  template class Flatten<T>;                                                                     \
  template class FullyConnected<T>;                                                              \
  template class Network<T>;                                                                     \
  template Network<T> build_network<T>(std::span<const LayerSpec>, const Shape&, std::uint64_t); \
  template void adam_step<T>(std::span<Parameter<T>* const>, AdamState<T>&);

TCNN_INSTANTIATE_NETWORK(float)
TCNN_INSTANTIATE_NETWORK(double)

} // namespace tcnn
