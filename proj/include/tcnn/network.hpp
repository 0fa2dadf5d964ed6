#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tcnn/layer_spec.hpp"
#include "tcnn/ops.hpp"
#include "tcnn/tensor.hpp"

namespace tcnn {

/// One stage of a feed-forward network. Shapes passed to `output_shape` are
/// per-sample (no batch axis); forward/backward take batched tensors.
template <typename T>
class Layer {
public:
  virtual ~Layer() = default;

  virtual std::string name() const = 0;
  virtual Shape output_shape(const Shape& sample) const = 0;

  /// Caches whatever backward needs.
  virtual Tensor<T> forward(const Tensor<T>& input) = 0;

  /// Accumulates parameter gradients and returns dLoss/dInput (empty when
  /// `need_input_grad` is false). Throws UsageError without a prior forward.
  virtual Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) = 0;

  virtual std::vector<Parameter<T>*> parameters() { return {}; }
};

/// Same-padded 2D or 3D convolution. Weights may be frozen (fixed-filter
/// layers, no bias) and/or restricted by a slice correspondence mask.
template <typename T>
class Convolution final : public Layer<T> {
public:
  Convolution(std::string name, std::size_t spatial_dims, std::size_t in_slices,
              std::size_t out_slices, std::size_t kernel_size, bool with_bias);

  /// Restricts weights to the (out, in) pairs set in `mask` and zeroes the rest.
  void set_mask(std::shared_ptr<const CorrespondenceMask> mask);
  /// Loads fixed filters (one per output slice, single input slice) and freezes them.
  void set_fixed_filters(const FilterBank& bank);

  Parameter<T>& weights() { return weights_; }
  Parameter<T>* bias() { return bias_ ? &*bias_ : nullptr; }
  std::size_t spatial_dims() const { return dims_; }

  std::string name() const override { return name_; }
  Shape output_shape(const Shape& sample) const override;
  Tensor<T> forward(const Tensor<T>& input) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override;
  std::vector<Parameter<T>*> parameters() override;

private:
  std::string name_;
  std::size_t dims_;
  Parameter<T> weights_;
  std::optional<Parameter<T>> bias_;
  Tensor<T> cached_input_;
  bool has_cache_ = false;
};

template <typename T>
class Relu final : public Layer<T> {
public:
  std::string name() const override { return "relu"; }
  Shape output_shape(const Shape& sample) const override { return sample; }
  Tensor<T> forward(const Tensor<T>& input) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override;

private:
  Tensor<T> cached_input_;
  bool has_cache_ = false;
};

template <typename T>
class MaxPool final : public Layer<T> {
public:
  MaxPool(std::size_t spatial_dims, std::size_t window) : dims_(spatial_dims), window_(window) {}
  std::string name() const override { return dims_ == 2 ? "maxpool2d" : "maxpool3d"; }
  Shape output_shape(const Shape& sample) const override;
  Tensor<T> forward(const Tensor<T>& input) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override;

private:
  std::size_t dims_;
  std::size_t window_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
  bool has_cache_ = false;
};

template <typename T>
class Flatten final : public Layer<T> {
public:
  std::string name() const override { return "flatten"; }
  Shape output_shape(const Shape& sample) const override { return {shape_size(sample)}; }
  Tensor<T> forward(const Tensor<T>& input) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override;

private:
  Shape input_shape_;
  bool has_cache_ = false;
};

template <typename T>
class FullyConnected final : public Layer<T> {
public:
  FullyConnected(std::string name, std::size_t in_features, std::size_t out_features);

  Parameter<T>& weights() { return weights_; }
  Parameter<T>& bias() { return bias_; }

  std::string name() const override { return name_; }
  Shape output_shape(const Shape& sample) const override;
  Tensor<T> forward(const Tensor<T>& input) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override;
  std::vector<Parameter<T>*> parameters() override { return {&weights_, &bias_}; }

private:
  std::string name_;
  Parameter<T> weights_;
  Parameter<T> bias_;
  Tensor<T> cached_input_;
  bool has_cache_ = false;
};

/// A chain of layers ending in logits; the loss is applied outside.
template <typename T>
class Network {
public:
  explicit Network(Shape sample_shape) : input_shape_(sample_shape), output_shape_(std::move(sample_shape)) {}

  /// Appends a layer; throws ShapeError when it cannot consume the current output.
  void add(std::unique_ptr<Layer<T>> layer);

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

  Tensor<T> forward(const Tensor<T>& batch);
  /// Back-propagates dLoss/dLogits through every layer, accumulating grads.
  void backward(const Tensor<T>& grad_logits);
  std::vector<int> predict(const Tensor<T>& batch);

  /// Forward pass that also returns the output of every layer.
  std::vector<Tensor<T>> forward_trace(const Tensor<T>& batch);

  std::vector<Parameter<T>*> parameters();
  void zero_grad();

private:
  Shape input_shape_;
  Shape output_shape_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// Builds a network from declarative specs for per-sample input `sample_shape`
/// ([C, H, W] or [C, T, H, W]). Trainable weights get He-uniform values from a
/// generator seeded with `seed` (fan-in counts only connected inputs); biases
/// start at 0. A trailing softmax_xent spec is accepted and ignored (the loss is
/// applied by the caller).
template <typename T>
Network<T> build_network(std::span<const LayerSpec> specs, const Shape& sample_shape,
                         std::uint64_t seed);

template <typename T>
struct AdamState {
  std::size_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

/// One Adam update with bias correction. Frozen parameters are skipped;
/// masked positions stay exactly 0.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state);

} // namespace tcnn
