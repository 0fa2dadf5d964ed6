#pragma once

// Stateless forward/backward kernels. Every kernel works on a leading batch
// axis and is instantiated for float and double.
//
// Convolutions are "same" cross-correlations: stride 1, zero padding of
// (k-1)/2 on every spatial axis, so output and input share the grid.

#include <cstddef>
#include <span>
#include <vector>

#include "tcnn/tensor.hpp"

namespace tcnn {

/// input [B, C, H, W] with weights [O, C, k, k], or input [B, C, D, H, W] with
/// weights [O, C, k, k, k]. `bias` may be null, else shape [O].
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>* bias);

template <typename T>
struct ConvGrads {
  Tensor<T> input;    ///< empty unless requested
  Tensor<T> weights;  ///< empty unless requested
  Tensor<T> bias;     ///< empty unless requested
};

template <typename T>
ConvGrads<T> conv_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                           const Tensor<T>& weights, bool need_input, bool need_weights,
                           bool need_bias);

/// Rank-checked 2D / 3D entry points.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>* bias);
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& weights);
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>* bias);
template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& weights);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x);

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  ///< flat input index of each output element
};

/// Non-overlapping max pooling over the trailing `spatial_dims` axes with a
/// cubic window; trailing remainders are dropped.
template <typename T>
PoolResult<T> maxpool(const Tensor<T>& x, std::size_t spatial_dims, std::size_t window);
template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, std::span<const std::size_t> argmax,
                           const Shape& input_shape);

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x, std::size_t window = 2) {
  return maxpool(x, 2, window);
}

/// [B, ...] -> [B, prod(...)]
template <typename T>
Tensor<T> flatten(const Tensor<T>& x);

/// y = x W^T + b with x [B, F], W [O, F], b [O].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias);

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
LinearGrads<T> fully_connected_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                        const Tensor<T>& weights, bool need_input);

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad_logits;
};

/// Mean cross-entropy of softmax(logits) against `labels`, with the gradient
/// (softmax - onehot) / batch. Throws DomainError for out-of-range labels.
template <typename T>
LossResult<T> softmax_xent_loss(const Tensor<T>& logits, std::span<const int> labels);

/// Row-wise argmax of [B, C] logits.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

} // namespace tcnn
