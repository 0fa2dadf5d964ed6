#include "tcnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace tcnn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Geometry of a same-padded convolution, with 2D treated as depth 1.
struct ConvGeometry {
  std::size_t batch, in_ch, out_ch;
  std::size_t depth, height, width;
  std::size_t kd, kh, kw;

  std::size_t plane() const { return depth * height * width; }
  std::size_t patch() const { return in_ch * kd * kh * kw; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weights) {
  const std::size_t r = input.rank();
  if (r != 4 && r != 5)
    throw ShapeError("convolution input must be rank 4 or 5, got " + shape_string(input.shape()));
  if (weights.rank() != r)
    throw ShapeError("convolution weights " + shape_string(weights.shape()) +
                     " do not match input " + shape_string(input.shape()));
  ConvGeometry g{};
  g.batch = input.extent(0);
  g.in_ch = input.extent(1);
  g.out_ch = weights.extent(0);
  if (weights.extent(1) != g.in_ch)
    throw ShapeError("weights expect " + std::to_string(weights.extent(1)) +
                     " input slices, input has " + std::to_string(g.in_ch));
  if (r == 4) {
    g.depth = 1;
    g.kd = 1;
  } else {
    g.depth = input.extent(2);
    g.kd = weights.extent(2);
  }
  g.height = input.extent(r - 2);
  g.width = input.extent(r - 1);
  g.kh = weights.extent(r - 2);
  g.kw = weights.extent(r - 1);
  for (std::size_t k : {g.kd, g.kh, g.kw})
    if (k % 2 == 0) throw ShapeError("convolution kernel extents must be odd");
  return g;
}

// col[(c, a, b, e), (z, y, x)] = in[c, z + a - pd, y + b - ph, x + e - pw] (0 outside).
template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  const long D = static_cast<long>(g.depth), H = static_cast<long>(g.height),
             W = static_cast<long>(g.width);
  const long pd = static_cast<long>(g.kd / 2), ph = static_cast<long>(g.kh / 2),
             pw = static_cast<long>(g.kw / 2);
  const std::size_t P = g.plane();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const T* src = in + c * P;
    for (long a = 0; a < static_cast<long>(g.kd); ++a)
      for (long b = 0; b < static_cast<long>(g.kh); ++b)
        for (long e = 0; e < static_cast<long>(g.kw); ++e, ++row) {
          T* dst = col + row * P;
          const long dx = e - pw;
          const long x_lo = std::max(0L, -dx), x_hi = std::min(W, W - dx);
          for (long z = 0; z < D; ++z) {
            const long sz = z + a - pd;
            for (long y = 0; y < H; ++y) {
              T* out = dst + (z * H + y) * W;
              const long sy = y + b - ph;
              if (sz < 0 || sz >= D || sy < 0 || sy >= H || x_lo >= x_hi) {
                std::fill(out, out + W, T{0});
                continue;
              }
              const T* s = src + (sz * H + sy) * W;
              std::fill(out, out + x_lo, T{0});
              std::copy(s + x_lo + dx, s + x_hi + dx, out + x_lo);
              std::fill(out + x_hi, out + W, T{0});
            }
          }
        }
  }
}

// Adjoint of im2col: accumulates col back into in.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* in) {
  const long D = static_cast<long>(g.depth), H = static_cast<long>(g.height),
             W = static_cast<long>(g.width);
  const long pd = static_cast<long>(g.kd / 2), ph = static_cast<long>(g.kh / 2),
             pw = static_cast<long>(g.kw / 2);
  const std::size_t P = g.plane();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    T* dst = in + c * P;
    for (long a = 0; a < static_cast<long>(g.kd); ++a)
      for (long b = 0; b < static_cast<long>(g.kh); ++b)
        for (long e = 0; e < static_cast<long>(g.kw); ++e, ++row) {
          const T* src = col + row * P;
          const long dx = e - pw;
          const long x_lo = std::max(0L, -dx), x_hi = std::min(W, W - dx);
          if (x_lo >= x_hi) continue;
          for (long z = 0; z < D; ++z) {
            const long sz = z + a - pd;
            if (sz < 0 || sz >= D) continue;
            for (long y = 0; y < H; ++y) {
              const long sy = y + b - ph;
              if (sy < 0 || sy >= H) continue;
              const T* s = src + (z * H + y) * W;
              T* d = dst + (sz * H + sy) * W;
              for (long x = x_lo; x < x_hi; ++x) d[x + dx] += s[x];
            }
          }
        }
  }
}

} // namespace

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>* bias) {
  const ConvGeometry g = conv_geometry(input, weights);
  if (bias && (bias->rank() != 1 || bias->extent(0) != g.out_ch))
    throw ShapeError("bias shape " + shape_string(bias->shape()) + " does not match " +
                     std::to_string(g.out_ch) + " output slices");
  Shape out_shape = input.shape();
  out_shape[1] = g.out_ch;
  Tensor<T> out(out_shape);
  const std::size_t P = g.plane(), K = g.patch();
  std::vector<T, AlignedAllocator<T>> col(K * P);
  ConstMapMat<T> w(weights.data(), g.out_ch, K);
  for (std::size_t s = 0; s < g.batch; ++s) {
    im2col(input.data() + s * g.in_ch * P, g, col.data());
    MapMat<T> o(out.data() + s * g.out_ch * P, g.out_ch, P);
    o.noalias() = w * ConstMapMat<T>(col.data(), K, P);
    if (bias)
      for (std::size_t c = 0; c < g.out_ch; ++c) o.row(c).array() += (*bias)[c];
  }
  return out;
}

template <typename T>
ConvGrads<T> conv_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                           const Tensor<T>& weights, bool need_input, bool need_weights,
                           bool need_bias) {
  const ConvGeometry g = conv_geometry(input, weights);
  Shape out_shape = input.shape();
  out_shape[1] = g.out_ch;
  if (grad_out.shape() != out_shape)
    throw ShapeError("gradient " + shape_string(grad_out.shape()) + " does not match output " +
                     shape_string(out_shape));
  const std::size_t P = g.plane(), K = g.patch();
  ConvGrads<T> grads;
  if (need_input) grads.input = Tensor<T>(input.shape());
  if (need_weights) grads.weights = Tensor<T>(weights.shape());
  if (need_bias) grads.bias = Tensor<T>(Shape{g.out_ch});
  std::vector<T, AlignedAllocator<T>> col(K * P);
  ConstMapMat<T> w(weights.data(), g.out_ch, K);
  for (std::size_t s = 0; s < g.batch; ++s) {
    ConstMapMat<T> go(grad_out.data() + s * g.out_ch * P, g.out_ch, P);
    if (need_weights) {
      im2col(input.data() + s * g.in_ch * P, g, col.data());
      MapMat<T> gw(grads.weights.data(), g.out_ch, K);
      gw.noalias() += go * ConstMapMat<T>(col.data(), K, P).transpose();
    }
    if (need_bias)
      for (std::size_t c = 0; c < g.out_ch; ++c) grads.bias[c] += go.row(c).sum();
    if (need_input) {
      MapMat<T> gc(col.data(), K, P);
      gc.noalias() = w.transpose() * go;
      col2im(col.data(), g, grads.input.data() + s * g.in_ch * P);
    }
  }
  return grads;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>* bias) {
  if (input.rank() != 4) throw ShapeError("conv2d expects [B, C, H, W] input");
  return conv_forward(input, weights, bias);
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& weights) {
  if (input.rank() != 4) throw ShapeError("conv2d expects [B, C, H, W] input");
  return conv_backward(grad_out, input, weights, true, true, true);
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>* bias) {
  if (input.rank() != 5) throw ShapeError("conv3d expects [B, C, T, H, W] input");
  return conv_forward(input, weights, bias);
}

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& weights) {
  if (input.rank() != 5) throw ShapeError("conv3d expects [B, C, T, H, W] input");
  return conv_backward(grad_out, input, weights, true, true, true);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x) {
  if (grad_out.shape() != x.shape()) throw ShapeError("relu gradient shape mismatch");
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T{0} ? grad_out[i] : T{0};
  return g;
}

template <typename T>
PoolResult<T> maxpool(const Tensor<T>& x, std::size_t spatial_dims, std::size_t window) {
  if (spatial_dims != 2 && spatial_dims != 3) throw ShapeError("pooling supports 2 or 3 axes");
  if (x.rank() != spatial_dims + 2)
    throw ShapeError("pooling input " + shape_string(x.shape()) + " has the wrong rank");
  if (window == 0) throw ShapeError("pooling window must be positive");
  const std::size_t r = x.rank();
  const std::size_t D = spatial_dims == 3 ? x.extent(2) : 1;
  const std::size_t H = x.extent(r - 2), W = x.extent(r - 1);
  const std::size_t wd = spatial_dims == 3 ? window : 1;
  const std::size_t oD = D / wd, oH = H / window, oW = W / window;
  if (oD == 0 || oH == 0 || oW == 0) throw ShapeError("pooling window larger than input");
  Shape out_shape = x.shape();
  if (spatial_dims == 3) out_shape[2] = oD;
  out_shape[r - 2] = oH;
  out_shape[r - 1] = oW;
  PoolResult<T> res{Tensor<T>(out_shape), std::vector<std::size_t>(shape_size(out_shape))};
  const std::size_t planes = x.extent(0) * x.extent(1);
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t base = pl * D * H * W;
    for (std::size_t z = 0; z < oD; ++z)
      for (std::size_t y = 0; y < oH; ++y)
        for (std::size_t xx = 0; xx < oW; ++xx, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t arg = 0;
          for (std::size_t a = 0; a < wd; ++a)
            for (std::size_t b = 0; b < window; ++b)
              for (std::size_t e = 0; e < window; ++e) {
                const std::size_t idx =
                    base + ((z * wd + a) * H + (y * window + b)) * W + (xx * window + e);
                if (x[idx] > best) {
                  best = x[idx];
                  arg = idx;
                }
              }
          res.output[o] = best;
          res.argmax[o] = arg;
        }
  }
  return res;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, std::span<const std::size_t> argmax,
                           const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) throw ShapeError("pooling gradient shape mismatch");
  Tensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (x.rank() < 1) throw ShapeError("flatten needs a batch axis");
  Tensor<T> y = x;
  y.reshape({x.extent(0), x.size() / std::max<std::size_t>(1, x.extent(0))});
  return y;
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (x.rank() != 2 || weights.rank() != 2 || weights.extent(1) != x.extent(1))
    throw ShapeError("fully connected: input " + shape_string(x.shape()) + " vs weights " +
                     shape_string(weights.shape()));
  if (bias.rank() != 1 || bias.extent(0) != weights.extent(0))
    throw ShapeError("fully connected: bias " + shape_string(bias.shape()) + " vs weights " +
                     shape_string(weights.shape()));
  const std::size_t B = x.extent(0), F = x.extent(1), O = weights.extent(0);
  Tensor<T> y({B, O});
  MapMat<T> ym(y.data(), B, O);
  ym.noalias() = ConstMapMat<T>(x.data(), B, F) * ConstMapMat<T>(weights.data(), O, F).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data(), O);
  return y;
}

template <typename T>
LinearGrads<T> fully_connected_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                        const Tensor<T>& weights, bool need_input) {
  const std::size_t B = x.extent(0), F = x.extent(1), O = weights.extent(0);
  if (grad_out.rank() != 2 || grad_out.extent(0) != B || grad_out.extent(1) != O)
    throw ShapeError("fully connected gradient shape mismatch");
  LinearGrads<T> g;
  ConstMapMat<T> go(grad_out.data(), B, O);
  g.weights = Tensor<T>({O, F});
  MapMat<T>(g.weights.data(), O, F).noalias() = go.transpose() * ConstMapMat<T>(x.data(), B, F);
  g.bias = Tensor<T>({O});
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.bias.data(), O) = go.colwise().sum();
  if (need_input) {
    g.input = Tensor<T>(x.shape());
    MapMat<T>(g.input.data(), B, F).noalias() = go * ConstMapMat<T>(weights.data(), O, F);
  }
  return g;
}

template <typename T>
LossResult<T> softmax_xent_loss(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("loss expects [batch, classes] logits");
  const std::size_t B = logits.extent(0), C = logits.extent(1);
  if (labels.size() != B) throw ShapeError("label count does not match batch size");
  LossResult<T> res{0.0, Tensor<T>(logits.shape())};
  for (std::size_t b = 0; b < B; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= C)
      throw DomainError("label " + std::to_string(label) + " outside [0, " + std::to_string(C) + ")");
    const T* row = logits.data() + b * C;
    const double mx = *std::max_element(row, row + C);
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(row[c]) - mx);
    const double log_sum = std::log(sum);
    res.loss += log_sum - (static_cast<double>(row[label]) - mx);
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::exp(static_cast<double>(row[c]) - mx - log_sum);
      res.grad_logits[b * C + c] =
          static_cast<T>((p - (static_cast<std::size_t>(label) == c ? 1.0 : 0.0)) / B);
    }
  }
  res.loss /= static_cast<double>(B);
  return res;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax expects [batch, classes]");
  const std::size_t B = logits.extent(0), C = logits.extent(1);
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = logits.data() + b * C;
    out[b] = static_cast<int>(std::max_element(row, row + C) - row);
  }
  return out;
}

#define TCNN_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> conv_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);          \
  template ConvGrads<T> conv_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool, \
                                      bool, bool);                                                 \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);        \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> conv3d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);        \
  template ConvGrads<T> conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> relu(const Tensor<T>&);                                                       \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                            \
  template PoolResult<T> maxpool(const Tensor<T>&, std::size_t, std::size_t);                      \
  template Tensor<T> maxpool_backward(const Tensor<T>&, std::span<const std::size_t>,              \
                                      const Shape&);                                               \
  template Tensor<T> flatten(const Tensor<T>&);                                                    \
  template Tensor<T> fully_connected(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template LinearGrads<T> fully_connected_backward(const Tensor<T>&, const Tensor<T>&,             \
                                                   const Tensor<T>&, bool);                        \
  template LossResult<T> softmax_xent_loss(const Tensor<T>&, std::span<const int>);                \
  template std::vector<int> argmax_rows(const Tensor<T>&);

TCNN_INSTANTIATE_OPS(float)
TCNN_INSTANTIATE_OPS(double)

} // namespace tcnn
