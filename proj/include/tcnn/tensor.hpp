#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "tcnn/error.hpp"

namespace tcnn {

struct CorrespondenceMask;

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage, so vectorized kernels see the same alignment on
/// every allocation and results do not depend on where the heap put a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of T with a fixed shape.
template <typename T>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

  Tensor(Shape shape, const std::vector<T>& values)
      : shape_(std::move(shape)), values_(values.begin(), values.end()) {
    if (values_.size() != shape_size(shape_))
      throw ShapeError("value count " + std::to_string(values_.size()) +
                       " does not match shape " + shape_string(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  void fill(T value) { std::fill(values_.begin(), values_.end(), value); }

  /// Same values, new shape of equal size.
  void reshape(Shape shape) {
    if (shape_size(shape) != values_.size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    shape_ = std::move(shape);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::copy(values_.begin(), values_.end(), out.data());
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

private:
  Shape shape_;
  std::vector<T, AlignedAllocator<T>> values_;
};

/// A learnable (or frozen) tensor with its gradient.
///
/// `keep` is an optional elementwise connectivity pattern: positions with
/// keep == 0 hold exactly 0 in both value and grad at all times. It is derived
/// from `channel_mask` for convolution weights.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;
  std::shared_ptr<const CorrespondenceMask> channel_mask;
  std::vector<std::uint8_t> keep;

  Parameter() = default;
  Parameter(std::string name_, Tensor<T> value_, bool frozen_ = false)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), frozen(frozen_) {}

  void zero_grad() { grad.fill(T{0}); }

  /// Re-establishes the frozen / mask invariants on grad (and mask on value).
  void enforce_constraints() {
    if (frozen) grad.fill(T{0});
    if (keep.empty()) return;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (!keep[i]) {
        value[i] = T{0};
        grad[i] = T{0};
      }
    }
  }
};

} // namespace tcnn
