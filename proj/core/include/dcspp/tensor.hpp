#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcspp/errors.hpp"

namespace dcspp {

/// Dimensions of a 4-D activation in (batch, channel, row, col) order.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense n/c/h/w tensor. Storage is contiguous with w varying fastest.
///
/// The engine is instantiated for float (training and inference) and for
/// double (finite-difference gradient checks).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

  /// Pointer to the (h, w) plane of channel c in batch item n.
  T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

  void fill(T value);
  bool all_finite() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return BasicTensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Throws ShapeError unless every dimension is at least 1 and the element
/// count fits in memory addressing.
void validate_shape(const Shape& shape);

template <typename T>
BasicTensor<T> tensor_new(const Shape& shape, T fill);

enum class ElementwiseOp { kAdd, kSub, kMul };

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, T b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

/// Concatenates along the channel axis; parts must agree on n, h and w.
template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts);
template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts);

/// Copies channels [begin, begin + count) out of `src`.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& src, int begin, int count);

/// Sum of all elements with 64-bit accumulation.
template <typename T>
double sum(const BasicTensor<T>& t);

}  // namespace dcspp
