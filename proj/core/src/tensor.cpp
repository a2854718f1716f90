#include "dcspp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace dcspp {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

void validate_shape(const Shape& shape) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw ShapeError("tensor dimensions must all be >= 1, got " + shape.str());
  }
  // Guard n*c*h*w against size_t overflow and absurd allocations.
  constexpr std::size_t kMaxElements = std::size_t{1} << 40;
  std::size_t total = 1;
  for (int d : {shape.n, shape.c, shape.h, shape.w}) {
    auto ud = static_cast<std::size_t>(d);
    if (total > kMaxElements / ud) {
      throw ShapeError("tensor shape " + shape.str() + " overflows element count");
    }
    total *= ud;
  }
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape) {
  validate_shape(shape);
  data_.assign(shape.size(), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(shape), data_(std::move(data)) {
  validate_shape(shape);
  if (data_.size() != shape.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape.str());
  }
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
BasicTensor<T> tensor_new(const Shape& shape, T fill) {
  return BasicTensor<T>(shape, fill);
}

namespace {

template <typename T>
T apply(ElementwiseOp op, T a, T b) {
  switch (op) {
    case ElementwiseOp::kAdd:
      return a + b;
    case ElementwiseOp::kSub:
      return a - b;
    case ElementwiseOp::kMul:
      return a * b;
  }
  return a;
}

}  // namespace

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  }
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b[i]);
  return out;
}

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, T b) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b);
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  return elementwise(ElementwiseOp::kMul, a, factor);
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts) {
  if (parts.empty()) throw ShapeError("concat_channels needs at least one part");
  const Shape& first = parts.front()->shape();
  int channels = 0;
  for (const auto* p : parts) {
    const Shape& s = p->shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels spatial mismatch: " + first.str() + " vs " + s.str());
    }
    channels += s.c;
  }
  BasicTensor<T> out(Shape{first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  for (int n = 0; n < first.n; ++n) {
    int c0 = 0;
    for (const auto* p : parts) {
      const std::size_t block = static_cast<std::size_t>(p->shape().c) * plane;
      std::memcpy(out.plane(n, c0), p->plane(n, 0), block * sizeof(T));
      c0 += p->shape().c;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
  std::vector<const BasicTensor<T>*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p);
  return concat_channels<T>(std::span<const BasicTensor<T>* const>(ptrs));
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& src, int begin, int count) {
  const Shape& s = src.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw ShapeError("slice_channels [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + s.str());
  }
  BasicTensor<T> out(Shape{s.n, count, s.h, s.w});
  const std::size_t block = static_cast<std::size_t>(count) * s.plane();
  for (int n = 0; n < s.n; ++n) {
    std::memcpy(out.plane(n, 0), src.plane(n, begin), block * sizeof(T));
  }
  return out;
}

template <typename T>
double sum(const BasicTensor<T>& t) {
  double acc = 0.0;
  for (T v : t.data()) acc += static_cast<double>(v);
  return acc;
}

#define DCSPP_INSTANTIATE_TENSOR(T)                                                             \
  template class BasicTensor<T>;                                                                \
  template BasicTensor<T> tensor_new<T>(const Shape&, T);                                       \
  template BasicTensor<T> elementwise<T>(ElementwiseOp, const BasicTensor<T>&,                  \
                                         const BasicTensor<T>&);                                \
  template BasicTensor<T> elementwise<T>(ElementwiseOp, const BasicTensor<T>&, T);              \
  template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                                   \
  template BasicTensor<T> concat_channels<T>(std::span<const BasicTensor<T>* const>);           \
  template BasicTensor<T> concat_channels<T>(const std::vector<BasicTensor<T>>&);               \
  template BasicTensor<T> slice_channels<T>(const BasicTensor<T>&, int, int);                   \
  template double sum<T>(const BasicTensor<T>&);

DCSPP_INSTANTIATE_TENSOR(float)
DCSPP_INSTANTIATE_TENSOR(double)

#undef DCSPP_INSTANTIATE_TENSOR

}  // namespace dcspp
