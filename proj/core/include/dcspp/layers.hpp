#pragma once

#include <cstddef>
#include <vector>

#include "dcspp/tensor.hpp"

namespace dcspp {

/// Square-kernel 2-D convolution. Weights are (out, in, k, k).
template <typename T>
struct ConvParams {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  bool use_bias = true;
  BasicTensor<T> weights;
  std::vector<T> bias;

  ConvParams() = default;
  /// "Same" padding (k-1)/2 is used when pad < 0.
  ConvParams(int in_c, int out_c, int k, int stride = 1, int pad = -1);

  Shape output_shape(const Shape& in) const;
};

template <typename T>
struct ConvGrads {
  BasicTensor<T> grad_x;  // empty when not requested
  BasicTensor<T> grad_w;
  std::vector<T> grad_b;
};

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const ConvParams<T>& p);

/// Gradients of a convolution given the forward input. `need_grad_x` may be
/// false for the first layer of a network.
template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_x,
                             const ConvParams<T>& p, bool need_grad_x = true);

template <typename T>
struct BNParams {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.99);

  BNParams() = default;
  explicit BNParams(int channels);
  int channels() const { return static_cast<int>(gamma.size()); }
};

/// Training-mode statistics kept for the backward pass.
template <typename T>
struct BNCache {
  BasicTensor<T> x_hat;
  std::vector<double> inv_std;
  bool valid = false;
};

template <typename T>
struct BNGrads {
  BasicTensor<T> grad_x;
  std::vector<T> grad_gamma;
  std::vector<T> grad_beta;
};

/// Training mode normalizes with batch statistics over (n, h, w) and folds
/// them into the running estimates; inference mode uses the running
/// estimates. `cache` may be null in inference mode.
template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x, BNParams<T>& p, bool training,
                                 BNCache<T>* cache = nullptr);

template <typename T>
BNGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BNCache<T>& cache,
                              const BNParams<T>& p);

/// y = x for x >= 0, y = x / a otherwise, a > 1.
struct LeakyParams {
  double a = 10.0;
  void validate() const;
};

template <typename T>
BasicTensor<T> leaky_forward(const BasicTensor<T>& x, const LeakyParams& p);
template <typename T>
BasicTensor<T> leaky_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_x,
                              const LeakyParams& p);

/// Max-pool window geometry. Positions outside the input never win a
/// window; padding only shifts where windows sit.
struct MaxPoolSpec {
  int size = 2;
  int stride = 2;
  int pad_begin = 0;
  int pad_end = 0;

  /// Non-overlapping strided pooling (size x size / stride).
  static MaxPoolSpec strided(int size, int stride);
  /// Symmetric padding on both sides.
  static MaxPoolSpec symmetric(int size, int stride, int pad);
  /// Stride-1 pooling whose output keeps the input's spatial size, for odd
  /// and even windows alike (size - 1 total padding, the extra cell at the end).
  static MaxPoolSpec same(int size);

  Shape output_shape(const Shape& in) const;
  void validate() const;
};

struct MaxPoolCache {
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename T>
BasicTensor<T> maxpool_forward(const BasicTensor<T>& x, const MaxPoolSpec& spec,
                               MaxPoolCache* cache = nullptr);
template <typename T>
BasicTensor<T> maxpool_backward(const BasicTensor<T>& grad_out, const MaxPoolCache& cache);

/// Space-to-depth: (n, c, h, w) -> (n, c*s*s, h/s, w/s) with
/// out[n, c*s*s + dy*s + dx, y, x] = in[n, c, y*s + dy, x*s + dx].
template <typename T>
BasicTensor<T> reorg_forward(const BasicTensor<T>& x, int stride);
template <typename T>
BasicTensor<T> reorg_backward(const BasicTensor<T>& grad_out, int stride);

}  // namespace dcspp
