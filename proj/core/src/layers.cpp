#include "dcspp/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "gemm.hpp"

namespace dcspp {

namespace {

int checked_kernel(int k, int stride) {
  if (k < 1 || stride < 1) throw ConfigError("convolution kernel and stride must be >= 1");
  return k;
}

// Unfolds one image (c, h, w) into columns (c*k*k, oh*ow).
template <typename T>
void im2col(const T* img, int channels, int h, int w, int k, int stride, int pad, int oh, int ow,
            T* col) {
  const std::size_t npix = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * npix;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* drow = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + ow, T{0});
            continue;
          }
          const T* srow = img + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into an image.
template <typename T>
void col2im(const T* col, int channels, int h, int w, int k, int stride, int pad, int oh, int ow,
            T* img) {
  const std::size_t npix = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * npix;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* irow = img + (static_cast<std::size_t>(c) * h + iy) * w;
          const T* srow = src + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) irow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
bool is_pointwise(const ConvParams<T>& p) {
  return p.kernel == 1 && p.stride == 1 && p.pad == 0;
}

}  // namespace

// ---------------------------------------------------------------- conv

template <typename T>
ConvParams<T>::ConvParams(int in_c, int out_c, int k, int stride_, int pad_)
    : in_channels(in_c),
      out_channels(out_c),
      kernel(checked_kernel(k, stride_)),
      stride(stride_),
      pad(pad_ < 0 ? (k - 1) / 2 : pad_),
      weights(Shape{out_c, in_c, k, k}),
      bias(static_cast<std::size_t>(out_c), T{0}) {}

template <typename T>
Shape ConvParams<T>::output_shape(const Shape& in) const {
  if (in.c != in_channels) {
    throw ShapeError("conv expects " + std::to_string(in_channels) + " input channels, got " +
                     in.str());
  }
  const int oh = (in.h + 2 * pad - kernel) / stride + 1;
  const int ow = (in.w + 2 * pad - kernel) / stride + 1;
  if (in.h + 2 * pad < kernel || in.w + 2 * pad < kernel) {
    throw ShapeError("conv input " + in.str() + " smaller than kernel " + std::to_string(kernel));
  }
  return Shape{in.n, out_channels, oh, ow};
}

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const ConvParams<T>& p) {
  const Shape os = p.output_shape(x.shape());
  const Shape& is = x.shape();
  BasicTensor<T> out(os);
  const int K = p.in_channels * p.kernel * p.kernel;
  const int N = os.h * os.w;
  std::vector<T> col;
  if (!is_pointwise(p)) col.resize(static_cast<std::size_t>(K) * N);
  for (int n = 0; n < is.n; ++n) {
    const T* src = x.plane(n, 0);
    if (!is_pointwise(p)) {
      im2col(src, is.c, is.h, is.w, p.kernel, p.stride, p.pad, os.h, os.w, col.data());
      src = col.data();
    }
    T* dst = out.plane(n, 0);
    detail::gemm(p.out_channels, N, K, p.weights.raw(), src, dst, false);
    if (p.use_bias) {
      for (int o = 0; o < p.out_channels; ++o) {
        T* plane = dst + static_cast<std::size_t>(o) * N;
        const T b = p.bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < N; ++i) plane[i] += b;
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_x,
                             const ConvParams<T>& p, bool need_grad_x) {
  const Shape& is = cached_x.shape();
  const Shape os = p.output_shape(is);
  if (grad_out.shape() != os) {
    throw ShapeError("conv backward: grad_out " + grad_out.shape().str() + " != output " +
                     os.str());
  }
  const int K = p.in_channels * p.kernel * p.kernel;
  const int N = os.h * os.w;
  const int M = p.out_channels;

  ConvGrads<T> g;
  g.grad_w = BasicTensor<T>(p.weights.shape());
  g.grad_b.assign(static_cast<std::size_t>(M), T{0});
  if (need_grad_x) g.grad_x = BasicTensor<T>(is);

  std::vector<T> col(static_cast<std::size_t>(K) * N);
  std::vector<T> colT(static_cast<std::size_t>(K) * N);
  std::vector<T> wT(static_cast<std::size_t>(K) * M);
  detail::transpose(M, K, p.weights.raw(), wT.data());

  std::vector<double> bias_acc(static_cast<std::size_t>(M), 0.0);
  for (int n = 0; n < is.n; ++n) {
    const T* gout = grad_out.plane(n, 0);
    for (int o = 0; o < M; ++o) {
      const T* plane = gout + static_cast<std::size_t>(o) * N;
      double s = 0.0;
      for (int i = 0; i < N; ++i) s += static_cast<double>(plane[i]);
      bias_acc[static_cast<std::size_t>(o)] += s;
    }

    const T* src = cached_x.plane(n, 0);
    if (!is_pointwise(p)) {
      im2col(src, is.c, is.h, is.w, p.kernel, p.stride, p.pad, os.h, os.w, col.data());
      src = col.data();
    }
    // grad_w[M x K] += G[M x N] * col^T
    detail::transpose(K, N, src, colT.data());
    detail::gemm(M, K, N, gout, colT.data(), g.grad_w.raw(), true);

    if (need_grad_x) {
      // grad_col[K x N] = W^T[K x M] * G[M x N]
      T* gx = g.grad_x.plane(n, 0);
      if (is_pointwise(p)) {
        detail::gemm(K, N, M, wT.data(), gout, gx, false);
      } else {
        detail::gemm(K, N, M, wT.data(), gout, col.data(), false);
        col2im(col.data(), is.c, is.h, is.w, p.kernel, p.stride, p.pad, os.h, os.w, gx);
      }
    }
  }
  if (p.use_bias) {
    for (int o = 0; o < M; ++o) g.grad_b[static_cast<std::size_t>(o)] = static_cast<T>(bias_acc[static_cast<std::size_t>(o)]);
  }
  return g;
}

// ---------------------------------------------------------------- batchnorm

template <typename T>
BNParams<T>::BNParams(int channels)
    : gamma(static_cast<std::size_t>(channels), T{1}),
      beta(static_cast<std::size_t>(channels), T{0}),
      running_mean(static_cast<std::size_t>(channels), T{0}),
      running_var(static_cast<std::size_t>(channels), T{1}) {}

template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x, BNParams<T>& p, bool training,
                                 BNCache<T>* cache) {
  const Shape& s = x.shape();
  if (s.c != p.channels()) {
    throw ShapeError("batchnorm has " + std::to_string(p.channels()) + " channels, input is " +
                     s.str());
  }
  if (!(p.epsilon > 0)) throw ConfigError("batchnorm epsilon must be > 0");
  BasicTensor<T> out(s);
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);

  if (training && cache != nullptr) {
    cache->x_hat = BasicTensor<T>(s);
    cache->inv_std.assign(static_cast<std::size_t>(s.c), 0.0);
    cache->valid = true;
  }

  for (int c = 0; c < s.c; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    double mean = 0.0;
    double var = 0.0;
    if (training) {
      for (int n = 0; n < s.n; ++n) {
        const T* src = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) mean += static_cast<double>(src[i]);
      }
      mean /= count;
      for (int n = 0; n < s.n; ++n) {
        const T* src = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(src[i]) - mean;
          var += d * d;
        }
      }
      var /= count;
      const double m = static_cast<double>(p.momentum);
      p.running_mean[ci] = static_cast<T>(m * static_cast<double>(p.running_mean[ci]) + (1.0 - m) * mean);
      p.running_var[ci] = static_cast<T>(m * static_cast<double>(p.running_var[ci]) + (1.0 - m) * var);
    } else {
      mean = static_cast<double>(p.running_mean[ci]);
      var = static_cast<double>(p.running_var[ci]);
    }
    const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(p.epsilon));
    const double g = static_cast<double>(p.gamma[ci]);
    const double b = static_cast<double>(p.beta[ci]);
    if (training && cache != nullptr) cache->inv_std[ci] = inv_std;
    for (int n = 0; n < s.n; ++n) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      T* xh = (training && cache != nullptr) ? cache->x_hat.plane(n, c) : nullptr;
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (static_cast<double>(src[i]) - mean) * inv_std;
        if (xh != nullptr) xh[i] = static_cast<T>(h);
        dst[i] = static_cast<T>(g * h + b);
      }
    }
  }
  return out;
}

template <typename T>
BNGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BNCache<T>& cache,
                              const BNParams<T>& p) {
  if (!cache.valid) throw StateError("batchnorm backward called without a training-mode forward");
  const Shape& s = grad_out.shape();
  if (s != cache.x_hat.shape()) {
    throw ShapeError("batchnorm backward: grad_out " + s.str() + " != cached " +
                     cache.x_hat.shape().str());
  }
  BNGrads<T> g;
  g.grad_x = BasicTensor<T>(s);
  g.grad_gamma.assign(static_cast<std::size_t>(s.c), T{0});
  g.grad_beta.assign(static_cast<std::size_t>(s.c), T{0});
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);

  for (int c = 0; c < s.c; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const T* dy = grad_out.plane(n, c);
      const T* xh = cache.x_hat.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += static_cast<double>(dy[i]);
        sum_dy_xhat += static_cast<double>(dy[i]) * static_cast<double>(xh[i]);
      }
    }
    g.grad_beta[ci] = static_cast<T>(sum_dy);
    g.grad_gamma[ci] = static_cast<T>(sum_dy_xhat);
    const double k = static_cast<double>(p.gamma[ci]) * cache.inv_std[ci] / count;
    for (int n = 0; n < s.n; ++n) {
      const T* dy = grad_out.plane(n, c);
      const T* xh = cache.x_hat.plane(n, c);
      T* dx = g.grad_x.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        dx[i] = static_cast<T>(k * (count * static_cast<double>(dy[i]) - sum_dy -
                                    static_cast<double>(xh[i]) * sum_dy_xhat));
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------- leaky ReLU

void LeakyParams::validate() const {
  if (!(a > 1.0)) throw ConfigError("leaky ReLU divisor a must be > 1, got " + std::to_string(a));
}

template <typename T>
BasicTensor<T> leaky_forward(const BasicTensor<T>& x, const LeakyParams& p) {
  p.validate();
  const T slope = static_cast<T>(1.0 / p.a);
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= T{0} ? x[i] : x[i] * slope;
  return out;
}

template <typename T>
BasicTensor<T> leaky_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& cached_x,
                              const LeakyParams& p) {
  p.validate();
  if (grad_out.shape() != cached_x.shape()) {
    throw ShapeError("leaky backward shape mismatch: " + grad_out.shape().str() + " vs " +
                     cached_x.shape().str());
  }
  const T slope = static_cast<T>(1.0 / p.a);
  BasicTensor<T> out(grad_out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = cached_x[i] >= T{0} ? grad_out[i] : grad_out[i] * slope;
  }
  return out;
}

// ---------------------------------------------------------------- max-pool

MaxPoolSpec MaxPoolSpec::strided(int size, int stride) { return MaxPoolSpec{size, stride, 0, 0}; }

MaxPoolSpec MaxPoolSpec::symmetric(int size, int stride, int pad) {
  return MaxPoolSpec{size, stride, pad, pad};
}

MaxPoolSpec MaxPoolSpec::same(int size) {
  const int total = size - 1;
  return MaxPoolSpec{size, 1, total / 2, total - total / 2};
}

void MaxPoolSpec::validate() const {
  if (size < 1 || stride < 1) throw ConfigError("max-pool size and stride must be >= 1");
  if (pad_begin < 0 || pad_end < 0 || pad_begin >= size || pad_end >= size) {
    throw ConfigError("max-pool padding must lie in [0, size)");
  }
}

Shape MaxPoolSpec::output_shape(const Shape& in) const {
  validate();
  const int eh = in.h + pad_begin + pad_end;
  const int ew = in.w + pad_begin + pad_end;
  if (eh < size || ew < size) {
    throw ShapeError("max-pool window " + std::to_string(size) + " exceeds padded input " +
                     in.str());
  }
  return Shape{in.n, in.c, (eh - size) / stride + 1, (ew - size) / stride + 1};
}

template <typename T>
BasicTensor<T> maxpool_forward(const BasicTensor<T>& x, const MaxPoolSpec& spec,
                               MaxPoolCache* cache) {
  const Shape& is = x.shape();
  const Shape os = spec.output_shape(is);
  BasicTensor<T> out(os);
  if (cache != nullptr) {
    cache->input_shape = is;
    cache->argmax.assign(os.size(), 0);
  }
  std::size_t oi = 0;
  for (int n = 0; n < is.n; ++n) {
    for (int c = 0; c < is.c; ++c) {
      const T* src = x.plane(n, c);
      const std::size_t base = x.offset(n, c, 0, 0);
      for (int oy = 0; oy < os.h; ++oy) {
        const int y0 = std::max(0, oy * spec.stride - spec.pad_begin);
        const int y1 = std::min(is.h, oy * spec.stride - spec.pad_begin + spec.size);
        for (int ox = 0; ox < os.w; ++ox, ++oi) {
          const int x0 = std::max(0, ox * spec.stride - spec.pad_begin);
          const int x1 = std::min(is.w, ox * spec.stride - spec.pad_begin + spec.size);
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = static_cast<std::size_t>(y0) * is.w + x0;
          for (int y = y0; y < y1; ++y) {
            for (int xx = x0; xx < x1; ++xx) {
              const std::size_t i = static_cast<std::size_t>(y) * is.w + xx;
              // strict '>' keeps the first maximum in row-major scan order
              if (src[i] > best) {
                best = src[i];
                best_i = i;
              }
            }
          }
          out[oi] = best;
          if (cache != nullptr) cache->argmax[oi] = base + best_i;
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> maxpool_backward(const BasicTensor<T>& grad_out, const MaxPoolCache& cache) {
  if (grad_out.size() != cache.argmax.size()) {
    throw StateError("max-pool backward: grad_out " + grad_out.shape().str() +
                     " does not match the cached forward");
  }
  BasicTensor<T> grad_in(cache.input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[cache.argmax[i]] += grad_out[i];
  return grad_in;
}

// ---------------------------------------------------------------- reorg

template <typename T>
BasicTensor<T> reorg_forward(const BasicTensor<T>& x, int stride) {
  const Shape& is = x.shape();
  if (stride < 1) throw ConfigError("reorg stride must be >= 1");
  if (is.h % stride != 0 || is.w % stride != 0) {
    throw ShapeError("reorg stride " + std::to_string(stride) + " does not divide " + is.str());
  }
  const int s = stride;
  BasicTensor<T> out(Shape{is.n, is.c * s * s, is.h / s, is.w / s});
  for (int n = 0; n < is.n; ++n) {
    for (int c = 0; c < is.c; ++c) {
      for (int dy = 0; dy < s; ++dy) {
        for (int dx = 0; dx < s; ++dx) {
          const int oc = c * s * s + dy * s + dx;
          for (int y = 0; y < is.h / s; ++y) {
            for (int xx = 0; xx < is.w / s; ++xx) {
              out.at(n, oc, y, xx) = x.at(n, c, y * s + dy, xx * s + dx);
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> reorg_backward(const BasicTensor<T>& grad_out, int stride) {
  const Shape& os = grad_out.shape();
  const int s = stride;
  if (s < 1 || os.c % (s * s) != 0) {
    throw ShapeError("reorg backward: channels of " + os.str() + " not divisible by stride^2");
  }
  BasicTensor<T> grad_in(Shape{os.n, os.c / (s * s), os.h * s, os.w * s});
  for (int n = 0; n < os.n; ++n) {
    for (int c = 0; c < os.c / (s * s); ++c) {
      for (int dy = 0; dy < s; ++dy) {
        for (int dx = 0; dx < s; ++dx) {
          const int oc = c * s * s + dy * s + dx;
          for (int y = 0; y < os.h; ++y) {
            for (int xx = 0; xx < os.w; ++xx) {
              grad_in.at(n, c, y * s + dy, xx * s + dx) = grad_out.at(n, oc, y, xx);
            }
          }
        }
      }
    }
  }
  return grad_in;
}

#define DCSPP_INSTANTIATE_LAYERS(T)                                                            \
  template struct ConvParams<T>;                                                               \
  template struct BNParams<T>;                                                                 \
  template BasicTensor<T> conv2d_forward<T>(const BasicTensor<T>&, const ConvParams<T>&);      \
  template ConvGrads<T> conv2d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                           const ConvParams<T>&, bool);                        \
  template BasicTensor<T> batchnorm_forward<T>(const BasicTensor<T>&, BNParams<T>&, bool,      \
                                               BNCache<T>*);                                   \
  template BNGrads<T> batchnorm_backward<T>(const BasicTensor<T>&, const BNCache<T>&,          \
                                            const BNParams<T>&);                               \
  template BasicTensor<T> leaky_forward<T>(const BasicTensor<T>&, const LeakyParams&);         \
  template BasicTensor<T> leaky_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                            const LeakyParams&);                               \
  template BasicTensor<T> maxpool_forward<T>(const BasicTensor<T>&, const MaxPoolSpec&,        \
                                             MaxPoolCache*);                                   \
  template BasicTensor<T> maxpool_backward<T>(const BasicTensor<T>&, const MaxPoolCache&);     \
  template BasicTensor<T> reorg_forward<T>(const BasicTensor<T>&, int);                        \
  template BasicTensor<T> reorg_backward<T>(const BasicTensor<T>&, int);

DCSPP_INSTANTIATE_LAYERS(float)
DCSPP_INSTANTIATE_LAYERS(double)

#undef DCSPP_INSTANTIATE_LAYERS

}  // namespace dcspp
