#include "dcspp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "dcspp/errors.hpp"
#include "dcspp/layers.hpp"
#include "dcspp/loss.hpp"
#include "dcspp/network.hpp"
#include "dcspp/random.hpp"

namespace dcspp {

namespace {

constexpr double kStep = 1e-3;
constexpr double kLayerThreshold = 1e-4;
constexpr double kNetworkThreshold = 1e-3;
constexpr double kLossThreshold = 1e-5;
// The loss is cheap and smooth in each raw output, so a finer step keeps
// truncation error far below its tighter threshold.
constexpr double kLossStep = 1e-5;
// Whole-network differences move thousands of activations at once, so the
// step is kept small and any draw whose +/- passes disagree on a leaky sign
// or a pooling argmax is rejected. The floor makes gradients that are
// identically zero (biases feeding a batch norm) compare on an absolute
// 1e-5 scale rather than against round-off.
constexpr double kNetworkStep = 1e-6;
constexpr double kNetworkFloor = 1e-2;
constexpr int kNetworkBatch = 8;

TensorD random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(s);
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// Values with |x| >= 0.1 so a step never crosses the leaky kink.
TensorD away_from_zero(const Shape& s, Rng& rng) {
  TensorD t(s);
  for (double& v : t.data()) v = (bernoulli(rng, 0.5) ? 1.0 : -1.0) * uniform(rng, 0.1, 1.0);
  return t;
}

// Distinct values 0.01 apart in random order, so a step never changes
// which element wins a pooling window.
TensorD distinct_values(const Shape& s, Rng& rng) {
  TensorD t(s);
  const std::size_t n = t.size();
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
  }
  for (std::size_t i = 0; i < n; ++i) t[i] = 0.01 * static_cast<double>(perm[i]) - 0.005 * n;
  return t;
}

double dot(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double central(const std::function<double()>& f, double& v, double h) {
  const double saved = v;
  v = saved + h;
  const double plus = f();
  v = saved - h;
  const double minus = f();
  v = saved;
  return (plus - minus) / (2 * h);
}

struct Tracker {
  GradCheckResult r;

  Tracker(std::string suite, std::string name, double threshold) {
    r.suite = std::move(suite);
    r.name = std::move(name);
    r.threshold = threshold;
  }
  double floor = 1e-6;

  void add(double analytic, double numeric) {
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric, floor));
    ++r.checked;
  }
  // Every element of `values` against its analytic derivative.
  void all(std::span<double> values, std::span<const double> analytic,
           const std::function<double()>& f, double h = kStep) {
    for (std::size_t i = 0; i < values.size(); ++i) add(analytic[i], central(f, values[i], h));
  }
};

GradCheckResult check_conv(Rng& rng, const std::string& name, Shape in, int out_c, int k, int stride,
                           bool bias) {
  ConvParams<double> p(in.c, out_c, k, stride);
  p.use_bias = bias;
  p.weights = random_tensor(p.weights.shape(), rng);
  for (double& b : p.bias) b = bias ? uniform(rng, -1, 1) : 0.0;
  TensorD x = random_tensor(in, rng);
  const TensorD r = random_tensor(p.output_shape(in), rng);
  auto f = [&] { return dot(conv2d_forward(x, p), r); };
  const ConvGrads<double> g = conv2d_backward(r, x, p, true);

  Tracker t("layer", name, kLayerThreshold);
  t.all(x.data(), g.grad_x.data(), f);
  t.all(p.weights.data(), g.grad_w.data(), f);
  if (bias) t.all(p.bias, g.grad_b, f);
  return t.r;
}

GradCheckResult check_batchnorm(Rng& rng) {
  const Shape in{3, 4, 3, 3};
  BNParams<double> p(in.c);
  for (int c = 0; c < in.c; ++c) {
    p.gamma[static_cast<std::size_t>(c)] = uniform(rng, 0.5, 1.5);
    p.beta[static_cast<std::size_t>(c)] = uniform(rng, -0.5, 0.5);
  }
  TensorD x = random_tensor(in, rng);
  const TensorD r = random_tensor(in, rng);
  auto f = [&] { return dot(batchnorm_forward(x, p, true), r); };
  BNCache<double> cache;
  batchnorm_forward(x, p, true, &cache);
  const BNGrads<double> g = batchnorm_backward(r, cache, p);

  Tracker t("layer", "batchnorm (training)", kLayerThreshold);
  t.all(x.data(), g.grad_x.data(), f);
  t.all(p.gamma, g.grad_gamma, f);
  t.all(p.beta, g.grad_beta, f);
  return t.r;
}

GradCheckResult check_leaky(Rng& rng) {
  const Shape in{2, 3, 4, 4};
  const LeakyParams p{10.0};
  TensorD x = away_from_zero(in, rng);
  const TensorD r = random_tensor(in, rng);
  auto f = [&] { return dot(leaky_forward(x, p), r); };
  const TensorD g = leaky_backward(r, x, p);
  Tracker t("layer", "leaky relu", kLayerThreshold);
  t.all(x.data(), g.data(), f);
  return t.r;
}

GradCheckResult check_maxpool(Rng& rng, const std::string& name, Shape in, const MaxPoolSpec& spec) {
  TensorD x = distinct_values(in, rng);
  const TensorD r = random_tensor(spec.output_shape(in), rng);
  auto f = [&] { return dot(maxpool_forward(x, spec), r); };
  MaxPoolCache cache;
  maxpool_forward(x, spec, &cache);
  const TensorD g = maxpool_backward(r, cache);
  Tracker t("layer", name, kLayerThreshold);
  t.all(x.data(), g.data(), f);
  return t.r;
}

GradCheckResult check_reorg(Rng& rng) {
  const Shape in{2, 3, 4, 6};
  TensorD x = random_tensor(in, rng);
  const TensorD r = random_tensor(Shape{2, 12, 2, 3}, rng);
  auto f = [&] { return dot(reorg_forward(x, 2), r); };
  const TensorD g = reorg_backward(r, 2);
  Tracker t("layer", "reorg /2", kLayerThreshold);
  t.all(x.data(), g.data(), f);
  return t.r;
}

// Which side of every leaky kink each activation sits on, plus every
// pooling argmax, from the last training-mode forward pass.
std::vector<std::size_t> kink_pattern(const NetworkGraph<double>& net) {
  std::vector<std::size_t> out;
  for (const auto& node : net.nodes()) {
    if (node.has_conv()) {
      for (const double v : node.conv.act_input.data()) out.push_back(v >= 0 ? 1 : 0);
    } else if (node.kind == NodeKind::kMaxPool) {
      out.insert(out.end(), node.pool_cache.argmax.begin(), node.pool_cache.argmax.end());
    }
  }
  return out;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::vector<GradCheckResult> layer_gradchecks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckResult> out;
  out.push_back(check_conv(rng, "conv 3x3/1 + bias", Shape{2, 3, 5, 5}, 4, 3, 1, true));
  out.push_back(check_conv(rng, "conv 3x3/2", Shape{2, 2, 6, 6}, 3, 3, 2, false));
  out.push_back(check_conv(rng, "conv 1x1/1", Shape{2, 5, 3, 4}, 3, 1, 1, false));
  out.push_back(check_batchnorm(rng));
  out.push_back(check_leaky(rng));
  out.push_back(check_maxpool(rng, "maxpool 2x2/2", Shape{2, 2, 6, 6}, MaxPoolSpec::strided(2, 2)));
  out.push_back(check_maxpool(rng, "maxpool 5x5/1 same", Shape{1, 2, 7, 7}, MaxPoolSpec::same(5)));
  out.push_back(check_maxpool(rng, "maxpool 2x2/1 same", Shape{1, 2, 5, 5}, MaxPoolSpec::same(2)));
  out.push_back(check_reorg(rng));
  return out;
}

GradCheckResult network_gradcheck(std::uint64_t seed, int samples) {
  NetworkConfig cfg;
  cfg.input_size = 32;
  cfg.num_classes = 2;
  cfg.num_anchors = 2;
  cfg.anchors.dims = {{0.8, 1.2}, {1.5, 1.0}};
  cfg.scale_num = 1;
  cfg.scale_den = 8;
  NetworkGraph<double> net = build_network<double>(cfg);
  init_weights(net, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const TensorD x = random_tensor(net.input_shape(kNetworkBatch), rng, 0.0, 1.0);
  const TensorD r = random_tensor(net.output_shape(kNetworkBatch), rng);

  net.zero_grad();
  net.forward(x, true);
  net.backward(r);
  auto params = net.parameters();

  Tracker t("network", "end-to-end (input 32, scale 1/8, batch " + std::to_string(kNetworkBatch) + ")",
            kNetworkThreshold);
  t.floor = kNetworkFloor;
  int drawn = 0;
  while (t.r.checked < samples) {
    if (++drawn > samples * 20) throw StateError("network gradcheck: too many kink crossings");
    auto& p = params[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(params.size()) - 1))];
    const auto j = static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(p.value.size()) - 1));
    const double saved = p.value[j];
    p.value[j] = saved + kNetworkStep;
    const double plus = dot(net.forward(x, true), r);
    const auto pattern_plus = kink_pattern(net);
    p.value[j] = saved - kNetworkStep;
    const double minus = dot(net.forward(x, true), r);
    const auto pattern_minus = kink_pattern(net);
    p.value[j] = saved;
    // a difference taken across a leaky or pooling kink measures no derivative
    if (pattern_plus != pattern_minus) continue;
    t.add(p.grad[j], (plus - minus) / (2 * kNetworkStep));
  }
  return t.r;
}

GradCheckResult loss_gradcheck(std::uint64_t seed) {
  Rng rng(seed);
  const int K = 2, C = 2, S = 2, stride = 5 + C;
  AnchorSet anchors;
  anchors.dims = {{0.6, 0.9}, {1.3, 1.1}};
  TensorD raw = random_tensor(Shape{1, K * stride, S, S}, rng);
  const std::vector<TruthBox> truths{{0.3, 0.2, 0.35, 0.4, 0}, {0.7, 0.75, 0.5, 0.3, 1}};
  LossWeights w;
  const std::int64_t images_seen = 0;  // prior term on

  const PredGrid preds = decode_predictions(raw, 0, anchors, C);
  const Assignment a = assign_targets(truths, preds, anchors, w, images_seen);
  RawGradient g;
  compute_loss(preds, truths, a, anchors, w, &g);
  auto f = [&] {
    return compute_loss(decode_predictions(raw, 0, anchors, C), truths, a, anchors, w).total;
  };

  Tracker t("loss", "detection loss (2x2 grid, K=2, C=2)", kLossThreshold);
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) {
      for (int k = 0; k < K; ++k) {
        const std::size_t base = static_cast<std::size_t>(preds.slot(i, j, k)) * stride;
        for (int c = 0; c < stride; ++c) {
          t.add(g.values[base + static_cast<std::size_t>(c)],
                central(f, raw.at(0, k * stride + c, i, j), kLossStep));
        }
      }
    }
  }
  return t.r;
}

std::vector<GradCheckResult> run_gradchecks(std::uint64_t seed) {
  std::vector<GradCheckResult> out = layer_gradchecks(seed);
  out.push_back(network_gradcheck(seed));
  out.push_back(loss_gradcheck(seed));
  return out;
}

}  // namespace dcspp
