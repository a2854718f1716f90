#include "dcspp/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dcspp/image.hpp"

namespace dcspp {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lr0 > 0)) throw ConfigError("lr0 must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0)) throw ConfigError("Adam eps must be > 0");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  for (const LrDrop& d : lr_drops) {
    if (d.epoch < 0 || !(d.factor >= 0)) throw ConfigError("lr drops need epoch >= 0 and factor >= 0");
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  double lr = cfg.lr0;
  for (const LrDrop& d : cfg.lr_drops) {
    if (epoch >= d.epoch) lr *= d.factor;
  }
  return lr;
}

template <typename T>
void adam_step(std::vector<ParamView<T>>& params, AdamState<T>& state, double lr,
               const TrainConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].value.size(), T{0});
      state.v[i].assign(params[i].value.size(), T{0});
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: parameter list changed");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamView<T>& p = params[i];
    if (p.grad.size() != p.value.size() || state.m[i].size() != p.value.size()) {
      throw ShapeError("adam_step: moment/gradient size mismatch for " + p.name);
    }
    const double wd = p.kind == ParamKind::kWeight ? cfg.weight_decay : 0.0;
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / c1;
      const double v_hat = vj / c2;
      const double w = p.value[j];
      p.value[j] = static_cast<T>(w - lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + wd * w));
    }
  }
}

template void adam_step<float>(std::vector<ParamView<float>>&, AdamState<float>&, double,
                               const TrainConfig&);
template void adam_step<double>(std::vector<ParamView<double>>&, AdamState<double>&, double,
                                const TrainConfig&);

// ------------------------------------------------------------ augmentation

namespace {

int frame_size(const Sample& s) {
  const Shape& sh = s.image.shape();
  if (sh.n != 1 || sh.c != 3 || sh.h != sh.w) {
    throw ShapeError("sample image must be (1, 3, T, T), got " + sh.str());
  }
  return sh.w;
}

bool keeps_a_centre(const std::vector<TruthBox>& truths, const CropWindow& win, int T) {
  for (const TruthBox& t : truths) {
    const double cx = (t.x * T - win.x0) / win.side;
    const double cy = (t.y * T - win.y0) / win.side;
    if (cx >= 0 && cx <= 1 && cy >= 0 && cy <= 1) return true;
  }
  return false;
}

}  // namespace

Sample apply_crop(const Sample& s, const CropWindow& win) {
  const int T = frame_size(s);
  if (!(win.side > 0)) throw ConfigError("crop window side must be > 0");
  Sample out{Tensor(Shape{1, 3, T, T}, 0.5f), {}};
  const double k = win.side / T;
  for (int c = 0; c < 3; ++c) {
    const float* src = s.image.plane(0, c);
    float* dst = out.image.plane(0, c);
    auto px = [&](int x, int y) -> double {
      if (x < 0 || y < 0 || x >= T || y >= T) return 0.5;
      return src[static_cast<std::size_t>(y) * T + x];
    };
    for (int v = 0; v < T; ++v) {
      const double fy = win.y0 + (v + 0.5) * k - 0.5;
      const int y0 = static_cast<int>(std::floor(fy));
      const double ay = fy - y0;
      for (int u = 0; u < T; ++u) {
        const double fx = win.x0 + (u + 0.5) * k - 0.5;
        const int x0 = static_cast<int>(std::floor(fx));
        const double ax = fx - x0;
        const double top = px(x0, y0) + (px(x0 + 1, y0) - px(x0, y0)) * ax;
        const double bottom = px(x0, y0 + 1) + (px(x0 + 1, y0 + 1) - px(x0, y0 + 1)) * ax;
        dst[static_cast<std::size_t>(v) * T + u] = static_cast<float>(top + (bottom - top) * ay);
      }
    }
  }
  for (const TruthBox& t : s.truths) {
    const double x_min = std::clamp((t.x * T - t.w * T / 2 - win.x0) / win.side, 0.0, 1.0);
    const double x_max = std::clamp((t.x * T + t.w * T / 2 - win.x0) / win.side, 0.0, 1.0);
    const double y_min = std::clamp((t.y * T - t.h * T / 2 - win.y0) / win.side, 0.0, 1.0);
    const double y_max = std::clamp((t.y * T + t.h * T / 2 - win.y0) / win.side, 0.0, 1.0);
    if ((x_max - x_min) * T < 1.0 || (y_max - y_min) * T < 1.0) continue;
    out.truths.push_back(
        {(x_min + x_max) / 2, (y_min + y_max) / 2, x_max - x_min, y_max - y_min, t.class_id});
  }
  return out;
}

Sample flip_horizontal(const Sample& s) {
  const int T = frame_size(s);
  Sample out{Tensor(s.image.shape()), s.truths};
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < T; ++y) {
      for (int x = 0; x < T; ++x) out.image.at(0, c, y, x) = s.image.at(0, c, y, T - 1 - x);
    }
  }
  for (TruthBox& t : out.truths) t.x = 1.0 - t.x;
  return out;
}

Sample augment(const Sample& s, Rng& rng, const AugmentFlags& flags) {
  const int T = frame_size(s);
  Sample out = s;
  if (flags.crop || flags.scale) {
    constexpr int kAttempts = 10;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
      const double c = flags.crop ? uniform(rng, 0.75, 1.0) : 1.0;
      const double sc = flags.scale ? uniform(rng, 0.8, 1.2) : 1.0;
      CropWindow win;
      win.side = T * c / sc;
      const double slack = T - win.side;
      win.x0 = uniform(rng, std::min(0.0, slack), std::max(0.0, slack));
      win.y0 = uniform(rng, std::min(0.0, slack), std::max(0.0, slack));
      if (s.truths.empty() || keeps_a_centre(s.truths, win, T)) {
        out = apply_crop(s, win);
        break;
      }
    }
  }
  if (flags.flip && bernoulli(rng, 0.5)) out = flip_horizontal(out);
  return out;
}

// ------------------------------------------------------------ data

std::vector<Sample> load_samples(const DatasetManifest& data, int input_size) {
  std::vector<Sample> out;
  out.reserve(data.entries.size());
  for (const ManifestEntry& e : data.entries) {
    const ImageFile img = ppm_read(e.image);
    Letterbox lb;
    Tensor x = image_to_tensor(img, input_size, &lb);
    out.push_back({std::move(x), letterbox_truths(parse_label_file(e.label), lb)});
  }
  return out;
}

// ------------------------------------------------------------ loop

namespace {

LossBreakdown scaled(LossBreakdown b, double k) {
  b.total *= k;
  b.noobj *= k;
  b.obj *= k;
  b.coord *= k;
  b.cls *= k;
  b.prior *= k;
  return b;
}

}  // namespace

std::string format_loss_record(const LossRecord& r) {
  char line[320];
  std::snprintf(line, sizeof(line), "%lld,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(r.iter), r.epoch, r.lr, r.loss.total, r.loss.noobj,
                r.loss.obj, r.loss.coord, r.loss.cls, r.loss.prior);
  return line;
}

TrainResult train(NetworkGraph<float>& net, const std::vector<Sample>& samples,
                  const TrainConfig& cfg) {
  cfg.validate();
  const NetworkConfig& ncfg = net.config();
  if (ncfg.anchors.size() != ncfg.num_anchors) {
    throw ConfigError("train: network needs " + std::to_string(ncfg.num_anchors) + " anchors, has " +
                      std::to_string(ncfg.anchors.size()));
  }
  if (samples.empty()) throw ConfigError("train: dataset is empty");
  const int T = ncfg.input_size;
  for (const Sample& s : samples) {
    if (frame_size(s) != T) throw ShapeError("train: sample size does not match the network input");
  }

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::trunc);
    if (!log) throw FormatError("cannot write loss log " + cfg.log_path.string());
    log << kLossLogHeader << "\n";
  }
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  AdamState<float> adam;
  TrainResult result;
  std::int64_t iter = 0;
  const std::size_t image_size = static_cast<std::size_t>(3) * T * T;
  bool done = false;

  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    const double lr = lr_at(epoch, cfg);
    for (std::size_t start = 0; start < order.size() && !done; start += cfg.batch_size) {
      const int n = static_cast<int>(std::min<std::size_t>(cfg.batch_size, order.size() - start));
      Tensor batch(Shape{n, 3, T, T});
      std::vector<std::vector<TruthBox>> truths(static_cast<std::size_t>(n));
      for (int b = 0; b < n; ++b) {
        const Sample& src = samples[order[start + static_cast<std::size_t>(b)]];
        const Sample aug = cfg.augment.any() ? augment(src, rng, cfg.augment) : Sample{};
        const Sample& use = cfg.augment.any() ? aug : src;
        std::copy_n(use.image.raw(), image_size, batch.raw() + image_size * b);
        truths[static_cast<std::size_t>(b)] = use.truths;
      }

      ++iter;
      const Tensor& out = net.forward(batch, true);
      Tensor grad;
      const LossBreakdown lb =
          batch_loss(out, truths, ncfg.anchors, ncfg.num_classes, cfg.loss, result.images_seen, &grad);
      if (!std::isfinite(lb.total)) {
        throw NonFiniteLoss(iter, "non-finite loss at iteration " + std::to_string(iter));
      }
      const float inv_n = 1.0f / static_cast<float>(n);
      for (float& g : grad.data()) g *= inv_n;
      net.zero_grad();
      net.backward(grad);
      auto params = net.parameters();
      adam_step(params, adam, lr, cfg);
      result.images_seen += n;

      LossRecord rec{iter, epoch, lr, scaled(lb, 1.0 / n)};
      if (log.is_open()) log << format_loss_record(rec) << "\n";
      result.log.push_back(rec);
      if (cfg.max_iterations > 0 && iter >= cfg.max_iterations) done = true;
    }
    const bool last = done || epoch + 1 == cfg.epochs;
    const bool periodic = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
    if (!cfg.checkpoint_dir.empty() && (periodic || last)) {
      char name[64];
      std::snprintf(name, sizeof(name), "epoch_%05d.weights", epoch + 1);
      save_weights(net, cfg.checkpoint_dir / name);
    }
  }
  if (log.is_open() && !log) throw FormatError("failed writing loss log " + cfg.log_path.string());
  return result;
}

}  // namespace dcspp
