#include "dcspp/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dcspp/detection.hpp"

namespace dcspp {

namespace {

constexpr double kProbFloor = 1e-15;

double sigmoid_grad(double v) { return v * (1.0 - v); }

// ((target - v) * v(1 - v))^2 for a post-sigmoid value v, with its
// derivative with respect to the pre-sigmoid input.
struct ScaledResidual {
  double value;
  double d_logit;
};

ScaledResidual scaled_sq(double target, double v) {
  const double s = sigmoid_grad(v);
  const double r = (target - v) * s;
  const double dr_dv = -s + (target - v) * (1.0 - 2.0 * v);
  return {r * r, 2.0 * r * dr_dv * s};
}

BBox grid_box(double cx, double cy, double w, double h) { return BBox::from_center(cx, cy, w, h); }

void validate_truth(const TruthBox& t, std::size_t index, int classes) {
  constexpr double kTol = 1e-6;
  const bool inside = t.x >= 0 && t.x <= 1 && t.y >= 0 && t.y <= 1 && t.w > 0 && t.w <= 1 &&
                      t.h > 0 && t.h <= 1 && t.x - t.w / 2 >= -kTol && t.x + t.w / 2 <= 1 + kTol &&
                      t.y - t.h / 2 >= -kTol && t.y + t.h / 2 <= 1 + kTol;
  if (!inside) {
    throw ConfigError("truth box " + std::to_string(index) + " lies outside the unit image");
  }
  if (t.class_id < 0 || t.class_id >= classes) {
    throw ConfigError("truth box " + std::to_string(index) + " has class " +
                      std::to_string(t.class_id) + " outside [0, " + std::to_string(classes) + ")");
  }
}

}  // namespace

PredGrid::PredGrid(int S, int K, int C)
    : grid(S),
      anchors(K),
      classes(C),
      boxes(static_cast<std::size_t>(S) * S * K),
      class_prob(static_cast<std::size_t>(S) * S * K * C, 0.0) {}

template <typename T>
PredGrid decode_predictions(const BasicTensor<T>& raw, int batch_index, const AnchorSet& anchors,
                            int num_classes) {
  const Shape& s = raw.shape();
  const int K = anchors.size();
  const int stride = 5 + num_classes;
  if (K < 1 || s.c != K * stride || s.h != s.w) {
    throw ShapeError("prediction tensor " + s.str() + " does not match K=" + std::to_string(K) +
                     ", C=" + std::to_string(num_classes));
  }
  PredGrid g(s.h, K, num_classes);
  for (int i = 0; i < s.h; ++i) {
    for (int j = 0; j < s.w; ++j) {
      for (int k = 0; k < K; ++k) {
        const auto v = [&](int c) {
          return static_cast<double>(raw.at(batch_index, k * stride + c, i, j));
        };
        PredBox& b = g.box(i, j, k);
        const BoxDims& a = anchors.dims[static_cast<std::size_t>(k)];
        b.off_x = sigmoid(v(0));
        b.off_y = sigmoid(v(1));
        b.w = a.w * std::exp(v(2));
        b.h = a.h * std::exp(v(3));
        b.conf = sigmoid(v(4));
        const int slot = g.slot(i, j, k);
        for (int l = 0; l < num_classes; ++l) g.prob(slot, l) = sigmoid(v(5 + l));
      }
    }
  }
  return g;
}

Assignment assign_targets(const std::vector<TruthBox>& truths, const PredGrid& preds,
                          const AnchorSet& anchors, const LossWeights& w,
                          std::int64_t images_seen) {
  if (anchors.size() != preds.anchors) {
    throw ConfigError("assign_targets: anchor count does not match the prediction grid");
  }
  for (std::size_t t = 0; t < truths.size(); ++t) validate_truth(truths[t], t, preds.classes);

  const int S = preds.grid;
  const int K = preds.anchors;
  Assignment a;
  a.slots.resize(static_cast<std::size_t>(preds.slots()));
  const bool prior_on = images_seen < w.n_prior;

  std::vector<BBox> truth_boxes;
  for (const TruthBox& t : truths) truth_boxes.push_back(grid_box(t.x * S, t.y * S, t.w * S, t.h * S));

  // Exempt slots whose current prediction already covers some truth.
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) {
      for (int k = 0; k < K; ++k) {
        const int slot = preds.slot(i, j, k);
        const PredBox& p = preds.boxes[static_cast<std::size_t>(slot)];
        const BBox pb = grid_box(j + p.off_x, i + p.off_y, p.w, p.h);
        double best = 0.0;
        for (const BBox& tb : truth_boxes) best = std::max(best, iou(pb, tb));
        SlotTarget& st = a.slots[static_cast<std::size_t>(slot)];
        st.noobj = !(best > w.iou_thres);
        st.prior = prior_on;
      }
    }
  }

  for (std::size_t t = 0; t < truths.size(); ++t) {
    const TruthBox& tr = truths[t];
    const int j = std::min(S - 1, static_cast<int>(std::floor(tr.x * S)));
    const int i = std::min(S - 1, static_cast<int>(std::floor(tr.y * S)));
    const BoxDims shape{tr.w * S, tr.h * S};
    int best_k = 0;
    double best_iou = -1.0;
    for (int k = 0; k < K; ++k) {
      const double v = 1.0 - iou_dist(shape, anchors.dims[static_cast<std::size_t>(k)]);
      if (v > best_iou) {
        best_iou = v;
        best_k = k;
      }
    }
    const int slot = preds.slot(i, j, best_k);
    const PredBox& p = preds.boxes[static_cast<std::size_t>(slot)];
    SlotTarget& st = a.slots[static_cast<std::size_t>(slot)];
    st.obj = true;
    st.noobj = false;
    st.truth = static_cast<int>(t);
    st.conf_target = iou(grid_box(j + p.off_x, i + p.off_y, p.w, p.h), truth_boxes[t]);
  }
  return a;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  total += o.total;
  noobj += o.noobj;
  obj += o.obj;
  coord += o.coord;
  cls += o.cls;
  prior += o.prior;
  return *this;
}

LossBreakdown compute_loss(const PredGrid& preds, const std::vector<TruthBox>& truths,
                           const Assignment& assignment, const AnchorSet& anchors,
                           const LossWeights& w, RawGradient* grad) {
  if (assignment.slots.size() != static_cast<std::size_t>(preds.slots())) {
    throw ConfigError("compute_loss: assignment does not match the prediction grid");
  }
  const int S = preds.grid;
  const int K = preds.anchors;
  const int C = preds.classes;
  const int stride = 5 + C;
  if (grad != nullptr) {
    grad->stride = stride;
    grad->values.assign(static_cast<std::size_t>(preds.slots()) * stride, 0.0);
  }
  LossBreakdown L;
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) {
      for (int k = 0; k < K; ++k) {
        const int slot = preds.slot(i, j, k);
        const PredBox& p = preds.boxes[static_cast<std::size_t>(slot)];
        const SlotTarget& st = assignment.slots[static_cast<std::size_t>(slot)];
        double d[5] = {0, 0, 0, 0, 0};

        if (st.noobj) {
          const ScaledResidual r = scaled_sq(0.0, p.conf);
          L.noobj += r.value;
          d[4] += w.noobj * r.d_logit;
        }
        if (st.obj) {
          const ScaledResidual r = scaled_sq(st.conf_target, p.conf);
          L.obj += r.value;
          d[4] += w.obj * r.d_logit;

          const TruthBox& t = truths.at(static_cast<std::size_t>(st.truth));
          const double gx = t.x * S - j;
          const double gy = t.y * S - i;
          const double gw = t.w * S;
          const double gh = t.h * S;
          const ScaledResidual rx = scaled_sq(gx, p.off_x);
          const ScaledResidual ry = scaled_sq(gy, p.off_y);
          L.coord += rx.value + ry.value + (gw - p.w) * (gw - p.w) + (gh - p.h) * (gh - p.h);
          d[0] += w.coord * rx.d_logit;
          d[1] += w.coord * ry.d_logit;
          d[2] += w.coord * -2.0 * (gw - p.w) * p.w;
          d[3] += w.coord * -2.0 * (gh - p.h) * p.h;

          for (int l = 0; l < C; ++l) {
            const double prob = preds.prob(slot, l);
            const bool target = l == t.class_id;
            const double q = target ? prob : 1.0 - prob;
            L.cls += -std::log(std::max(q, kProbFloor));
            if (grad != nullptr && q > kProbFloor) {
              grad->values[static_cast<std::size_t>(slot) * stride + 5 + l] +=
                  w.cls * (target ? prob - 1.0 : prob);
            }
          }
        }
        if (st.prior) {
          const BoxDims& a = anchors.dims[static_cast<std::size_t>(k)];
          const ScaledResidual rx = scaled_sq(0.5, p.off_x);
          const ScaledResidual ry = scaled_sq(0.5, p.off_y);
          L.prior += rx.value + ry.value + (a.w - p.w) * (a.w - p.w) + (a.h - p.h) * (a.h - p.h);
          d[0] += w.prior * rx.d_logit;
          d[1] += w.prior * ry.d_logit;
          d[2] += w.prior * -2.0 * (a.w - p.w) * p.w;
          d[3] += w.prior * -2.0 * (a.h - p.h) * p.h;
        }
        if (grad != nullptr) {
          for (int c = 0; c < 5; ++c) grad->values[static_cast<std::size_t>(slot) * stride + c] += d[c];
        }
      }
    }
  }
  L.noobj *= w.noobj;
  L.obj *= w.obj;
  L.coord *= w.coord;
  L.cls *= w.cls;
  L.prior *= w.prior;
  L.total = L.noobj + L.obj + L.coord + L.cls + L.prior;
  return L;
}

double prior_term(const PredGrid& preds, const AnchorSet& anchors) {
  double total = 0.0;
  for (int slot = 0; slot < preds.slots(); ++slot) {
    const PredBox& p = preds.boxes[static_cast<std::size_t>(slot)];
    const BoxDims& a = anchors.dims[static_cast<std::size_t>(slot % preds.anchors)];
    total += scaled_sq(0.5, p.off_x).value + scaled_sq(0.5, p.off_y).value +
             (a.w - p.w) * (a.w - p.w) + (a.h - p.h) * (a.h - p.h);
  }
  return total;
}

template <typename T>
LossBreakdown batch_loss(const BasicTensor<T>& raw, const std::vector<std::vector<TruthBox>>& truths,
                         const AnchorSet& anchors, int num_classes, const LossWeights& w,
                         std::int64_t images_seen, BasicTensor<T>* grad) {
  const Shape& s = raw.shape();
  if (truths.size() != static_cast<std::size_t>(s.n)) {
    throw ConfigError("batch_loss: " + std::to_string(truths.size()) + " truth lists for batch of " +
                      std::to_string(s.n));
  }
  if (grad != nullptr) *grad = BasicTensor<T>(s);
  LossBreakdown total;
  const int stride = 5 + num_classes;
  for (int n = 0; n < s.n; ++n) {
    const PredGrid preds = decode_predictions(raw, n, anchors, num_classes);
    // Each image counts as seen once its loss is taken.
    const Assignment a = assign_targets(truths[static_cast<std::size_t>(n)], preds, anchors, w,
                                        images_seen + n);
    RawGradient g;
    total += compute_loss(preds, truths[static_cast<std::size_t>(n)], a, anchors, w,
                          grad != nullptr ? &g : nullptr);
    if (grad == nullptr) continue;
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        for (int k = 0; k < preds.anchors; ++k) {
          const std::size_t base = static_cast<std::size_t>(preds.slot(i, j, k)) * stride;
          for (int c = 0; c < stride; ++c) {
            grad->at(n, k * stride + c, i, j) = static_cast<T>(g.values[base + c]);
          }
        }
      }
    }
  }
  return total;
}

template PredGrid decode_predictions<float>(const BasicTensor<float>&, int, const AnchorSet&, int);
template PredGrid decode_predictions<double>(const BasicTensor<double>&, int, const AnchorSet&, int);
template LossBreakdown batch_loss<float>(const BasicTensor<float>&,
                                         const std::vector<std::vector<TruthBox>>&,
                                         const AnchorSet&, int, const LossWeights&, std::int64_t,
                                         BasicTensor<float>*);
template LossBreakdown batch_loss<double>(const BasicTensor<double>&,
                                          const std::vector<std::vector<TruthBox>>&,
                                          const AnchorSet&, int, const LossWeights&, std::int64_t,
                                          BasicTensor<double>*);

}  // namespace dcspp
