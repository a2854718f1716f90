#pragma once

#include <cstdint>
#include <vector>

#include "dcspp/anchors.hpp"
#include "dcspp/tensor.hpp"

namespace dcspp {

/// Annotated object: centre and size normalized to [0, 1] image units.
struct TruthBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  int class_id = 0;
};

/// Term weights and target-assignment settings of the detection loss.
struct LossWeights {
  double noobj = 1.0;
  double obj = 5.0;
  double coord = 1.0;
  double cls = 1.0;
  double prior = 0.1;
  double iou_thres = 0.5;
  std::int64_t n_prior = 12800;  // images seen before the prior term switches off
};

/// Decoded prediction of one anchor slot, in grid-cell units.
struct PredBox {
  double off_x = 0.5;  // sigmoid(t_x), offset inside the cell
  double off_y = 0.5;
  double w = 1.0;      // anchor_w * exp(t_w)
  double h = 1.0;
  double conf = 0.0;   // sigmoid(t_c)
};

/// Decoded predictions for one image. Slot index is (i*S + j)*K + k.
struct PredGrid {
  int grid = 0;
  int anchors = 0;
  int classes = 0;
  std::vector<PredBox> boxes;
  std::vector<double> class_prob;  // slot * classes + l, each sigmoid(logit)

  PredGrid() = default;
  PredGrid(int S, int K, int C);
  int slots() const { return grid * grid * anchors; }
  int slot(int i, int j, int k) const { return (i * grid + j) * anchors + k; }
  PredBox& box(int i, int j, int k) { return boxes[static_cast<std::size_t>(slot(i, j, k))]; }
  double& prob(int slot_index, int l) {
    return class_prob[static_cast<std::size_t>(slot_index) * classes + l];
  }
  double prob(int slot_index, int l) const {
    return class_prob[static_cast<std::size_t>(slot_index) * classes + l];
  }
};

template <typename T>
PredGrid decode_predictions(const BasicTensor<T>& raw, int batch_index, const AnchorSet& anchors,
                            int num_classes);

struct SlotTarget {
  bool obj = false;
  bool noobj = false;
  bool prior = false;
  int truth = -1;
  double conf_target = 0.0;  // IoU(pred, truth) for obj slots, 0 otherwise
};

struct Assignment {
  std::vector<SlotTarget> slots;
};

/// Marks the max-anchor-IoU slot of each truth's cell as responsible,
/// exempts slots whose predicted box already overlaps a truth by more than
/// iou_thres, and sets every other slot to no-object. The prior flag is on
/// everywhere while images_seen < n_prior. Invalid truths throw
/// ConfigError naming their index.
Assignment assign_targets(const std::vector<TruthBox>& truths, const PredGrid& preds,
                          const AnchorSet& anchors, const LossWeights& w,
                          std::int64_t images_seen);

/// Per-term breakdown; `total` is the weighted sum.
struct LossBreakdown {
  double total = 0.0;
  double noobj = 0.0;
  double obj = 0.0;
  double coord = 0.0;
  double cls = 0.0;
  double prior = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
};

/// d(loss)/d(raw output) for every slot: (t_x, t_y, t_w, t_h, t_c, logits...).
struct RawGradient {
  int stride = 0;
  std::vector<double> values;
};

/// Weighted loss of one image. Confidence targets are taken from the
/// assignment and held constant. When `grad` is non-null it receives the
/// gradient with respect to the raw network outputs.
LossBreakdown compute_loss(const PredGrid& preds, const std::vector<TruthBox>& truths,
                           const Assignment& assignment, const AnchorSet& anchors,
                           const LossWeights& w, RawGradient* grad = nullptr);

/// Unweighted prior-matching sum over all slots: every prediction pulled to
/// the cell centre (with the sigmoid-gradient scaling on x, y) and to its
/// anchor's width and height.
double prior_term(const PredGrid& preds, const AnchorSet& anchors);

/// Sums the loss over a batch of raw outputs and, when `grad` is non-null,
/// writes the matching gradient tensor (same shape as `raw`).
template <typename T>
LossBreakdown batch_loss(const BasicTensor<T>& raw, const std::vector<std::vector<TruthBox>>& truths,
                         const AnchorSet& anchors, int num_classes, const LossWeights& w,
                         std::int64_t images_seen, BasicTensor<T>* grad = nullptr);

}  // namespace dcspp
