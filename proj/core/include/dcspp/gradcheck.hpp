#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dcspp {

/// Worst analytic-vs-numeric disagreement found by one check.
struct GradCheckResult {
  std::string suite;  // "layer", "network" or "loss"
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  int checked = 0;  // number of scalar derivatives compared

  bool ok() const { return max_rel_error < threshold; }
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central differences (step 1e-3, double precision) against every
/// layer's backward on small random shapes: convolutions, batch norm,
/// leaky ReLU, max pooling and reorg. Threshold 1e-4.
std::vector<GradCheckResult> layer_gradchecks(std::uint64_t seed);

/// End-to-end check of the scale-reduced network on `samples` randomly
/// drawn parameters under a random linear projection of the output.
/// Threshold 1e-3.
GradCheckResult network_gradcheck(std::uint64_t seed, int samples = 20);

/// Derivative of the detection loss with respect to every raw output of a
/// 2 x 2 grid instance, targets held fixed. Threshold 1e-5.
GradCheckResult loss_gradcheck(std::uint64_t seed);

/// All of the above.
std::vector<GradCheckResult> run_gradchecks(std::uint64_t seed);

}  // namespace dcspp
