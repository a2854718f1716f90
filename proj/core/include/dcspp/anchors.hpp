#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dcspp {

/// A box shape (width, height) in grid-cell units.
struct BoxDims {
  double w = 0.0;
  double h = 0.0;

  friend bool operator==(const BoxDims&, const BoxDims&) = default;
};

/// K prior box shapes plus how they were obtained.
struct AnchorSet {
  std::vector<BoxDims> dims;
  std::uint64_t seed = 0;
  int iterations = 0;
  double mean_iou = 0.0;

  int size() const { return static_cast<int>(dims.size()); }
  bool empty() const { return dims.empty(); }
};

/// 1 - IoU of two co-centred boxes. Throws ConfigError on non-positive dims.
double iou_dist(const BoxDims& box, const BoxDims& centroid);

/// Sum over boxes of the distance to the centroid each box is assigned to.
double clustering_cost(std::span<const BoxDims> boxes, std::span<const BoxDims> centroids,
                       std::span<const int> assignment);

/// Index of the nearest centroid; ties go to the lowest index.
int nearest_centroid(const BoxDims& box, std::span<const BoxDims> centroids);

struct KMeansTrace {
  std::vector<double> cost_per_iteration;  // cost after each update step
};

/// Lloyd iteration under iou_dist with k-means++ seeding. Anchors come back
/// sorted by area, ascending.
AnchorSet kmeans_anchors(std::span<const BoxDims> boxes, int k, std::uint64_t seed,
                         int max_iter = 300, KMeansTrace* trace = nullptr);

/// One Lloyd step (assign, then update) from the given centroids; returns
/// the new centroids and writes the assignment it used.
std::vector<BoxDims> lloyd_step(std::span<const BoxDims> boxes,
                                std::span<const BoxDims> centroids, std::vector<int>& assignment);

/// Mean over boxes of the best IoU against any anchor.
double mean_best_iou(std::span<const BoxDims> boxes, std::span<const BoxDims> anchors);

/// Reads every *.txt label file under `label_dir` (lexicographic order) and
/// returns the box sizes scaled to a grid of `grid` cells.
std::vector<BoxDims> load_boxes_from_labels(const std::filesystem::path& label_dir, int grid);

/// "# mean_iou=<v> seed=<s>" header followed by one "w h" line per anchor.
void write_anchor_file(const std::filesystem::path& path, const AnchorSet& anchors);
AnchorSet read_anchor_file(const std::filesystem::path& path);

}  // namespace dcspp
