#include "dcspp/anchors.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dcspp/dataset_io.hpp"
#include "dcspp/errors.hpp"
#include "dcspp/random.hpp"

namespace dcspp {

double iou_dist(const BoxDims& box, const BoxDims& centroid) {
  if (!(box.w > 0 && box.h > 0 && centroid.w > 0 && centroid.h > 0)) {
    throw ConfigError("iou_dist needs positive box dimensions");
  }
  const double inter = std::min(box.w, centroid.w) * std::min(box.h, centroid.h);
  const double uni = box.w * box.h + centroid.w * centroid.h - inter;
  return 1.0 - inter / uni;
}

int nearest_centroid(const BoxDims& box, std::span<const BoxDims> centroids) {
  int best = 0;
  double best_d = iou_dist(box, centroids[0]);
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double d = iou_dist(box, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double clustering_cost(std::span<const BoxDims> boxes, std::span<const BoxDims> centroids,
                       std::span<const int> assignment) {
  double cost = 0.0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    cost += iou_dist(boxes[i], centroids[static_cast<std::size_t>(assignment[i])]);
  }
  return cost;
}

double mean_best_iou(std::span<const BoxDims> boxes, std::span<const BoxDims> anchors) {
  if (boxes.empty()) return 0.0;
  double total = 0.0;
  for (const BoxDims& b : boxes) {
    total += 1.0 - iou_dist(b, anchors[static_cast<std::size_t>(nearest_centroid(b, anchors))]);
  }
  return total / static_cast<double>(boxes.size());
}

namespace {

std::vector<int> assign_all(std::span<const BoxDims> boxes, std::span<const BoxDims> centroids) {
  std::vector<int> a(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) a[i] = nearest_centroid(boxes[i], centroids);
  return a;
}

// Mean (w, h) per cluster. When `guarded`, a cluster keeps its old centroid
// if the mean would raise its iou_dist cost. An empty cluster takes the box
// that sits farthest from its own centroid.
std::vector<BoxDims> mean_update(std::span<const BoxDims> boxes, std::span<const BoxDims> centroids,
                                 const std::vector<int>& assignment, bool guarded) {
  const std::size_t k = centroids.size();
  std::vector<double> sw(k, 0.0), sh(k, 0.0);
  std::vector<int> count(k, 0);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto c = static_cast<std::size_t>(assignment[i]);
    sw[c] += boxes[i].w;
    sh[c] += boxes[i].h;
    ++count[c];
  }
  std::vector<BoxDims> out(k);
  std::vector<bool> taken(boxes.size(), false);
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] > 0) {
      const BoxDims mean{sw[c] / count[c], sh[c] / count[c]};
      double at_mean = 0.0;
      double at_old = 0.0;
      for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (static_cast<std::size_t>(assignment[i]) != c) continue;
        at_mean += iou_dist(boxes[i], mean);
        at_old += iou_dist(boxes[i], centroids[c]);
      }
      out[c] = !guarded || at_mean <= at_old ? mean : centroids[c];
      continue;
    }
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (taken[i]) continue;
      const double d =
          iou_dist(boxes[i], centroids[static_cast<std::size_t>(assignment[i])]);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    taken[far] = true;
    out[c] = boxes[far];
  }
  return out;
}

// The plain mean step when it lowers the total cost, otherwise the guarded
// one, so the cost never rises from one iteration to the next.
std::vector<BoxDims> update(std::span<const BoxDims> boxes, std::span<const BoxDims> centroids,
                            const std::vector<int>& assignment) {
  std::vector<BoxDims> plain = mean_update(boxes, centroids, assignment, false);
  const double before = clustering_cost(boxes, centroids, assignment);
  if (clustering_cost(boxes, plain, assign_all(boxes, plain)) <= before) return plain;
  return mean_update(boxes, centroids, assignment, true);
}

std::vector<BoxDims> seed_plus_plus(std::span<const BoxDims> boxes, int k, Rng& rng) {
  std::vector<BoxDims> centroids;
  centroids.push_back(boxes[static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<std::int64_t>(boxes.size()) - 1))]);
  std::vector<double> d2(boxes.size());
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      double best = 1.0;
      for (const BoxDims& c : centroids) best = std::min(best, iou_dist(boxes[i], c));
      d2[i] = best * best;
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<std::int64_t>(boxes.size()) - 1));
    } else {
      double r = uniform01(rng) * total;
      pick = boxes.size() - 1;
      for (std::size_t i = 0; i < boxes.size(); ++i) {
        r -= d2[i];
        if (r < 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    centroids.push_back(boxes[pick]);
  }
  return centroids;
}

}  // namespace

std::vector<BoxDims> lloyd_step(std::span<const BoxDims> boxes,
                                std::span<const BoxDims> centroids, std::vector<int>& assignment) {
  assignment = assign_all(boxes, centroids);
  return update(boxes, centroids, assignment);
}

AnchorSet kmeans_anchors(std::span<const BoxDims> boxes, int k, std::uint64_t seed, int max_iter,
                         KMeansTrace* trace) {
  if (k < 1) throw ConfigError("k-means needs k >= 1");
  if (static_cast<int>(boxes.size()) < k) {
    throw ConfigError("k-means needs at least k=" + std::to_string(k) + " boxes, got " +
                      std::to_string(boxes.size()));
  }
  for (const BoxDims& b : boxes) {
    if (!(b.w > 0 && b.h > 0)) throw ConfigError("k-means boxes need positive dimensions");
  }
  Rng rng(seed);
  std::vector<BoxDims> centroids = seed_plus_plus(boxes, k, rng);
  std::vector<int> assignment = assign_all(boxes, centroids);
  if (trace != nullptr) {
    trace->cost_per_iteration.assign(1, clustering_cost(boxes, centroids, assignment));
  }
  int iter = 0;
  while (iter < max_iter) {
    ++iter;
    centroids = update(boxes, centroids, assignment);
    std::vector<int> next = assign_all(boxes, centroids);
    if (trace != nullptr) {
      trace->cost_per_iteration.push_back(clustering_cost(boxes, centroids, next));
    }
    const bool fixpoint = next == assignment;
    assignment = std::move(next);
    if (fixpoint) break;
  }

  std::stable_sort(centroids.begin(), centroids.end(),
                   [](const BoxDims& a, const BoxDims& b) { return a.w * a.h < b.w * b.h; });
  AnchorSet out;
  out.dims = std::move(centroids);
  out.seed = seed;
  out.iterations = iter;
  out.mean_iou = mean_best_iou(boxes, out.dims);
  return out;
}

std::vector<BoxDims> load_boxes_from_labels(const std::filesystem::path& label_dir, int grid) {
  if (!std::filesystem::is_directory(label_dir)) {
    throw FormatError("label directory " + label_dir.string() + " does not exist");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(label_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<BoxDims> boxes;
  for (const auto& f : files) {
    for (const TruthBox& t : parse_label_file(f)) boxes.push_back(BoxDims{t.w * grid, t.h * grid});
  }
  if (boxes.empty()) {
    throw FormatError("no labelled boxes found under " + label_dir.string());
  }
  return boxes;
}

void write_anchor_file(const std::filesystem::path& path, const AnchorSet& anchors) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write anchor file " + path.string());
  char line[128];
  std::snprintf(line, sizeof(line), "# mean_iou=%.6f seed=%llu\n", anchors.mean_iou,
                static_cast<unsigned long long>(anchors.seed));
  out << line;
  for (const BoxDims& d : anchors.dims) {
    std::snprintf(line, sizeof(line), "%.4f %.4f\n", d.w, d.h);
    out << line;
  }
  if (!out) throw FormatError("failed writing anchor file " + path.string());
}

AnchorSet read_anchor_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open anchor file " + path.string());
  AnchorSet a;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line[0] == '#') {
      double v = 0.0;
      unsigned long long s = 0;
      if (std::sscanf(line.c_str(), "# mean_iou=%lf seed=%llu", &v, &s) == 2) {
        a.mean_iou = v;
        a.seed = s;
      }
      continue;
    }
    std::istringstream ls(line);
    BoxDims d;
    std::string extra;
    if (!(ls >> d.w >> d.h) || (ls >> extra) || !(d.w > 0 && d.h > 0)) {
      throw FormatError(path.string() + ":" + std::to_string(n) + ": expected \"w h\" with w, h > 0");
    }
    a.dims.push_back(d);
  }
  if (a.dims.empty()) throw FormatError("anchor file " + path.string() + " has no anchors");
  return a;
}

}  // namespace dcspp
