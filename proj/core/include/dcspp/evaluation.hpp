#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dcspp/dataset_io.hpp"
#include "dcspp/detection.hpp"

namespace dcspp {

template <typename T>
class NetworkGraph;

/// Ground-truth box in the same pixel frame as the detections it is
/// matched against.
struct LabeledBox {
  BBox box;
  int class_id = 0;
};

/// Greedy matching of detections (already sorted by descending score)
/// to truths. Each detection takes the unmatched same-class truth of
/// highest IoU when that IoU reaches iou_thres. Returns true for TP.
std::vector<bool> match_detections(const std::vector<Detection>& dets,
                                   const std::vector<LabeledBox>& truths, double iou_thres);

/// All-point interpolated AP. Empty when num_truths is 0.
std::optional<double> average_precision(const std::vector<bool>& tp_flags, int num_truths);

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct ClassEval {
  int num_truths = 0;
  int num_detections = 0;
  std::optional<double> ap;
  std::vector<PRPoint> curve;
};

struct EvalResult {
  std::vector<ClassEval> classes;
  double map = 0.0;  // mean over classes with at least one truth
  int images = 0;
};

/// Accumulates per-image detections and truths, then scores each class
/// over the whole set. Equal scores keep insertion order.
class Evaluator {
 public:
  Evaluator(int num_classes, double iou_thres = 0.5);

  void add_image(const std::vector<Detection>& dets, const std::vector<LabeledBox>& truths);
  EvalResult result() const;

 private:
  struct Image {
    std::vector<Detection> dets;
    std::vector<LabeledBox> truths;
  };
  int num_classes_;
  double iou_thres_;
  std::vector<Image> images_;
};

struct EvalOptions {
  double conf_thres = 0.005;
  double nms_thres = 0.45;
  double iou_thres = 0.5;
};

/// Runs detection over every manifest entry and scores it. Throws
/// ConfigError on an empty manifest.
EvalResult evaluate(NetworkGraph<float>& net, const DatasetManifest& data,
                    const EvalOptions& opts = {});

/// "class  truths  AP" table followed by a "mAP" line.
std::string format_eval_report(const EvalResult& r, const std::vector<std::string>& class_names);

/// class,name,truths,detections,ap
std::string format_eval_csv(const EvalResult& r, const std::vector<std::string>& class_names);

}  // namespace dcspp
