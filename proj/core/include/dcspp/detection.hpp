#pragma once

#include <string>
#include <vector>

#include "dcspp/anchors.hpp"
#include "dcspp/tensor.hpp"

namespace dcspp {

template <typename T>
class NetworkGraph;

/// Axis-aligned box in corner form.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const;

  static BBox from_center(double cx, double cy, double w, double h);
  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Intersection over union; 0 when the union is empty.
double iou(const BBox& a, const BBox& b);

struct Detection {
  BBox box;
  int class_id = 0;
  double score = 0.0;  // objectness times class probability

  friend bool operator==(const Detection&, const Detection&) = default;
};

double sigmoid(double x);

/// Turns one batch item of a (n, K*(5+C), S, S) prediction tensor into
/// boxes in an img_w x img_h pixel frame. Boxes scoring above conf_thres
/// are kept and clipped to the frame.
template <typename T>
std::vector<Detection> decode(const BasicTensor<T>& grid, const AnchorSet& anchors,
                              int num_classes, double img_w, double img_h, double conf_thres,
                              int batch_index = 0);

/// Class-aware greedy suppression; output sorted by descending score (ties
/// keep input order).
std::vector<Detection> nms(std::vector<Detection> dets, double nms_thres);

struct DetectOptions {
  double conf_thres = 0.25;
  double nms_thres = 0.45;
};

/// forward (inference mode) -> decode -> nms, in network-input pixels.
std::vector<Detection> detect_image(NetworkGraph<float>& net, const Tensor& image,
                                    const DetectOptions& opts);

/// "class_id score x_min y_min x_max y_max", 6 decimals, one per line.
std::string format_detections(const std::vector<Detection>& dets);

}  // namespace dcspp
