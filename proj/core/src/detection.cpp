#include "dcspp/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dcspp/network.hpp"

namespace dcspp {

double BBox::area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

BBox BBox::from_center(double cx, double cy, double w, double h) {
  return BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename T>
std::vector<Detection> decode(const BasicTensor<T>& grid, const AnchorSet& anchors,
                              int num_classes, double img_w, double img_h, double conf_thres,
                              int batch_index) {
  const Shape& s = grid.shape();
  const int K = anchors.size();
  const int stride = 5 + num_classes;
  if (K < 1 || s.c != K * stride) {
    throw ShapeError("decode: " + std::to_string(s.c) + " channels do not match K=" +
                     std::to_string(K) + " anchors and C=" + std::to_string(num_classes) +
                     " classes");
  }
  if (batch_index < 0 || batch_index >= s.n) throw ShapeError("decode: batch index out of range");
  const int rows = s.h;
  const int cols = s.w;
  const double cell_w = img_w / cols;
  const double cell_h = img_h / rows;
  std::vector<Detection> out;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      for (int k = 0; k < K; ++k) {
        const int c0 = k * stride;
        const auto v = [&](int c) { return static_cast<double>(grid.at(batch_index, c0 + c, i, j)); };
        const double objectness = sigmoid(v(4));
        int best = 0;
        double best_p = -1.0;
        for (int l = 0; l < num_classes; ++l) {
          const double p = sigmoid(v(5 + l));
          if (p > best_p) {
            best_p = p;
            best = l;
          }
        }
        const double score = objectness * best_p;
        if (!(score > conf_thres)) continue;
        const double cx = (j + sigmoid(v(0))) * cell_w;
        const double cy = (i + sigmoid(v(1))) * cell_h;
        const BoxDims& a = anchors.dims[static_cast<std::size_t>(k)];
        const double bw = a.w * std::exp(v(2)) * cell_w;
        const double bh = a.h * std::exp(v(3)) * cell_h;
        BBox box = BBox::from_center(cx, cy, bw, bh);
        box.x_min = std::clamp(box.x_min, 0.0, img_w);
        box.x_max = std::clamp(box.x_max, 0.0, img_w);
        box.y_min = std::clamp(box.y_min, 0.0, img_h);
        box.y_max = std::clamp(box.y_max, 0.0, img_h);
        out.push_back(Detection{box, best, score});
      }
    }
  }
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double nms_thres) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) > nms_thres) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> detect_image(NetworkGraph<float>& net, const Tensor& image,
                                    const DetectOptions& opts) {
  const NetworkConfig& cfg = net.config();
  if (cfg.anchors.size() != cfg.num_anchors) {
    throw ConfigError("detect_image: network has no anchor set");
  }
  const Tensor& out = net.forward(image, false);
  const auto size = static_cast<double>(cfg.input_size);
  return nms(decode(out, cfg.anchors, cfg.num_classes, size, size, opts.conf_thres), opts.nms_thres);
}

std::string format_detections(const std::vector<Detection>& dets) {
  std::string out;
  char line[256];
  for (const Detection& d : dets) {
    std::snprintf(line, sizeof(line), "%d %.6f %.6f %.6f %.6f %.6f\n", d.class_id, d.score,
                  d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max);
    out += line;
  }
  return out;
}

template std::vector<Detection> decode<float>(const BasicTensor<float>&, const AnchorSet&, int,
                                              double, double, double, int);
template std::vector<Detection> decode<double>(const BasicTensor<double>&, const AnchorSet&, int,
                                               double, double, double, int);

}  // namespace dcspp
