#include "dcspp/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "dcspp/errors.hpp"
#include "dcspp/image.hpp"
#include "dcspp/network.hpp"

namespace dcspp {

std::vector<bool> match_detections(const std::vector<Detection>& dets,
                                   const std::vector<LabeledBox>& truths, double iou_thres) {
  std::vector<bool> tp(dets.size(), false);
  std::vector<bool> used(truths.size(), false);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (used[t] || truths[t].class_id != dets[d].class_id) continue;
      const double v = iou(dets[d].box, truths[t].box);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(t);
      }
    }
    if (best >= 0 && best_iou >= iou_thres) {
      used[static_cast<std::size_t>(best)] = true;
      tp[d] = true;
    }
  }
  return tp;
}

namespace {

std::vector<PRPoint> pr_curve(const std::vector<bool>& flags, int num_truths) {
  std::vector<PRPoint> curve;
  curve.reserve(flags.size());
  int tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) ++tp;
    curve.push_back({static_cast<double>(tp) / num_truths,
                     static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  return curve;
}

}  // namespace

std::optional<double> average_precision(const std::vector<bool>& tp_flags, int num_truths) {
  if (num_truths <= 0) return std::nullopt;
  // precisions in extended precision so short rankings round correctly
  std::vector<long double> env(tp_flags.size());
  int tp = 0;
  for (std::size_t i = 0; i < tp_flags.size(); ++i) {
    if (tp_flags[i]) ++tp;
    env[i] = static_cast<long double>(tp) / static_cast<long double>(i + 1);
  }
  // precision envelope: max over this point and everything to its right
  long double run = 0.0L;
  for (std::size_t i = env.size(); i-- > 0;) {
    run = std::max(run, env[i]);
    env[i] = run;
  }
  // recall only moves at a TP, by exactly 1/num_truths
  long double sum = 0.0L;
  for (std::size_t i = 0; i < env.size(); ++i) {
    if (tp_flags[i]) sum += env[i];
  }
  return static_cast<double>(sum / num_truths);
}

Evaluator::Evaluator(int num_classes, double iou_thres)
    : num_classes_(num_classes), iou_thres_(iou_thres) {
  if (num_classes < 1) throw ConfigError("evaluator needs at least one class");
}

void Evaluator::add_image(const std::vector<Detection>& dets, const std::vector<LabeledBox>& truths) {
  for (const auto& t : truths) {
    if (t.class_id < 0 || t.class_id >= num_classes_) {
      throw ConfigError("truth class " + std::to_string(t.class_id) + " outside [0, " +
                        std::to_string(num_classes_) + ")");
    }
  }
  images_.push_back({dets, truths});
}

EvalResult Evaluator::result() const {
  EvalResult r;
  r.images = static_cast<int>(images_.size());
  r.classes.resize(static_cast<std::size_t>(num_classes_));
  double ap_sum = 0.0;
  int ap_count = 0;

  struct Ref {
    std::size_t image;
    std::size_t det;
    double score;
  };
  for (int c = 0; c < num_classes_; ++c) {
    ClassEval& ce = r.classes[static_cast<std::size_t>(c)];
    std::vector<Ref> refs;
    for (std::size_t i = 0; i < images_.size(); ++i) {
      for (std::size_t d = 0; d < images_[i].dets.size(); ++d) {
        if (images_[i].dets[d].class_id == c) refs.push_back({i, d, images_[i].dets[d].score});
      }
      for (const auto& t : images_[i].truths) ce.num_truths += t.class_id == c ? 1 : 0;
    }
    std::stable_sort(refs.begin(), refs.end(),
                     [](const Ref& a, const Ref& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> used(images_.size());
    for (std::size_t i = 0; i < images_.size(); ++i) used[i].assign(images_[i].truths.size(), false);
    std::vector<bool> flags;
    flags.reserve(refs.size());
    for (const Ref& ref : refs) {
      const Detection& det = images_[ref.image].dets[ref.det];
      const auto& truths = images_[ref.image].truths;
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t t = 0; t < truths.size(); ++t) {
        if (used[ref.image][t] || truths[t].class_id != c) continue;
        const double v = iou(det.box, truths[t].box);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(t);
        }
      }
      const bool tp = best >= 0 && best_iou >= iou_thres_;
      if (tp) used[ref.image][static_cast<std::size_t>(best)] = true;
      flags.push_back(tp);
    }

    ce.num_detections = static_cast<int>(refs.size());
    ce.ap = average_precision(flags, ce.num_truths);
    if (ce.num_truths > 0) ce.curve = pr_curve(flags, ce.num_truths);
    if (ce.ap) {
      ap_sum += *ce.ap;
      ++ap_count;
    }
  }
  r.map = ap_count > 0 ? ap_sum / ap_count : 0.0;
  return r;
}

EvalResult evaluate(NetworkGraph<float>& net, const DatasetManifest& data, const EvalOptions& opts) {
  if (data.entries.empty()) throw ConfigError("evaluate: dataset is empty");
  const NetworkConfig& cfg = net.config();
  Evaluator ev(cfg.num_classes, opts.iou_thres);
  const DetectOptions dopts{opts.conf_thres, opts.nms_thres};
  for (const ManifestEntry& e : data.entries) {
    const ImageFile img = ppm_read(e.image);
    Letterbox lb;
    const Tensor x = image_to_tensor(img, cfg.input_size, &lb);
    const auto dets = unletterbox(detect_image(net, x, dopts), lb);
    std::vector<LabeledBox> truths;
    for (const TruthBox& t : parse_label_file(e.label)) {
      truths.push_back({BBox::from_center(t.x * img.width, t.y * img.height, t.w * img.width,
                                          t.h * img.height),
                        t.class_id});
    }
    ev.add_image(dets, truths);
  }
  return ev.result();
}

namespace {

std::string class_label(const std::vector<std::string>& names, std::size_t c) {
  return c < names.size() ? names[c] : std::to_string(c);
}

}  // namespace

std::string format_eval_report(const EvalResult& r, const std::vector<std::string>& class_names) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %8s %8s\n", "class", "truths", "AP");
  out += line;
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    const ClassEval& ce = r.classes[c];
    if (ce.ap) {
      std::snprintf(line, sizeof(line), "%-16s %8d %8.4f\n", class_label(class_names, c).c_str(),
                    ce.num_truths, *ce.ap);
    } else {
      std::snprintf(line, sizeof(line), "%-16s %8d %8s\n", class_label(class_names, c).c_str(),
                    ce.num_truths, "-");
    }
    out += line;
  }
  std::snprintf(line, sizeof(line), "mAP@0.5 %.4f (%d images)\n", r.map, r.images);
  out += line;
  return out;
}

std::string format_eval_csv(const EvalResult& r, const std::vector<std::string>& class_names) {
  std::string out = "class,name,truths,detections,ap\n";
  char line[256];
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    const ClassEval& ce = r.classes[c];
    std::snprintf(line, sizeof(line), "%zu,%s,%d,%d,", c, class_label(class_names, c).c_str(),
                  ce.num_truths, ce.num_detections);
    out += line;
    if (ce.ap) {
      std::snprintf(line, sizeof(line), "%.6f", *ce.ap);
      out += line;
    }
    out += "\n";
  }
  return out;
}

}  // namespace dcspp
