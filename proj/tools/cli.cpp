#include "cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dcspp/anchors.hpp"
#include "dcspp/evaluation.hpp"
#include "dcspp/gradcheck.hpp"
#include "dcspp/image.hpp"
#include "dcspp/network.hpp"
#include "dcspp/training.hpp"

namespace dcspp {

namespace {

namespace fs = std::filesystem;

// Flag values that parse but make no sense; reported like parse errors.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ChannelScale {
  int num = 1;
  int den = 1;
};

ChannelScale parse_scale(const std::string& text) {
  ChannelScale s;
  char slash = 0;
  std::istringstream in(text);
  if (text.find('/') == std::string::npos) {
    if (!(in >> s.num) || s.num < 1) throw UsageError("--channel-scale expects N or N/D, got " + text);
    return s;
  }
  std::string rest;
  if (!(in >> s.num >> slash >> s.den) || slash != '/' || (in >> rest) || s.num < 1 || s.den < 1) {
    throw UsageError("--channel-scale expects N or N/D, got " + text);
  }
  return s;
}

std::vector<LrDrop> parse_drops(const std::string& text) {
  std::vector<LrDrop> drops;
  if (text.empty() || text == "none") return drops;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    LrDrop d;
    char colon = 0;
    std::istringstream is(item);
    std::string rest;
    if (!(is >> d.epoch >> colon >> d.factor) || colon != ':' || (is >> rest)) {
      throw UsageError("--lr-drops expects epoch:factor[,epoch:factor...], got " + text);
    }
    drops.push_back(d);
  }
  return drops;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

fs::path sidecar_anchors(const fs::path& model) {
  fs::path p = model;
  p += ".anchors";
  return p;
}

NetworkGraph<float> open_model(const fs::path& model, const std::string& anchors_flag) {
  const fs::path anchors_path = anchors_flag.empty() ? sidecar_anchors(model) : fs::path(anchors_flag);
  if (!fs::exists(anchors_path)) {
    throw FormatError("no anchor file: pass --anchors or place one at " + anchors_path.string());
  }
  NetworkConfig base;
  base.anchors = read_anchor_file(anchors_path);
  const WeightFileHeader h = read_weight_header(model);
  if (base.anchors.size() != static_cast<int>(h.num_anchors)) {
    throw FormatError("anchor file " + anchors_path.string() + " has " +
                      std::to_string(base.anchors.size()) + " anchors, model expects " +
                      std::to_string(h.num_anchors));
  }
  return load_network(model, base);
}

// ------------------------------------------------------------ commands

struct SynthArgs {
  std::string out;
  int count = 16;
  int size = 96;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  const DatasetManifest m = synth_dataset(a.count, a.size, a.seed, a.out);
  std::cout << "wrote " << m.entries.size() << " images to " << a.out << "\n";
  return 0;
}

struct AnchorArgs {
  std::string labels;
  std::string out;
  int k = 5;
  int input_size = 416;
  int max_iter = 300;
  std::uint64_t seed = 0;
};

int run_anchors(const AnchorArgs& a) {
  if (a.input_size < 32 || a.input_size % 32 != 0) throw UsageError("--input-size must be a multiple of 32");
  const auto boxes = load_boxes_from_labels(a.labels, a.input_size / 32);
  const AnchorSet set = kmeans_anchors(boxes, a.k, a.seed, a.max_iter);
  write_anchor_file(a.out, set);
  char line[128];
  std::snprintf(line, sizeof(line), "%zu boxes, k=%d, %d iterations, mean IoU %.4f\n", boxes.size(),
                a.k, set.iterations, set.mean_iou);
  std::cout << line;
  return 0;
}

struct TrainArgs {
  std::string manifest;
  std::string anchors;
  std::string out;
  std::string classes;
  std::string log;
  std::string checkpoint_dir;
  std::string channel_scale = "1/8";
  std::string lr_drops = "400:0.1,500:0.1";
  int input_size = 96;
  int num_classes = 0;
  int epochs = 100;
  std::int64_t iterations = 0;
  int batch = 8;
  int checkpoint_every = 0;
  double lr = 1e-3;
  double weight_decay = 5e-4;
  std::int64_t n_prior = 12800;
  bool flip = false;
  bool crop = false;
  bool scale_jitter = false;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  const DatasetManifest data = load_dataset(a.manifest, a.classes);
  NetworkConfig cfg;
  cfg.input_size = a.input_size;
  cfg.num_classes = a.num_classes > 0 ? a.num_classes : static_cast<int>(data.class_names.size());
  if (cfg.num_classes < 1) throw UsageError("--classes-count is required when no class list is found");
  cfg.anchors = read_anchor_file(a.anchors);
  cfg.num_anchors = cfg.anchors.size();
  const ChannelScale s = parse_scale(a.channel_scale);
  cfg.scale_num = s.num;
  cfg.scale_den = s.den;
  cfg.validate();

  TrainConfig tc;
  tc.batch_size = a.batch;
  tc.epochs = a.epochs;
  tc.max_iterations = a.iterations;
  tc.lr0 = a.lr;
  tc.lr_drops = parse_drops(a.lr_drops);
  tc.weight_decay = a.weight_decay;
  tc.seed = a.seed;
  tc.loss.n_prior = a.n_prior;
  tc.augment = {a.flip, a.crop, a.scale_jitter};
  tc.log_path = a.log;
  tc.checkpoint_dir = a.checkpoint_dir;
  tc.checkpoint_every = a.checkpoint_every;

  NetworkGraph<float> net = build_network<float>(cfg);
  init_weights(net, a.seed);
  const TrainResult r = train(net, load_samples(data, cfg.input_size), tc);
  save_weights(net, a.out);
  write_anchor_file(sidecar_anchors(a.out), cfg.anchors);
  if (!r.log.empty()) {
    char line[160];
    std::snprintf(line, sizeof(line), "%zu iterations, loss %.6g -> %.6g\n", r.log.size(),
                  r.log.front().loss.total, r.log.back().loss.total);
    std::cout << line;
  }
  return 0;
}

struct DetectArgs {
  std::string model;
  std::string image;
  std::string anchors;
  std::string out;
  std::string render;
  double conf = 0.25;
  double nms = 0.45;
};

int run_detect(const DetectArgs& a) {
  NetworkGraph<float> net = open_model(a.model, a.anchors);
  const ImageFile img = ppm_read(a.image);
  Letterbox lb;
  const Tensor x = image_to_tensor(img, net.config().input_size, &lb);
  const auto dets = unletterbox(detect_image(net, x, DetectOptions{a.conf, a.nms}), lb);
  const std::string text = format_detections(dets);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
  }
  if (!a.render.empty()) ppm_write(a.render, render_detections(img, dets));
  return 0;
}

struct EvalArgs {
  std::string model;
  std::string manifest;
  std::string anchors;
  std::string classes;
  std::string csv;
  double conf = 0.005;
  double nms = 0.45;
  double iou = 0.5;
};

int run_eval(const EvalArgs& a) {
  NetworkGraph<float> net = open_model(a.model, a.anchors);
  const DatasetManifest data = load_dataset(a.manifest, a.classes);
  const EvalResult r = evaluate(net, data, EvalOptions{a.conf, a.nms, a.iou});
  std::cout << format_eval_report(r, data.class_names);
  if (!a.csv.empty()) write_text(a.csv, format_eval_csv(r, data.class_names));
  return 0;
}

int run_gradcheck(std::uint64_t seed, int samples) {
  std::vector<GradCheckResult> results = layer_gradchecks(seed);
  results.push_back(network_gradcheck(seed, samples));
  results.push_back(loss_gradcheck(seed));
  bool ok = true;
  char line[256];
  for (const auto& r : results) {
    std::snprintf(line, sizeof(line), "%-4s %-8s %-44s max_rel_err %.3e (< %.0e, %d checked)\n",
                  r.ok() ? "ok" : "FAIL", r.suite.c_str(), r.name.c_str(), r.max_rel_error,
                  r.threshold, r.checked);
    std::cout << line;
    ok = ok && r.ok();
  }
  return ok ? 0 : 1;
}

struct ShapeArgs {
  int input_size = 416;
  int classes = 20;
  int k = 5;
};

int run_shapecheck(const ShapeArgs& a) {
  NetworkConfig cfg;
  cfg.input_size = a.input_size;
  cfg.num_classes = a.classes;
  cfg.num_anchors = a.k;
  cfg.validate();
  const NetworkGraph<float> net(cfg);
  char line[256];
  if (a.input_size != 416) {
    // the reference table is defined at 416; elsewhere list what was built
    for (const auto& n : net.nodes()) {
      std::snprintf(line, sizeof(line), "%-12s %-10s %dx%dx%d\n", n.name.c_str(), to_string(n.kind),
                    n.out_shape.h, n.out_shape.w, n.out_shape.c);
      std::cout << line;
    }
    return 0;
  }
  bool ok = true;
  for (const auto& row : reference_shape_check(net)) {
    std::snprintf(line, sizeof(line), "%-26s %-12s expected %4dx%-4dx%-5d got %4dx%-4dx%-5d %s\n",
                  row.label.c_str(), row.node.c_str(), row.expected.h, row.expected.w,
                  row.expected.c, row.actual.h, row.actual.w, row.actual.c, row.ok() ? "ok" : "MISMATCH");
    std::cout << line;
    ok = ok && row.ok();
  }
  std::cout << (ok ? "all shapes match\n" : "shape mismatch\n");
  return ok ? 0 : 1;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Grid object detector: synthetic data, anchors, training and inference", "dcspp"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic shapes dataset");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--count", synth.count, "Number of images")->check(CLI::PositiveNumber);
  c_synth->add_option("--size", synth.size, "Image side in pixels (multiple of 32)");
  c_synth->add_option("--seed", synth.seed, "Random seed");

  AnchorArgs anchors;
  auto* c_anchors = app.add_subcommand("anchors", "Cluster label boxes into anchor priors");
  c_anchors->add_option("--labels", anchors.labels, "Directory of label files")->required();
  c_anchors->add_option("--out", anchors.out, "Anchor file to write")->required();
  c_anchors->add_option("-k,--k", anchors.k, "Number of anchors")->check(CLI::PositiveNumber);
  c_anchors->add_option("--input-size", anchors.input_size, "Network input size");
  c_anchors->add_option("--max-iter", anchors.max_iter, "Iteration cap")->check(CLI::PositiveNumber);
  c_anchors->add_option("--seed", anchors.seed, "Random seed");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a detector");
  c_train->add_option("--manifest", tr.manifest, "Dataset manifest (TSV)")->required();
  c_train->add_option("--anchors", tr.anchors, "Anchor file")->required();
  c_train->add_option("--out", tr.out, "Weight file to write")->required();
  c_train->add_option("--classes", tr.classes, "Class list (default: classes.txt next to the manifest)");
  c_train->add_option("--classes-count", tr.num_classes, "Number of classes (default: from class list)");
  c_train->add_option("--input-size", tr.input_size, "Network input size");
  c_train->add_option("--channel-scale", tr.channel_scale, "Channel multiplier N/D");
  c_train->add_option("--epochs", tr.epochs, "Epochs");
  c_train->add_option("--iterations", tr.iterations, "Stop after this many iterations (0: no cap)");
  c_train->add_option("--batch", tr.batch, "Batch size")->check(CLI::PositiveNumber);
  c_train->add_option("--lr", tr.lr, "Initial learning rate");
  c_train->add_option("--lr-drops", tr.lr_drops, "epoch:factor list, or 'none'");
  c_train->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay");
  c_train->add_option("--n-prior", tr.n_prior, "Images seen before the prior term switches off");
  c_train->add_flag("--flip", tr.flip, "Random horizontal flips");
  c_train->add_flag("--crop", tr.crop, "Random crops");
  c_train->add_flag("--scale-jitter", tr.scale_jitter, "Random scale jitter");
  c_train->add_option("--log", tr.log, "Loss log CSV");
  c_train->add_option("--checkpoint-dir", tr.checkpoint_dir, "Checkpoint directory");
  c_train->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint period in epochs");
  c_train->add_option("--seed", tr.seed, "Random seed");

  DetectArgs det;
  auto* c_detect = app.add_subcommand("detect", "Detect objects in one image");
  c_detect->add_option("--model", det.model, "Weight file")->required();
  c_detect->add_option("--image", det.image, "Input PPM")->required();
  c_detect->add_option("--anchors", det.anchors, "Anchor file (default: <model>.anchors)");
  c_detect->add_option("--conf", det.conf, "Score threshold");
  c_detect->add_option("--nms", det.nms, "NMS IoU threshold");
  c_detect->add_option("--out", det.out, "Detection file (default: stdout)");
  c_detect->add_option("--render", det.render, "Annotated PPM to write");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Compute per-class AP and mAP on a dataset");
  c_eval->add_option("--model", ev.model, "Weight file")->required();
  c_eval->add_option("--manifest", ev.manifest, "Dataset manifest (TSV)")->required();
  c_eval->add_option("--anchors", ev.anchors, "Anchor file (default: <model>.anchors)");
  c_eval->add_option("--classes", ev.classes, "Class list (default: classes.txt next to the manifest)");
  c_eval->add_option("--conf", ev.conf, "Score threshold");
  c_eval->add_option("--nms", ev.nms, "NMS IoU threshold");
  c_eval->add_option("--iou", ev.iou, "Match IoU threshold");
  c_eval->add_option("--csv", ev.csv, "Per-class CSV to write");

  std::uint64_t gc_seed = 0;
  int gc_samples = 20;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  c_grad->add_option("--seed", gc_seed, "Random seed");
  c_grad->add_option("--samples", gc_samples, "Network parameters to sample")->check(CLI::PositiveNumber);

  ShapeArgs sh;
  auto* c_shape = app.add_subcommand("shapecheck", "Print the layer output shape table");
  c_shape->add_option("--input-size", sh.input_size, "Network input size");
  c_shape->add_option("--classes", sh.classes, "Number of classes")->check(CLI::PositiveNumber);
  c_shape->add_option("--anchors-k", sh.k, "Number of anchors")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (c_synth->parsed()) return run_synth(synth);
    if (c_anchors->parsed()) return run_anchors(anchors);
    if (c_train->parsed()) return run_train(tr);
    if (c_detect->parsed()) return run_detect(det);
    if (c_eval->parsed()) return run_eval(ev);
    if (c_grad->parsed()) return run_gradcheck(gc_seed, gc_samples);
    if (c_shape->parsed()) return run_shapecheck(sh);
  } catch (const UsageError& e) {
    std::cerr << "dcspp: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dcspp: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dcspp
