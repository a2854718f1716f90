#include <cmath>
#include <map>
#include <regex>
#include <vector>

#include <gtest/gtest.h>

#include "dcspp/dataset_io.hpp"
#include "dcspp/image.hpp"
#include "dcspp/training.hpp"
#include "test_support.hpp"

namespace dcspp {
namespace {

struct ScalarParam {
  std::vector<double> value;
  std::vector<double> grad;

  ScalarParam(double v, double g) : value{v}, grad{g} {}
  std::vector<ParamView<double>> view(ParamKind kind = ParamKind::kWeight) {
    return {ParamView<double>{"p", kind, value, grad}};
  }
};

TEST(LrSchedule, PiecewiseConstantDrops) {
  const TrainConfig cfg;
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(399, cfg), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(400, cfg), 1e-3 * 0.1);
  EXPECT_DOUBLE_EQ(lr_at(499, cfg), 1e-3 * 0.1);
  EXPECT_DOUBLE_EQ(lr_at(500, cfg), 1e-3 * 0.1 * 0.1);
  EXPECT_DOUBLE_EQ(lr_at(10000, cfg), 1e-3 * 0.1 * 0.1);
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr0 = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr_drops = {{10, -0.5}};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Adam, MatchesScalarRecurrence) {
  TrainConfig cfg;
  cfg.weight_decay = 0.01;
  const double lr = 0.05;
  const double grads[3] = {0.4, -1.5, 0.2};
  ScalarParam p(0.8, 0.0);
  auto views = p.view();
  AdamState<double> state;

  double w = 0.8;
  double m = 0.0;
  double v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    p.grad[0] = g;
    adam_step(views, state, lr, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double m_hat = m / (1 - std::pow(0.9, t));
    const double v_hat = v / (1 - std::pow(0.999, t));
    w = w - lr * (m_hat / (std::sqrt(v_hat) + 1e-8) + 0.01 * w);
    EXPECT_NEAR(p.value[0], w, 1e-15) << "step " << t;
  }
  EXPECT_EQ(state.step, 3);
}

TEST(Adam, ZeroGradientWithoutDecayIsANoOp) {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  ScalarParam p(1.25, 0.0);
  auto views = p.view();
  AdamState<double> state;
  for (int i = 0; i < 5; ++i) adam_step(views, state, 0.1, cfg);
  EXPECT_EQ(p.value[0], 1.25);
}

TEST(Adam, ConstantGradientStepsByLrAgainstItsSign) {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  for (double g : {3.0, -0.02}) {
    ScalarParam p(0.0, g);
    auto views = p.view();
    AdamState<double> state;
    double prev = 0.0;
    for (int t = 0; t < 10; ++t) {
      adam_step(views, state, 1e-3, cfg);
      const double step = p.value[0] - prev;
      EXPECT_NEAR(step, -1e-3 * std::copysign(1.0, g), 1e-9);
      prev = p.value[0];
    }
  }
}

TEST(Adam, DecayTouchesOnlyWeights) {
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  ScalarParam w(2.0, 0.0);
  ScalarParam b(2.0, 0.0);
  std::vector<ParamView<double>> views{w.view(ParamKind::kWeight)[0],
                                       b.view(ParamKind::kBias)[0]};
  AdamState<double> state;
  adam_step(views, state, 0.5, cfg);
  EXPECT_DOUBLE_EQ(w.value[0], 2.0 - 0.5 * 0.1 * 2.0);
  EXPECT_EQ(b.value[0], 2.0);
}

Sample ramp_sample(int T) {
  Sample s{Tensor(Shape{1, 3, T, T}), {{0.5, 0.5, 0.25, 0.5, 1}, {0.2, 0.3, 0.3, 0.2, 0}}};
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < T; ++y) {
      for (int x = 0; x < T; ++x) s.image.at(0, c, y, x) = static_cast<float>((x + 2 * y + c) % 17) / 16.0f;
    }
  }
  return s;
}

TEST(Augment, NoFlagsIsIdentity) {
  const Sample s = ramp_sample(32);
  Rng rng(1);
  const Sample out = augment(s, rng, AugmentFlags{});
  for (std::size_t i = 0; i < s.image.size(); ++i) EXPECT_EQ(out.image[i], s.image[i]);
  ASSERT_EQ(out.truths.size(), s.truths.size());
}

TEST(Augment, FlipIsAnInvolution) {
  const Sample s = ramp_sample(32);
  const Sample f = flip_horizontal(s);
  EXPECT_EQ(f.image.at(0, 1, 3, 0), s.image.at(0, 1, 3, 31));
  EXPECT_DOUBLE_EQ(f.truths[1].x, 0.8);
  const Sample ff = flip_horizontal(f);
  for (std::size_t i = 0; i < s.image.size(); ++i) EXPECT_EQ(ff.image[i], s.image[i]);
  for (std::size_t t = 0; t < s.truths.size(); ++t) EXPECT_DOUBLE_EQ(ff.truths[t].x, s.truths[t].x);
}

TEST(Augment, FullFrameCropIsIdentity) {
  const Sample s = ramp_sample(32);
  const Sample out = apply_crop(s, CropWindow{0.0, 0.0, 32.0});
  for (std::size_t i = 0; i < s.image.size(); ++i) EXPECT_FLOAT_EQ(out.image[i], s.image[i]);
  for (std::size_t t = 0; t < s.truths.size(); ++t) {
    EXPECT_NEAR(out.truths[t].x, s.truths[t].x, 1e-12);
    EXPECT_NEAR(out.truths[t].w, s.truths[t].w, 1e-12);
  }
}

TEST(Augment, CropMapsBoxesAffinelyAndClips) {
  const int T = 32;
  Sample s{Tensor(Shape{1, 3, T, T}, 0.2f), {{0.5, 0.5, 0.25, 0.5, 1}, {0.9, 0.1, 0.1, 0.1, 2}}};
  const CropWindow win{8.0, 4.0, 16.0};
  const Sample out = apply_crop(s, win);
  // box 0 spans x [12, 20], y [8, 24] px -> window units [0.25, 0.75] x [0.25, 1.0]
  // box 1 spans x [27.2, 30.4] -> entirely right of the window, dropped
  ASSERT_EQ(out.truths.size(), 1u);
  EXPECT_NEAR(out.truths[0].x, 0.5, 1e-12);
  EXPECT_NEAR(out.truths[0].w, 0.5, 1e-12);
  EXPECT_NEAR(out.truths[0].y, 0.625, 1e-12);
  EXPECT_NEAR(out.truths[0].h, 0.75, 1e-12);
  EXPECT_EQ(out.truths[0].class_id, 1);
  // pixel (u, v) samples source (x0 + (u + 0.5) / 2 - 0.5, ...): all inside, constant 0.2
  EXPECT_FLOAT_EQ(out.image.at(0, 0, 10, 10), 0.2f);

  // a window hanging off the frame reads grey outside the source
  const Sample off = apply_crop(s, CropWindow{-32.0, 0.0, 64.0});
  // row 8 samples source y 16.5; column 2 samples x -27.5, column 28 samples x 24.5
  EXPECT_FLOAT_EQ(off.image.at(0, 2, 8, 2), 0.5f);
  EXPECT_FLOAT_EQ(off.image.at(0, 2, 8, 28), 0.2f);
  // rows from 16 on sample below the frame
  EXPECT_FLOAT_EQ(off.image.at(0, 2, 20, 28), 0.5f);
}

TEST(Augment, RandomCropsKeepATruthCentre) {
  const Sample s = ramp_sample(64);
  Rng rng(7);
  const AugmentFlags flags{true, true, true};
  for (int i = 0; i < 300; ++i) {
    const Sample out = augment(s, rng, flags);
    ASSERT_FALSE(out.truths.empty());
    for (const TruthBox& t : out.truths) {
      EXPECT_GE(t.x - t.w / 2, -1e-12);
      EXPECT_LE(t.x + t.w / 2, 1 + 1e-12);
      EXPECT_GE(t.w * 64, 1.0);
    }
  }
}

TEST(Synth, DeterministicPerSeed) {
  testing::TempDir a;
  testing::TempDir b;
  synth_dataset(5, 64, 3, a.path());
  synth_dataset(5, 64, 3, b.path());
  for (const char* f : {"images/000000.ppm", "images/000004.ppm", "labels/000002.txt",
                        "manifest.tsv", "classes.txt"}) {
    EXPECT_EQ(testing::read_bytes(a / f), testing::read_bytes(b / f)) << f;
  }
  EXPECT_EQ(testing::read_bytes(a / "classes.txt"), "circle\nsquare\ntriangle\n");
}

TEST(Synth, BoxesAreInBoundsAndClassesBalanced) {
  testing::TempDir dir;
  const int n = 300;
  const int S = 96;
  const DatasetManifest m = synth_dataset(n, S, 11, dir.path());
  ASSERT_EQ(m.entries.size(), static_cast<std::size_t>(n));
  std::map<int, int> hist;
  int shapes = 0;
  for (const ManifestEntry& e : m.entries) {
    const ImageFile img = ppm_read(e.image);
    EXPECT_EQ(img.width, S);
    const auto truths = parse_label_file(e.label);
    ASSERT_GE(truths.size(), 1u);
    ASSERT_LE(truths.size(), 3u);
    for (const TruthBox& t : truths) {
      // label files carry six decimals, so edges may round past the frame by < 1e-6
      EXPECT_GE(t.x - t.w / 2, -1e-6);
      EXPECT_LE(t.x + t.w / 2, 1 + 1e-6);
      EXPECT_GE(t.y - t.h / 2, -1e-6);
      EXPECT_LE(t.y + t.h / 2, 1 + 1e-6);
      EXPECT_GE(t.w * S, 4.0);
      EXPECT_GE(t.h * S, 4.0);
      ++hist[t.class_id];
      ++shapes;
    }
  }
  ASSERT_EQ(hist.size(), 3u);
  for (const auto& [cls, count] : hist) {
    EXPECT_NEAR(count, shapes / 3.0, 0.2 * shapes / 3.0) << "class " << cls;
  }
}

struct TinySetup {
  testing::TempDir dir;
  std::vector<Sample> samples;
  NetworkConfig net_cfg;

  TinySetup() {
    const DatasetManifest m = synth_dataset(4, 64, 5, dir.path());
    samples = load_samples(m, 32);
    net_cfg.input_size = 32;
    net_cfg.num_classes = 3;
    net_cfg.num_anchors = 2;
    net_cfg.scale_num = 1;
    net_cfg.scale_den = 8;
    net_cfg.anchors.dims = {{0.3, 0.3}, {0.6, 0.5}};
  }

  NetworkGraph<float> fresh_net() const {
    NetworkGraph<float> net(net_cfg);
    init_weights(net, 21);
    return net;
  }
};

std::vector<std::vector<float>> snapshot(NetworkGraph<float>& net) {
  std::vector<std::vector<float>> out;
  for (const auto& p : net.parameters()) out.emplace_back(p.value.begin(), p.value.end());
  return out;
}

TEST(Train, ZeroLearningRateFreezesParameters) {
  TinySetup setup;
  NetworkGraph<float> net = setup.fresh_net();
  const auto before = snapshot(net);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 1;
  cfg.weight_decay = 0.0;
  cfg.lr_drops = {{0, 0.0}};
  const TrainResult r = train(net, setup.samples, cfg);
  EXPECT_EQ(r.log.size(), 2u);
  EXPECT_EQ(r.log[0].lr, 0.0);
  EXPECT_EQ(snapshot(net), before);
}

TEST(Train, SeededRunsAreIdentical) {
  TinySetup setup;
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 2;
  cfg.seed = 4;
  cfg.augment = AugmentFlags{true, true, true};
  cfg.log_path = setup.dir / "a.csv";
  NetworkGraph<float> a = setup.fresh_net();
  train(a, setup.samples, cfg);
  cfg.log_path = setup.dir / "b.csv";
  NetworkGraph<float> b = setup.fresh_net();
  train(b, setup.samples, cfg);
  save_weights(a, setup.dir / "a.weights");
  save_weights(b, setup.dir / "b.weights");
  EXPECT_EQ(testing::read_bytes(setup.dir / "a.csv"), testing::read_bytes(setup.dir / "b.csv"));
  EXPECT_EQ(testing::read_bytes(setup.dir / "a.weights"),
            testing::read_bytes(setup.dir / "b.weights"));
}

TEST(Train, NonFiniteLossAbortsWithIteration) {
  TinySetup setup;
  NetworkGraph<float> net = setup.fresh_net();
  for (Sample& s : setup.samples) s.image[0] = std::nanf("");
  TrainConfig cfg;
  cfg.batch_size = 2;
  try {
    train(net, setup.samples, cfg);
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_EQ(e.iteration(), 1);
  }
}

TEST(Train, PriorTermStopsAfterNPriorImages) {
  TinySetup setup;
  NetworkGraph<float> net = setup.fresh_net();
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 2;
  cfg.loss.n_prior = 4;
  const TrainResult r = train(net, setup.samples, cfg);
  ASSERT_EQ(r.log.size(), 4u);
  EXPECT_GT(r.log[0].loss.prior, 0.0);
  EXPECT_GT(r.log[1].loss.prior, 0.0);
  EXPECT_EQ(r.log[2].loss.prior, 0.0);
  EXPECT_EQ(r.log[3].loss.prior, 0.0);
  EXPECT_EQ(r.images_seen, 8);
}

TEST(Train, IterationCapAndCheckpoints) {
  TinySetup setup;
  NetworkGraph<float> net = setup.fresh_net();
  TrainConfig cfg;
  cfg.batch_size = 3;  // 4 samples -> batches of 3 and 1
  cfg.epochs = 10;
  cfg.max_iterations = 5;
  cfg.checkpoint_dir = setup.dir / "ckpt";
  cfg.checkpoint_every = 2;
  const TrainResult r = train(net, setup.samples, cfg);
  ASSERT_EQ(r.log.size(), 5u);
  EXPECT_EQ(r.log[4].iter, 5);
  EXPECT_EQ(r.log[4].epoch, 2);
  EXPECT_EQ(r.images_seen, 3 + 1 + 3 + 1 + 3);
  EXPECT_TRUE(std::filesystem::exists(setup.dir / "ckpt/epoch_00002.weights"));
  EXPECT_TRUE(std::filesystem::exists(setup.dir / "ckpt/epoch_00003.weights"));
  EXPECT_FALSE(std::filesystem::exists(setup.dir / "ckpt/epoch_00001.weights"));
}

TEST(Train, LossLogIsCsvWithOneRowPerIteration) {
  TinySetup setup;
  NetworkGraph<float> net = setup.fresh_net();
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 1;
  cfg.log_path = setup.dir / "log.csv";
  const TrainResult r = train(net, setup.samples, cfg);
  const std::string text = testing::read_bytes(cfg.log_path);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kLossLogHeader);
  const std::regex row(R"(^\d+,\d+(,[-+0-9.eE]+){7}$)");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    EXPECT_TRUE(std::regex_match(line, row)) << line;
    EXPECT_EQ(line, format_loss_record(r.log[rows]));
    ++rows;
  }
  EXPECT_EQ(rows, r.log.size());
  const LossBreakdown& b = r.log[0].loss;
  EXPECT_NEAR(b.total, b.noobj + b.obj + b.coord + b.cls + b.prior, 1e-9 * b.total);
}

TEST(Train, RequiresAnchorsAndData) {
  TinySetup setup;
  NetworkConfig cfg = setup.net_cfg;
  cfg.anchors = AnchorSet{};
  NetworkGraph<float> bare(cfg);
  EXPECT_THROW(train(bare, setup.samples, TrainConfig{}), ConfigError);
  NetworkGraph<float> net = setup.fresh_net();
  EXPECT_THROW(train(net, {}, TrainConfig{}), ConfigError);
}

}  // namespace
}  // namespace dcspp
