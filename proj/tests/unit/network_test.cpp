#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "dcspp/errors.hpp"
#include "dcspp/network.hpp"
#include "dcspp/random.hpp"
#include "test_support.hpp"

namespace dcspp {
namespace {

NetworkConfig small_config(int input = 64, int classes = 3, int k = 2) {
  NetworkConfig cfg;
  cfg.input_size = input;
  cfg.num_classes = classes;
  cfg.num_anchors = k;
  cfg.scale_num = 1;
  cfg.scale_den = 8;
  return cfg;
}

Tensor random_input(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(s);
  for (float& v : t.data()) v = static_cast<float>(uniform01(rng));
  return t;
}

TEST(Network, FullSizeShapesMatchReferenceTable) {
  NetworkConfig cfg;
  cfg.input_size = 416;
  cfg.num_classes = 20;
  cfg.num_anchors = 5;
  const NetworkGraph<float> net(cfg);
  const auto rows = reference_shape_check(net);
  ASSERT_EQ(rows.size(), 27u);
  for (const auto& row : rows) {
    EXPECT_TRUE(row.ok()) << row.label << " expected " << row.expected.str() << " got "
                          << row.actual.str();
  }
  EXPECT_EQ(net.output_shape(), (Shape{1, 125, 13, 13}));
}

TEST(Network, OutputChannelsFollowAnchorsAndClasses) {
  for (int k : {1, 3, 5}) {
    for (int c : {1, 2, 20}) {
      const NetworkGraph<float> net(small_config(96, c, k));
      EXPECT_EQ(net.output_shape(2), (Shape{2, k * (5 + c), 3, 3}));
    }
  }
}

TEST(Network, SppWindowsAreCeilOfGridOverLevel) {
  NetworkConfig cfg;
  cfg.input_size = 416;
  EXPECT_EQ(NetworkGraph<float>(cfg).spp_windows(), (std::vector<int>{5, 7, 13}));
  EXPECT_EQ(NetworkGraph<float>(small_config(96)).spp_windows(), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(NetworkGraph<float>(small_config(32)).spp_windows(), (std::vector<int>{1, 1, 1}));
  for (int input = 32; input <= 640; input += 32) {
    const NetworkGraph<float> net(small_config(input));
    const int s = input / 32;
    const auto w = net.spp_windows();
    EXPECT_EQ(w[0], (s + 2) / 3);
    EXPECT_EQ(w[1], (s + 1) / 2);
    EXPECT_EQ(w[2], s);
    for (const char* name : {"maxpool6", "maxpool7", "maxpool8"}) {
      const auto& node = net.nodes()[static_cast<std::size_t>(net.find(name))];
      EXPECT_EQ(node.out_shape.h, s);
      EXPECT_EQ(node.out_shape.w, s);
    }
  }
}

TEST(Network, ScaledChannelsRoundUpToMultiplesOfEight) {
  NetworkConfig cfg = small_config();
  EXPECT_EQ(cfg.scaled(32), 8);
  EXPECT_EQ(cfg.scaled(1024), 128);
  EXPECT_EQ(cfg.scaled(448), 56);
  cfg.scale_den = 3;
  EXPECT_EQ(cfg.scaled(64), 24);
  cfg.scale_den = 1;
  EXPECT_EQ(cfg.scaled(100), 104);
}

TEST(Network, RejectsInvalidConfigs) {
  EXPECT_THROW(NetworkGraph<float>(small_config(100)), ConfigError);
  EXPECT_THROW(NetworkGraph<float>(small_config(64, 0)), ConfigError);
  NetworkConfig cfg = small_config();
  cfg.anchors.dims = {{1, 1}, {2, 2}, {3, 3}};
  EXPECT_THROW(NetworkGraph<float>{cfg}, ConfigError);
}

TEST(Network, InitIsDeterministicPerSeed) {
  NetworkGraph<float> a(small_config());
  NetworkGraph<float> b(small_config());
  NetworkGraph<float> c(small_config());
  init_weights(a, 7);
  init_weights(b, 7);
  init_weights(c, 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.nodes().size(); ++i) {
    if (!a.nodes()[i].has_conv()) continue;
    const auto& wa = a.nodes()[i].conv.conv.weights;
    const auto& wb = b.nodes()[i].conv.conv.weights;
    const auto& wc = c.nodes()[i].conv.conv.weights;
    for (std::size_t j = 0; j < wa.size(); ++j) {
      EXPECT_EQ(wa[j], wb[j]);
      any_diff = any_diff || wa[j] != wc[j];
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(Network, InferenceIsBitStable) {
  NetworkGraph<float> net(small_config());
  init_weights(net, 3);
  const Tensor x = random_input(net.input_shape(2), 4);
  const Tensor first = net.forward(x, false);
  const Tensor second = net.forward(x, false);
  ASSERT_EQ(first.shape(), net.output_shape(2));
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_EQ(first[i], second[i]);
  EXPECT_TRUE(first.all_finite());
}

TEST(Network, RejectsWrongInputShape) {
  NetworkGraph<float> net(small_config());
  EXPECT_THROW(net.forward(Tensor(Shape{1, 3, 32, 32}), false), ShapeError);
}

TEST(Network, BackwardWithoutTrainingForwardThrows) {
  NetworkGraph<float> net(small_config());
  init_weights(net, 1);
  EXPECT_THROW(net.backward(Tensor(net.output_shape(1))), StateError);
  net.forward(random_input(net.input_shape(1), 2), false);
  EXPECT_THROW(net.backward(Tensor(net.output_shape(1))), StateError);
}

TEST(Network, BackwardProducesGradientsForEveryWeightBlock) {
  NetworkGraph<float> net(small_config());
  init_weights(net, 5);
  net.forward(random_input(net.input_shape(2), 6), true);
  Tensor g(net.output_shape(2));
  Rng rng(9);
  for (float& v : g.data()) v = static_cast<float>(uniform(rng, -1, 1));
  net.zero_grad();
  net.backward(g);
  for (const auto& p : net.parameters()) {
    ASSERT_EQ(p.value.size(), p.grad.size()) << p.name;
    if (p.kind != ParamKind::kWeight) continue;
    double norm = 0.0;
    for (float v : p.grad) norm += std::abs(v);
    EXPECT_GT(norm, 0.0) << p.name;
    EXPECT_TRUE(std::isfinite(norm)) << p.name;
  }
}

TEST(Weights, SaveLoadSaveIsByteIdentical) {
  testing::TempDir dir;
  NetworkGraph<float> a(small_config());
  init_weights(a, 11);
  // perturb BN statistics so every stored field is exercised
  a.forward(random_input(a.input_shape(2), 12), true);
  const auto p1 = dir.path() / "a.weights";
  const auto p2 = dir.path() / "b.weights";
  save_weights(a, p1);
  NetworkGraph<float> b(small_config());
  load_weights(b, p1);
  save_weights(b, p2);
  EXPECT_EQ(testing::read_bytes(p1), testing::read_bytes(p2));

  const Tensor x = random_input(a.input_shape(1), 13);
  const Tensor ya = a.forward(x, false);
  const Tensor yb = b.forward(x, false);
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_EQ(ya[i], yb[i]);

  const WeightFileHeader h = read_weight_header(p1);
  EXPECT_EQ(h.version, kWeightFormatVersion);
  EXPECT_EQ(h.input_size, 64u);
  EXPECT_EQ(h.num_classes, 3u);
  EXPECT_EQ(h.num_anchors, 2u);
  EXPECT_EQ(h.scale_den, 8u);
}

TEST(Weights, LoadNetworkRebuildsArchitectureFromHeader) {
  testing::TempDir dir;
  NetworkGraph<float> a(small_config(96, 2, 3));
  init_weights(a, 1);
  save_weights(a, dir.path() / "m.weights");
  const NetworkGraph<float> b = load_network(dir.path() / "m.weights");
  EXPECT_EQ(b.config().input_size, 96);
  EXPECT_EQ(b.config().num_classes, 2);
  EXPECT_EQ(b.config().num_anchors, 3);
  EXPECT_EQ(b.parameter_count(), a.parameter_count());
}

TEST(Weights, MismatchedOrDamagedFilesAreRejected) {
  testing::TempDir dir;
  NetworkGraph<float> a(small_config(64, 3, 2));
  init_weights(a, 1);
  const auto path = dir.path() / "m.weights";
  save_weights(a, path);

  NetworkGraph<float> other(small_config(64, 4, 2));
  try {
    load_weights(other, path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("classes 3 vs 4"), std::string::npos) << e.what();
  }

  std::string bytes = testing::read_bytes(path);
  testing::write_bytes(dir.path() / "short.weights", bytes.substr(0, bytes.size() - 4));
  EXPECT_THROW(load_weights(a, dir.path() / "short.weights"), FormatError);
  bytes[0] = 'X';
  testing::write_bytes(dir.path() / "magic.weights", bytes);
  EXPECT_THROW(load_weights(a, dir.path() / "magic.weights"), FormatError);
  EXPECT_THROW(load_weights(a, dir.path() / "missing.weights"), FormatError);
}

}  // namespace
}  // namespace dcspp
