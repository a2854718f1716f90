#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dcspp/evaluation.hpp"
#include "dcspp/network.hpp"
#include "dcspp/training.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace dcspp {
namespace {

using testing::ap_by_recall_levels;
using testing::match_by_table;
using testing::random_box;

struct RandomImage {
  std::vector<Detection> dets;
  std::vector<LabeledBox> truths;
};

// Detections are jittered copies of truths plus clutter, so both TPs and
// FPs are common.
RandomImage random_image(Rng& rng, int classes, bool coarse_scores = true) {
  RandomImage im;
  const int nt = static_cast<int>(uniform_int(rng, 0, 5));
  for (int i = 0; i < nt; ++i) {
    im.truths.push_back({random_box(rng, 60, 25), static_cast<int>(uniform_int(rng, 0, classes - 1))});
  }
  const int nd = static_cast<int>(uniform_int(rng, 0, 10));
  for (int i = 0; i < nd; ++i) {
    Detection d;
    if (!im.truths.empty() && bernoulli(rng, 0.6)) {
      const LabeledBox& t = im.truths[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<std::int64_t>(im.truths.size()) - 1))];
      const double j = uniform(rng, -4, 4);
      d.box = BBox{t.box.x_min + j, t.box.y_min + uniform(rng, -4, 4), t.box.x_max + j,
                   t.box.y_max};
      d.class_id = bernoulli(rng, 0.8) ? t.class_id : static_cast<int>(uniform_int(rng, 0, classes - 1));
    } else {
      d.box = random_box(rng, 60, 25);
      d.class_id = static_cast<int>(uniform_int(rng, 0, classes - 1));
    }
    d.score = coarse_scores ? static_cast<double>(uniform_int(rng, 1, 20)) / 20.0 : uniform01(rng);
    im.dets.push_back(d);
  }
  std::stable_sort(im.dets.begin(), im.dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return im;
}

double map_of(const std::vector<RandomImage>& images, int classes) {
  Evaluator ev(classes);
  for (const auto& im : images) ev.add_image(im.dets, im.truths);
  return ev.result().map;
}

TEST(Matching, WorkedExample) {
  const std::vector<LabeledBox> truths{{BBox{0, 0, 10, 10}, 0}, {BBox{20, 0, 30, 10}, 0},
                                       {BBox{0, 0, 10, 10}, 1}};
  const std::vector<Detection> dets{
      {BBox{0, 0, 10, 10}, 0, 0.9},   // TP, takes truth 0
      {BBox{1, 0, 11, 10}, 0, 0.8},   // truth 0 already taken, truth 1 too far: FP
      {BBox{20, 0, 30, 12}, 0, 0.7},  // TP on truth 1 (IoU 10/12)
      {BBox{0, 0, 10, 10}, 2, 0.6},   // no truth of class 2: FP
      {BBox{0, 0, 10, 19}, 1, 0.5},   // IoU 100/190 >= 0.5: TP
  };
  EXPECT_EQ(match_detections(dets, truths, 0.5), (std::vector<bool>{true, false, true, false, true}));
  EXPECT_EQ(match_detections(dets, truths, 0.9),
            (std::vector<bool>{true, false, false, false, false}));
}

TEST(Matching, ThresholdIsInclusive) {
  const std::vector<LabeledBox> truths{{BBox{0, 0, 4, 1}, 0}};
  const std::vector<Detection> dets{{BBox{0, 0, 2, 1}, 0, 0.9}};  // IoU exactly 0.5
  EXPECT_EQ(match_detections(dets, truths, 0.5), std::vector<bool>{true});
}

TEST(Matching, AgreesWithTableOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const RandomImage im = random_image(rng, 2);
    const double thres = uniform(rng, 0.3, 0.7);
    EXPECT_EQ(match_detections(im.dets, im.truths, thres), match_by_table(im.dets, im.truths, thres))
        << "trial " << trial;
  }
}

TEST(AveragePrecision, TpFpTpOverTwoTruthsIsFiveSixths) {
  EXPECT_EQ(average_precision({true, false, true}, 2), 5.0 / 6.0);
}

TEST(AveragePrecision, EdgeCases) {
  EXPECT_FALSE(average_precision({true}, 0).has_value());
  EXPECT_EQ(average_precision({}, 3), 0.0);
  EXPECT_EQ(average_precision({false, false}, 1), 0.0);
  EXPECT_EQ(average_precision({true, true}, 2), 1.0);
  EXPECT_EQ(average_precision({true}, 4), 0.25);
  EXPECT_EQ(average_precision({false, true}, 1), 0.5);
}

TEST(AveragePrecision, AgreesWithRecallLevelOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 5000; ++trial) {
    const int n = static_cast<int>(uniform_int(rng, 0, 10));
    std::vector<bool> flags;
    for (int i = 0; i < n; ++i) flags.push_back(bernoulli(rng, 0.5));
    const int tps = static_cast<int>(std::count(flags.begin(), flags.end(), true));
    const int truths = tps + static_cast<int>(uniform_int(rng, tps == 0 ? 1 : 0, 3));
    const auto ap = average_precision(flags, truths);
    ASSERT_TRUE(ap.has_value());
    EXPECT_EQ(*ap, ap_by_recall_levels(flags, truths)) << "trial " << trial;
    EXPECT_GE(*ap, 0.0);
    EXPECT_LE(*ap, 1.0);
  }
}

TEST(Evaluator, MonotoneScoreRescaleLeavesMapUnchanged) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RandomImage> images;
    for (int i = 0; i < 4; ++i) images.push_back(random_image(rng, 3));
    std::vector<RandomImage> rescaled = images;
    for (auto& im : rescaled) {
      for (auto& d : im.dets) d.score = 0.5 * d.score * d.score;
    }
    EXPECT_EQ(map_of(images, 3), map_of(rescaled, 3));
  }
}

TEST(Evaluator, DemotingAFalsePositiveNeverLowersAp) {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const RandomImage im = random_image(rng, 1);
    if (im.truths.empty()) continue;
    const auto flags = match_detections(im.dets, im.truths, 0.5);
    const auto it = std::find(flags.begin(), flags.end(), false);
    if (it == flags.end()) continue;
    const auto fp = static_cast<std::size_t>(it - flags.begin());
    std::vector<bool> moved = flags;
    moved.erase(moved.begin() + static_cast<std::ptrdiff_t>(fp));
    moved.push_back(false);
    const int n = static_cast<int>(im.truths.size());
    EXPECT_GE(*average_precision(moved, n), *average_precision(flags, n) - 1e-15);
    // an extra FP ranked last changes nothing
    std::vector<bool> extra = flags;
    extra.push_back(false);
    EXPECT_EQ(*average_precision(extra, n), *average_precision(flags, n));
  }
}

// Each detection and its copy end up adjacent in the ranking, so the curve
// only gains midpoints under the envelope. Tied scores across different
// detections would interleave differently, hence continuous scores.
TEST(Evaluator, DuplicatedDatasetKeepsMap) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RandomImage> images;
    for (int i = 0; i < 3; ++i) images.push_back(random_image(rng, 2, false));
    std::vector<RandomImage> twice = images;
    twice.insert(twice.end(), images.begin(), images.end());
    EXPECT_NEAR(map_of(twice, 2), map_of(images, 2), 1e-12) << "trial " << trial;
  }
}

TEST(Evaluator, PoolsAcrossImagesAndSkipsClassesWithoutTruths) {
  Evaluator ev(3);
  ev.add_image({{BBox{0, 0, 10, 10}, 0, 0.9}}, {{BBox{0, 0, 10, 10}, 0}});
  ev.add_image({{BBox{0, 0, 10, 10}, 0, 0.95}, {BBox{0, 0, 5, 5}, 2, 0.4}},
               {{BBox{50, 50, 60, 60}, 0}});
  const EvalResult r = ev.result();
  EXPECT_EQ(r.images, 2);
  // class 0 ranking: FP (0.95, image 2), TP (0.9, image 1) over 2 truths
  ASSERT_TRUE(r.classes[0].ap.has_value());
  EXPECT_EQ(*r.classes[0].ap, 0.25);
  EXPECT_EQ(r.classes[0].num_detections, 2);
  EXPECT_FALSE(r.classes[1].ap.has_value());
  EXPECT_FALSE(r.classes[2].ap.has_value());
  EXPECT_EQ(r.map, 0.25);
  EXPECT_THROW(ev.add_image({}, {{BBox{0, 0, 1, 1}, 3}}), ConfigError);
}

TEST(Evaluator, ReportAndCsvLayout) {
  Evaluator ev(2);
  ev.add_image({{BBox{0, 0, 10, 10}, 0, 0.9}}, {{BBox{0, 0, 10, 10}, 0}});
  const EvalResult r = ev.result();
  const std::string report = format_eval_report(r, {"circle", "square"});
  EXPECT_NE(report.find("circle"), std::string::npos);
  EXPECT_NE(report.find("1.0000"), std::string::npos);
  EXPECT_NE(report.find("mAP@0.5 1.0000 (1 images)"), std::string::npos);
  EXPECT_EQ(format_eval_csv(r, {"circle", "square"}),
            "class,name,truths,detections,ap\n0,circle,1,1,1.000000\n1,square,0,0,\n");
}

TEST(Evaluate, EmptyDatasetThrows) {
  NetworkConfig cfg;
  cfg.input_size = 32;
  cfg.num_classes = 3;
  cfg.num_anchors = 1;
  cfg.scale_den = 8;
  cfg.anchors.dims = {{1, 1}};
  NetworkGraph<float> net(cfg);
  EXPECT_THROW(evaluate(net, DatasetManifest{}), ConfigError);
}

TEST(Evaluate, UntrainedNetworkScoresNearZero) {
  testing::TempDir dir;
  const DatasetManifest data = synth_dataset(32, 96, 2, dir.path());
  NetworkConfig cfg;
  cfg.input_size = 96;
  cfg.num_classes = 3;
  cfg.num_anchors = 5;
  cfg.scale_den = 8;
  cfg.anchors.dims = {{0.6, 0.6}, {0.7, 0.7}, {0.8, 0.8}, {1.0, 1.0}, {1.3, 1.3}};
  NetworkGraph<float> net(cfg);
  init_weights(net, 1);
  const EvalResult r = evaluate(net, data);
  EXPECT_EQ(r.images, 32);
  EXPECT_LT(r.map, 0.05);
}

}  // namespace
}  // namespace dcspp
