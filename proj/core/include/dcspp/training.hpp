#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcspp/dataset_io.hpp"
#include "dcspp/errors.hpp"
#include "dcspp/loss.hpp"
#include "dcspp/network.hpp"
#include "dcspp/random.hpp"
#include "dcspp/tensor.hpp"

namespace dcspp {

struct AugmentFlags {
  bool flip = false;
  bool crop = false;
  bool scale = false;

  bool any() const { return flip || crop || scale; }
};

struct LrDrop {
  int epoch = 0;
  double factor = 1.0;
};

struct TrainConfig {
  int batch_size = 8;
  int epochs = 1;
  std::int64_t max_iterations = 0;  // 0 means run every epoch
  double lr0 = 1e-3;
  std::vector<LrDrop> lr_drops{{400, 0.1}, {500, 0.1}};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  LossWeights loss;
  AugmentFlags augment;

  std::filesystem::path log_path;        // loss-log CSV, skipped when empty
  std::filesystem::path checkpoint_dir;  // skipped when empty
  int checkpoint_every = 0;              // epochs; 0 writes only the final epoch

  void validate() const;
};

/// Piecewise-constant schedule: lr0 times every drop factor whose epoch
/// has been reached.
double lr_at(int epoch, const TrainConfig& cfg);

/// Adam moments for a list of parameter blocks, in the order returned by
/// NetworkGraph::parameters().
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update. Weight decay is decoupled and touches
/// only ParamKind::kWeight blocks: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
template <typename T>
void adam_step(std::vector<ParamView<T>>& params, AdamState<T>& state, double lr,
               const TrainConfig& cfg);

// ------------------------------------------------------------ augmentation

/// Square source window, in input pixels, resampled onto the full frame.
/// Pixels outside the source read as 0.5 grey.
struct CropWindow {
  double x0 = 0.0;
  double y0 = 0.0;
  double side = 0.0;
};

/// A training sample: (1, 3, T, T) input and its normalized truths.
struct Sample {
  Tensor image;
  std::vector<TruthBox> truths;
};

/// Resamples `window` onto the frame and maps the boxes with the same
/// affine transform, clipping them to the frame. Boxes left narrower than
/// one pixel are dropped.
Sample apply_crop(const Sample& s, const CropWindow& window);

/// Mirrors the image and boxes left to right.
Sample flip_horizontal(const Sample& s);

/// Random crop (side T*c, c in [0.75, 1]) with scale jitter (side / s,
/// s in [0.8, 1.2]) and a horizontal flip with p = 0.5. A crop must keep at
/// least one truth centre; after a few failed draws the crop is skipped.
Sample augment(const Sample& s, Rng& rng, const AugmentFlags& flags);

// ------------------------------------------------------------ data

/// Letterboxed input tensors and truths for every manifest entry.
std::vector<Sample> load_samples(const DatasetManifest& data, int input_size);

/// Writes n PPM images of 1 to 3 non-overlapping shapes (circle, square,
/// triangle) on a noise background, their exact label files, manifest.tsv
/// and classes.txt under out_dir.
DatasetManifest synth_dataset(int n, int image_size, std::uint64_t seed,
                              const std::filesystem::path& out_dir);

inline const std::vector<std::string>& synth_class_names() {
  static const std::vector<std::string> names{"circle", "square", "triangle"};
  return names;
}

// ------------------------------------------------------------ loop

/// Mean per-image loss of one iteration.
struct LossRecord {
  std::int64_t iter = 0;
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

struct TrainResult {
  std::vector<LossRecord> log;
  std::int64_t images_seen = 0;
};

/// Thrown when a loss turns NaN or infinite.
class NonFiniteLoss : public StateError {
 public:
  NonFiniteLoss(std::int64_t iteration, const std::string& what)
      : StateError(what), iteration_(iteration) {}
  std::int64_t iteration() const { return iteration_; }

 private:
  std::int64_t iteration_;
};

inline constexpr const char* kLossLogHeader =
    "iter,epoch,lr,loss,loss_noobj,loss_obj,loss_coord,loss_class,loss_prior";

std::string format_loss_record(const LossRecord& r);

/// Shuffled mini-batch training: augment, forward, loss, backward, Adam.
/// The network needs its anchor set. The gradient is that of the mean
/// per-image loss of the batch.
TrainResult train(NetworkGraph<float>& net, const std::vector<Sample>& samples,
                  const TrainConfig& cfg);

}  // namespace dcspp
