#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dcspp/anchors.hpp"
#include "dcspp/layers.hpp"
#include "dcspp/tensor.hpp"

namespace dcspp {

/// Architecture hyperparameters. The grid size is input_size / 32.
struct NetworkConfig {
  int input_size = 416;
  int num_classes = 20;
  int num_anchors = 5;
  AnchorSet anchors;
  // Every hidden channel count is multiplied by scale_num / scale_den,
  // rounded up to a multiple of 8 (minimum 8).
  int scale_num = 1;
  int scale_den = 1;
  double leaky_a = 10.0;

  int grid() const { return input_size / 32; }
  int box_channels() const { return 5 + num_classes; }
  int output_channels() const { return num_anchors * box_channels(); }
  int scaled(int channels) const;
  void validate() const;
};

/// Where a convolution's batch normalization and leaky ReLU sit.
enum class NormPlacement {
  kNone,  // linear convolution with bias
  kPost,  // conv -> BN -> leaky
  kPre,   // BN -> leaky -> conv (+bias)
};

template <typename T>
struct ConvLayer {
  ConvParams<T> conv;
  NormPlacement norm = NormPlacement::kNone;
  BNParams<T> bn;

  // accumulated by backward, cleared by zero_grad
  BasicTensor<T> grad_w;
  std::vector<T> grad_b;
  std::vector<T> grad_gamma;
  std::vector<T> grad_beta;

  // training caches
  BasicTensor<T> conv_input;
  BasicTensor<T> act_input;
  BNCache<T> bn_cache;
};

enum class NodeKind { kConv, kMaxPool, kRoute, kReorg, kDetection };

const char* to_string(NodeKind kind);

/// One vertex of the network DAG. Input index -1 denotes the image.
template <typename T>
struct LayerNode {
  NodeKind kind = NodeKind::kConv;
  std::string name;
  std::vector<int> inputs;
  Shape out_shape;

  ConvLayer<T> conv;  // kConv and kDetection
  MaxPoolSpec pool;   // kMaxPool
  int reorg_stride = 2;

  MaxPoolCache pool_cache;
  BasicTensor<T> output;
  BasicTensor<T> grad;

  bool has_conv() const { return kind == NodeKind::kConv || kind == NodeKind::kDetection; }
};

enum class ParamKind { kWeight, kBias, kGamma, kBeta };

/// Mutable view of one trainable parameter block and its gradient.
template <typename T>
struct ParamView {
  std::string name;
  ParamKind kind;
  std::span<T> value;
  std::span<T> grad;
};

template <typename T>
class NetworkGraph {
 public:
  explicit NetworkGraph(NetworkConfig cfg);

  const NetworkConfig& config() const { return cfg_; }
  Shape input_shape(int batch = 1) const;
  Shape output_shape(int batch = 1) const;

  std::vector<LayerNode<T>>& nodes() { return nodes_; }
  const std::vector<LayerNode<T>>& nodes() const { return nodes_; }
  int find(const std::string& name) const;  // -1 when absent

  /// Runs the graph. In training mode BN uses batch statistics and every
  /// cache needed by backward is kept.
  const BasicTensor<T>& forward(const BasicTensor<T>& x, bool training);

  /// Accumulates parameter gradients for d(loss)/d(output) = grad_out.
  void backward(const BasicTensor<T>& grad_out);

  void zero_grad();
  std::vector<ParamView<T>> parameters();
  std::size_t parameter_count() const;

  /// Output of a named node from the last forward pass.
  const BasicTensor<T>& activation(const std::string& name) const;

  /// Stride-1 pool windows used by the SPP block, largest level first
  /// (ceil(S/3), ceil(S/2), ceil(S/1)).
  std::vector<int> spp_windows() const;

  /// Converts parameters and BN statistics into another precision.
  template <typename U>
  NetworkGraph<U> cast() const;

 private:
  template <typename U>
  friend class NetworkGraph;

  // Gradient buffers are allocated on first use so shape-only builds of the
  // full-size network stay cheap.
  void ensure_grads();

  NetworkConfig cfg_;
  std::vector<LayerNode<T>> nodes_;
  bool has_training_cache_ = false;
  int batch_ = 0;
};

template <typename T>
NetworkGraph<T> build_network(const NetworkConfig& cfg);

/// Fan-in scaled uniform init: weights ~ U(-s, s), s = sqrt(2 / (k*k*in_c));
/// biases 0; BN gamma 1, beta 0, running mean 0, running var 1.
template <typename T>
void init_weights(NetworkGraph<T>& net, std::uint64_t seed);

/// One row of the layer/shape conformance table at input 416, scale 1.
struct ShapeCheckRow {
  std::string label;
  std::string node;
  Shape expected;
  Shape actual;
  bool ok() const { return expected == actual; }
};

/// Reference feature-map sizes for the 416-input network with K anchors and
/// C classes (batch 1), compared against a built graph.
std::vector<ShapeCheckRow> reference_shape_check(const NetworkGraph<float>& net);

// ------------------------------------------------------------ weight files

struct WeightFileHeader {
  std::uint32_t version = 0;
  std::uint32_t input_size = 0;
  std::uint32_t num_classes = 0;
  std::uint32_t num_anchors = 0;
  std::uint32_t scale_num = 0;
  std::uint32_t scale_den = 0;
  std::uint32_t layer_count = 0;
};

inline constexpr std::uint32_t kWeightFormatVersion = 1;

/// Little-endian float32 dump: header, then per conv layer in topological
/// order [gamma, beta, mean, var] (if BN), bias, weights.
template <typename T>
void save_weights(const NetworkGraph<T>& net, const std::filesystem::path& path);

/// Loads into an already-built graph; the file must match its config.
template <typename T>
void load_weights(NetworkGraph<T>& net, const std::filesystem::path& path);

WeightFileHeader read_weight_header(const std::filesystem::path& path);

/// Builds a graph from the header and loads it. Anchors and leaky_a come
/// from `base`; the architecture fields are taken from the file.
NetworkGraph<float> load_network(const std::filesystem::path& path, NetworkConfig base = {});

}  // namespace dcspp
