#include "dcspp/network.hpp"

#include <algorithm>
#include <cmath>

#include "dcspp/random.hpp"

namespace dcspp {

// ------------------------------------------------------------ config

int NetworkConfig::scaled(int channels) const {
  const long long num = static_cast<long long>(channels) * scale_num;
  long long c = (num + scale_den - 1) / scale_den;
  c = (c + 7) / 8 * 8;
  return static_cast<int>(std::max<long long>(8, c));
}

void NetworkConfig::validate() const {
  if (input_size < 32 || input_size % 32 != 0) {
    throw ConfigError("input size must be a positive multiple of 32, got " +
                      std::to_string(input_size));
  }
  if (num_classes < 1) throw ConfigError("number of classes must be >= 1");
  if (num_anchors < 1) throw ConfigError("number of anchors must be >= 1");
  if (!anchors.empty() && anchors.size() != num_anchors) {
    throw ConfigError("anchor set has " + std::to_string(anchors.size()) +
                      " entries but the network expects " + std::to_string(num_anchors));
  }
  if (scale_num < 1 || scale_den < 1 || scale_num > scale_den) {
    throw ConfigError("channel scale must be a fraction in (0, 1]");
  }
  if (!(leaky_a > 1.0)) throw ConfigError("leaky ReLU divisor must be > 1");
}

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::kConv:
      return "conv";
    case NodeKind::kMaxPool:
      return "maxpool";
    case NodeKind::kRoute:
      return "route";
    case NodeKind::kReorg:
      return "reorg";
    case NodeKind::kDetection:
      return "detection";
  }
  return "?";
}

// ------------------------------------------------------------ construction

namespace {

template <typename T>
class GraphBuilder {
 public:
  GraphBuilder(const NetworkConfig& cfg, std::vector<LayerNode<T>>& nodes)
      : cfg_(cfg), nodes_(nodes) {}

  Shape shape_of(int id) const {
    return id < 0 ? Shape{1, 3, cfg_.input_size, cfg_.input_size}
                  : nodes_[static_cast<std::size_t>(id)].out_shape;
  }

  int conv(const std::string& name, int input, int filters, int k, NormPlacement norm,
           NodeKind kind = NodeKind::kConv) {
    LayerNode<T> node;
    node.kind = kind;
    node.name = name;
    node.inputs = {input};
    const Shape in = shape_of(input);
    node.conv.conv = ConvParams<T>(in.c, filters, k, 1, -1);
    node.conv.norm = norm;
    node.conv.conv.use_bias = norm != NormPlacement::kPost;
    if (norm == NormPlacement::kPost) node.conv.bn = BNParams<T>(filters);
    if (norm == NormPlacement::kPre) node.conv.bn = BNParams<T>(in.c);
    node.out_shape = node.conv.conv.output_shape(in);
    return push(std::move(node));
  }

  int pool(const std::string& name, int input, MaxPoolSpec spec) {
    LayerNode<T> node;
    node.kind = NodeKind::kMaxPool;
    node.name = name;
    node.inputs = {input};
    node.pool = spec;
    node.out_shape = spec.output_shape(shape_of(input));
    return push(std::move(node));
  }

  int route(const std::string& name, std::vector<int> inputs) {
    LayerNode<T> node;
    node.kind = NodeKind::kRoute;
    node.name = name;
    Shape out = shape_of(inputs.front());
    out.c = 0;
    for (int id : inputs) {
      const Shape s = shape_of(id);
      if (s.h != out.h || s.w != out.w) {
        throw ShapeError("route " + name + " joins mismatched maps " + out.str() + " and " +
                         s.str());
      }
      out.c += s.c;
    }
    node.inputs = std::move(inputs);
    node.out_shape = out;
    return push(std::move(node));
  }

  int reorg(const std::string& name, int input, int stride) {
    LayerNode<T> node;
    node.kind = NodeKind::kReorg;
    node.name = name;
    node.inputs = {input};
    node.reorg_stride = stride;
    const Shape in = shape_of(input);
    if (in.h % stride != 0 || in.w % stride != 0) {
      throw ShapeError("reorg " + name + " stride does not divide " + in.str());
    }
    node.out_shape = Shape{in.n, in.c * stride * stride, in.h / stride, in.w / stride};
    return push(std::move(node));
  }

 private:
  int push(LayerNode<T> node) {
    for (int id : node.inputs) {
      if (id >= static_cast<int>(nodes_.size())) {
        throw ConfigError("node " + node.name + " consumes a later node");
      }
    }
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const NetworkConfig& cfg_;
  std::vector<LayerNode<T>>& nodes_;
};

}  // namespace

template <typename T>
NetworkGraph<T>::NetworkGraph(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  GraphBuilder<T> b(cfg_, nodes_);
  const auto ch = [&](int c) { return cfg_.scaled(c); };
  const auto post = NormPlacement::kPost;
  const auto pre = NormPlacement::kPre;
  const auto halve = MaxPoolSpec::strided(2, 2);

  // Five laminated conv-pool blocks: 416 -> 13.
  int x = b.conv("conv1", -1, ch(32), 3, post);
  x = b.pool("maxpool1", x, halve);
  x = b.conv("conv2", x, ch(64), 3, post);
  x = b.pool("maxpool2", x, halve);
  x = b.conv("conv3", x, ch(128), 3, post);
  x = b.conv("conv4", x, ch(64), 1, post);
  x = b.conv("conv5", x, ch(128), 3, post);
  x = b.pool("maxpool3", x, halve);
  x = b.conv("conv6", x, ch(256), 3, post);
  x = b.conv("conv7", x, ch(128), 1, post);
  x = b.conv("conv8", x, ch(256), 3, post);
  x = b.pool("maxpool4", x, halve);
  x = b.conv("conv9", x, ch(512), 3, post);
  x = b.conv("conv10", x, ch(256), 1, post);
  x = b.conv("conv11", x, ch(512), 3, post);
  x = b.conv("conv12", x, ch(256), 1, post);
  const int conv13 = b.conv("conv13", x, ch(512), 3, post);
  const int x0 = b.pool("maxpool5", conv13, halve);

  // Dense block: each unit is BN-leaky-conv3x3-BN-leaky-conv1x1 over the
  // concatenation of the block input and every earlier unit output.
  const int increments[4] = {256, 512, 512, 512};
  std::vector<int> dense = {x0};
  int block_in = x0;
  int conv_id = 14;
  for (int unit = 0; unit < 4; ++unit) {
    const int wide = b.conv("conv" + std::to_string(conv_id++), block_in, ch(1024), 3, pre);
    const int thin =
        b.conv("conv" + std::to_string(conv_id++), wide, ch(increments[unit]), 1, pre);
    dense.push_back(thin);
    block_in = b.route(unit == 3 ? "dc_block" : "dc_concat" + std::to_string(unit + 1), dense);
  }

  x = b.conv("conv22", block_in, ch(1024), 3, post);
  const int spp_in = b.conv("conv23", x, ch(512), 1, post);

  // SPP: stride-1 pools of ceil(S / n) for n = 3, 2, 1, concatenated with
  // their input.
  const int s = b.shape_of(spp_in).h;
  std::vector<int> spp = {spp_in};
  int pool_id = 6;
  for (int level : {3, 2, 1}) {
    const int window = (s + level - 1) / level;
    spp.push_back(b.pool("maxpool" + std::to_string(pool_id++), spp_in, MaxPoolSpec::same(window)));
  }
  x = b.route("spp_concat", spp);
  x = b.conv("conv26", x, ch(512), 1, post);
  const int conv27 = b.conv("conv27", x, ch(1024), 3, post);

  // Passthrough from the 26x26 map: 1x1 reduction, then space-to-depth.
  x = b.conv("passthrough", conv13, ch(64), 1, post);
  const int re = b.reorg("reorg", x, 2);
  x = b.route("head_concat", {re, conv27});
  x = b.conv("conv30", x, ch(1024), 3, post);
  b.conv("conv31", x, cfg_.output_channels(), 1, NormPlacement::kNone, NodeKind::kDetection);

}

template <typename T>
void NetworkGraph<T>::ensure_grads() {
  for (auto& node : nodes_) {
    if (!node.has_conv()) continue;
    auto& c = node.conv;
    if (c.grad_w.size() == c.conv.weights.size()) continue;
    c.grad_w = BasicTensor<T>(c.conv.weights.shape());
    c.grad_b.assign(c.conv.bias.size(), T{0});
    c.grad_gamma.assign(c.bn.gamma.size(), T{0});
    c.grad_beta.assign(c.bn.beta.size(), T{0});
  }
}

template <typename T>
NetworkGraph<T> build_network(const NetworkConfig& cfg) {
  return NetworkGraph<T>(cfg);
}

template <typename T>
Shape NetworkGraph<T>::input_shape(int batch) const {
  return Shape{batch, 3, cfg_.input_size, cfg_.input_size};
}

template <typename T>
Shape NetworkGraph<T>::output_shape(int batch) const {
  Shape s = nodes_.back().out_shape;
  s.n = batch;
  return s;
}

template <typename T>
int NetworkGraph<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

template <typename T>
std::vector<int> NetworkGraph<T>::spp_windows() const {
  std::vector<int> out;
  for (const char* name : {"maxpool6", "maxpool7", "maxpool8"}) {
    out.push_back(nodes_[static_cast<std::size_t>(find(name))].pool.size);
  }
  return out;
}

// ------------------------------------------------------------ forward / backward

namespace {

template <typename T>
BasicTensor<T> conv_layer_forward(ConvLayer<T>& L, const BasicTensor<T>& x, const LeakyParams& lk,
                                  bool training) {
  BNCache<T>* cache = training ? &L.bn_cache : nullptr;
  switch (L.norm) {
    case NormPlacement::kNone:
      if (training) L.conv_input = x;
      return conv2d_forward(x, L.conv);
    case NormPlacement::kPost: {
      if (training) L.conv_input = x;
      BasicTensor<T> y = conv2d_forward(x, L.conv);
      BasicTensor<T> z = batchnorm_forward(y, L.bn, training, cache);
      BasicTensor<T> out = leaky_forward(z, lk);
      if (training) L.act_input = std::move(z);
      return out;
    }
    case NormPlacement::kPre: {
      BasicTensor<T> z = batchnorm_forward(x, L.bn, training, cache);
      BasicTensor<T> a = leaky_forward(z, lk);
      BasicTensor<T> out = conv2d_forward(a, L.conv);
      if (training) {
        L.act_input = std::move(z);
        L.conv_input = std::move(a);
      }
      return out;
    }
  }
  return {};
}

template <typename T>
void add_to(std::vector<T>& acc, const std::vector<T>& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

template <typename T>
void add_to(BasicTensor<T>& acc, const BasicTensor<T>& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

// Returns d(loss)/d(layer input); empty when need_grad_x is false.
template <typename T>
BasicTensor<T> conv_layer_backward(ConvLayer<T>& L, const BasicTensor<T>& grad_out,
                                   const LeakyParams& lk, bool need_grad_x) {
  switch (L.norm) {
    case NormPlacement::kNone: {
      ConvGrads<T> g = conv2d_backward(grad_out, L.conv_input, L.conv, need_grad_x);
      add_to(L.grad_w, g.grad_w);
      add_to(L.grad_b, g.grad_b);
      return std::move(g.grad_x);
    }
    case NormPlacement::kPost: {
      BasicTensor<T> gz = leaky_backward(grad_out, L.act_input, lk);
      BNGrads<T> gb = batchnorm_backward(gz, L.bn_cache, L.bn);
      add_to(L.grad_gamma, gb.grad_gamma);
      add_to(L.grad_beta, gb.grad_beta);
      ConvGrads<T> g = conv2d_backward(gb.grad_x, L.conv_input, L.conv, need_grad_x);
      add_to(L.grad_w, g.grad_w);
      return std::move(g.grad_x);
    }
    case NormPlacement::kPre: {
      ConvGrads<T> g = conv2d_backward(grad_out, L.conv_input, L.conv, true);
      add_to(L.grad_w, g.grad_w);
      add_to(L.grad_b, g.grad_b);
      BasicTensor<T> gz = leaky_backward(g.grad_x, L.act_input, lk);
      BNGrads<T> gb = batchnorm_backward(gz, L.bn_cache, L.bn);
      add_to(L.grad_gamma, gb.grad_gamma);
      add_to(L.grad_beta, gb.grad_beta);
      return std::move(gb.grad_x);
    }
  }
  return {};
}

}  // namespace

template <typename T>
const BasicTensor<T>& NetworkGraph<T>::forward(const BasicTensor<T>& x, bool training) {
  const Shape expect = input_shape(x.shape().n);
  if (x.shape() != expect) {
    throw ShapeError("network input must be " + expect.str() + ", got " + x.shape().str());
  }
  const LeakyParams lk{cfg_.leaky_a};
  const auto input_of = [&](const LayerNode<T>& node, std::size_t k) -> const BasicTensor<T>& {
    const int id = node.inputs[k];
    return id < 0 ? x : nodes_[static_cast<std::size_t>(id)].output;
  };
  for (auto& node : nodes_) {
    switch (node.kind) {
      case NodeKind::kConv:
      case NodeKind::kDetection:
        node.output = conv_layer_forward(node.conv, input_of(node, 0), lk, training);
        break;
      case NodeKind::kMaxPool:
        node.output = maxpool_forward(input_of(node, 0), node.pool,
                                      training ? &node.pool_cache : nullptr);
        break;
      case NodeKind::kRoute: {
        std::vector<const BasicTensor<T>*> parts;
        for (std::size_t k = 0; k < node.inputs.size(); ++k) parts.push_back(&input_of(node, k));
        node.output = concat_channels<T>(std::span<const BasicTensor<T>* const>(parts));
        break;
      }
      case NodeKind::kReorg:
        node.output = reorg_forward(input_of(node, 0), node.reorg_stride);
        break;
    }
  }
  has_training_cache_ = training;
  batch_ = x.shape().n;
  return nodes_.back().output;
}

template <typename T>
void NetworkGraph<T>::backward(const BasicTensor<T>& grad_out) {
  if (!has_training_cache_) {
    throw StateError("backward requires a preceding training-mode forward pass");
  }
  if (grad_out.shape() != output_shape(batch_)) {
    throw ShapeError("backward: gradient " + grad_out.shape().str() + " does not match output " +
                     output_shape(batch_).str());
  }
  for (auto& node : nodes_) {
    Shape s = node.out_shape;
    s.n = batch_;
    if (node.grad.shape() != s) {
      node.grad = BasicTensor<T>(s);
    } else {
      node.grad.fill(T{0});
    }
  }
  add_to(nodes_.back().grad, grad_out);
  ensure_grads();

  const LeakyParams lk{cfg_.leaky_a};
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    LayerNode<T>& node = nodes_[i];
    const auto deliver = [&](int id, const BasicTensor<T>& g) {
      if (id >= 0) add_to(nodes_[static_cast<std::size_t>(id)].grad, g);
    };
    switch (node.kind) {
      case NodeKind::kConv:
      case NodeKind::kDetection: {
        const bool need_x = node.inputs[0] >= 0;
        BasicTensor<T> gx = conv_layer_backward(node.conv, node.grad, lk, need_x);
        if (need_x) deliver(node.inputs[0], gx);
        break;
      }
      case NodeKind::kMaxPool:
        deliver(node.inputs[0], maxpool_backward(node.grad, node.pool_cache));
        break;
      case NodeKind::kRoute: {
        int c0 = 0;
        for (int id : node.inputs) {
          const int c = id < 0 ? 3 : nodes_[static_cast<std::size_t>(id)].out_shape.c;
          deliver(id, slice_channels(node.grad, c0, c));
          c0 += c;
        }
        break;
      }
      case NodeKind::kReorg:
        deliver(node.inputs[0], reorg_backward(node.grad, node.reorg_stride));
        break;
    }
  }
}

template <typename T>
void NetworkGraph<T>::zero_grad() {
  ensure_grads();
  for (auto& node : nodes_) {
    if (!node.has_conv()) continue;
    auto& c = node.conv;
    c.grad_w.fill(T{0});
    std::fill(c.grad_b.begin(), c.grad_b.end(), T{0});
    std::fill(c.grad_gamma.begin(), c.grad_gamma.end(), T{0});
    std::fill(c.grad_beta.begin(), c.grad_beta.end(), T{0});
  }
}

template <typename T>
std::vector<ParamView<T>> NetworkGraph<T>::parameters() {
  ensure_grads();
  std::vector<ParamView<T>> out;
  for (auto& node : nodes_) {
    if (!node.has_conv()) continue;
    auto& c = node.conv;
    out.push_back({node.name + ".weights", ParamKind::kWeight, c.conv.weights.data(),
                   c.grad_w.data()});
    if (c.conv.use_bias) {
      out.push_back({node.name + ".bias", ParamKind::kBias, c.conv.bias, c.grad_b});
    }
    if (c.norm != NormPlacement::kNone) {
      out.push_back({node.name + ".bn_gamma", ParamKind::kGamma, c.bn.gamma, c.grad_gamma});
      out.push_back({node.name + ".bn_beta", ParamKind::kBeta, c.bn.beta, c.grad_beta});
    }
  }
  return out;
}

template <typename T>
std::size_t NetworkGraph<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& node : nodes_) {
    if (!node.has_conv()) continue;
    const auto& c = node.conv;
    total += c.conv.weights.size();
    if (c.conv.use_bias) total += c.conv.bias.size();
    if (c.norm != NormPlacement::kNone) total += 2 * c.bn.gamma.size();
  }
  return total;
}

template <typename T>
const BasicTensor<T>& NetworkGraph<T>::activation(const std::string& name) const {
  const int id = find(name);
  if (id < 0) throw ConfigError("no node named " + name);
  return nodes_[static_cast<std::size_t>(id)].output;
}

template <typename T>
template <typename U>
NetworkGraph<U> NetworkGraph<T>::cast() const {
  NetworkGraph<U> out(cfg_);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& src = nodes_[i].conv;
    auto& dst = out.nodes_[i].conv;
    if (!nodes_[i].has_conv()) continue;
    dst.conv.weights = src.conv.weights.template cast<U>();
    const auto conv_vec = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    dst.conv.bias = conv_vec(src.conv.bias);
    dst.bn.gamma = conv_vec(src.bn.gamma);
    dst.bn.beta = conv_vec(src.bn.beta);
    dst.bn.running_mean = conv_vec(src.bn.running_mean);
    dst.bn.running_var = conv_vec(src.bn.running_var);
  }
  return out;
}

// ------------------------------------------------------------ init

template <typename T>
void init_weights(NetworkGraph<T>& net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& node : net.nodes()) {
    if (!node.has_conv()) continue;
    auto& c = node.conv;
    const double fan_in = static_cast<double>(c.conv.kernel) * c.conv.kernel * c.conv.in_channels;
    const double s = std::sqrt(2.0 / fan_in);
    for (T& w : c.conv.weights.data()) w = static_cast<T>(uniform(rng, -s, s));
    std::fill(c.conv.bias.begin(), c.conv.bias.end(), T{0});
    std::fill(c.bn.gamma.begin(), c.bn.gamma.end(), T{1});
    std::fill(c.bn.beta.begin(), c.bn.beta.end(), T{0});
    std::fill(c.bn.running_mean.begin(), c.bn.running_mean.end(), T{0});
    std::fill(c.bn.running_var.begin(), c.bn.running_var.end(), T{1});
  }
}

// ------------------------------------------------------------ conformance table

std::vector<ShapeCheckRow> reference_shape_check(const NetworkGraph<float>& net) {
  const int out_c = net.config().output_channels();
  struct Ref {
    const char* label;
    const char* node;
    int side;
    int channels;
  };
  const Ref refs[] = {
      {"Conv 1", "conv1", 416, 32},          {"Maxpool 1", "maxpool1", 208, 32},
      {"Conv 2", "conv2", 208, 64},          {"Maxpool 2", "maxpool2", 104, 64},
      {"Conv 3", "conv3", 104, 128},         {"Conv 4", "conv4", 104, 64},
      {"Conv 5", "conv5", 104, 128},         {"Maxpool 3", "maxpool3", 52, 128},
      {"Conv 6", "conv6", 52, 256},          {"Conv 7", "conv7", 52, 128},
      {"Conv 8", "conv8", 52, 256},          {"Maxpool 4", "maxpool4", 26, 256},
      {"Conv 13", "conv13", 26, 512},        {"Maxpool 5", "maxpool5", 13, 512},
      {"DC Block", "dc_block", 13, 2304},    {"Conv 22", "conv22", 13, 1024},
      {"Conv 23", "conv23", 13, 512},        {"SPP Maxpool 6 (5x5/1)", "maxpool6", 13, 512},
      {"SPP Maxpool 7 (7x7/1)", "maxpool7", 13, 512},
      {"SPP Maxpool 8 (13x13/1)", "maxpool8", 13, 512},
      {"SPP Concat", "spp_concat", 13, 2048}, {"Conv 26", "conv26", 13, 512},
      {"Conv 27", "conv27", 13, 1024},       {"Reorg Conv13 /2", "reorg", 13, 256},
      {"Concat -1, -2", "head_concat", 13, 1280}, {"Conv 30", "conv30", 13, 1024},
      {"Conv 31", "conv31", 13, out_c},
  };
  std::vector<ShapeCheckRow> rows;
  for (const Ref& r : refs) {
    ShapeCheckRow row;
    row.label = r.label;
    row.node = r.node;
    row.expected = Shape{1, r.channels, r.side, r.side};
    const int id = net.find(r.node);
    row.actual = id < 0 ? Shape{} : net.nodes()[static_cast<std::size_t>(id)].out_shape;
    rows.push_back(std::move(row));
  }
  return rows;
}

template class NetworkGraph<float>;
template class NetworkGraph<double>;
template NetworkGraph<double> NetworkGraph<float>::cast<double>() const;
template NetworkGraph<float> NetworkGraph<double>::cast<float>() const;
template NetworkGraph<float> build_network<float>(const NetworkConfig&);
template NetworkGraph<double> build_network<double>(const NetworkConfig&);
template void init_weights<float>(NetworkGraph<float>&, std::uint64_t);
template void init_weights<double>(NetworkGraph<double>&, std::uint64_t);

}  // namespace dcspp
