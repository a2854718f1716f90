#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dcspp/network.hpp"

namespace dcspp {

namespace {

constexpr std::array<char, 4> kMagic = {'D', 'C', 'S', 'Y'};
constexpr std::size_t kHeaderBytes = 4 + 7 * 4;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

template <typename Range>
void put_floats(std::string& out, const Range& values) {
  for (auto v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open weight file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

WeightFileHeader parse_header(const std::string& bytes, const std::filesystem::path& path) {
  if (bytes.size() < kHeaderBytes) {
    throw FormatError("weight file " + path.string() + " is truncated: " +
                      std::to_string(bytes.size()) + " bytes, header needs " +
                      std::to_string(kHeaderBytes));
  }
  if (std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
    throw FormatError("weight file " + path.string() + " has bad magic (expected \"DCSY\")");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 4;
  WeightFileHeader h;
  h.version = get_u32(p);
  h.input_size = get_u32(p + 4);
  h.num_classes = get_u32(p + 8);
  h.num_anchors = get_u32(p + 12);
  h.scale_num = get_u32(p + 16);
  h.scale_den = get_u32(p + 20);
  h.layer_count = get_u32(p + 24);
  if (h.version != kWeightFormatVersion) {
    throw FormatError("weight file " + path.string() + " has format version " +
                      std::to_string(h.version) + ", expected " +
                      std::to_string(kWeightFormatVersion));
  }
  return h;
}

template <typename T>
std::size_t stored_float_count(const NetworkGraph<T>& net) {
  std::size_t total = 0;
  for (const auto& node : net.nodes()) {
    if (!node.has_conv()) continue;
    const auto& c = node.conv;
    if (c.norm != NormPlacement::kNone) total += 4 * c.bn.gamma.size();
    total += c.conv.bias.size() + c.conv.weights.size();
  }
  return total;
}

template <typename T>
std::uint32_t conv_layer_count(const NetworkGraph<T>& net) {
  std::uint32_t n = 0;
  for (const auto& node : net.nodes()) n += node.has_conv() ? 1u : 0u;
  return n;
}

}  // namespace

template <typename T>
void save_weights(const NetworkGraph<T>& net, const std::filesystem::path& path) {
  const NetworkConfig& cfg = net.config();
  std::string out;
  out.reserve(kHeaderBytes + 4 * stored_float_count(net));
  out.append(kMagic.data(), kMagic.size());
  put_u32(out, kWeightFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(cfg.input_size));
  put_u32(out, static_cast<std::uint32_t>(cfg.num_classes));
  put_u32(out, static_cast<std::uint32_t>(cfg.num_anchors));
  put_u32(out, static_cast<std::uint32_t>(cfg.scale_num));
  put_u32(out, static_cast<std::uint32_t>(cfg.scale_den));
  put_u32(out, conv_layer_count(net));
  for (const auto& node : net.nodes()) {
    if (!node.has_conv()) continue;
    const auto& c = node.conv;
    if (c.norm != NormPlacement::kNone) {
      put_floats(out, c.bn.gamma);
      put_floats(out, c.bn.beta);
      put_floats(out, c.bn.running_mean);
      put_floats(out, c.bn.running_var);
    }
    put_floats(out, c.conv.bias);
    put_floats(out, c.conv.weights.data());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write weight file " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("failed writing weight file " + path.string());
}

WeightFileHeader read_weight_header(const std::filesystem::path& path) {
  return parse_header(read_file(path), path);
}

template <typename T>
void load_weights(NetworkGraph<T>& net, const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const WeightFileHeader h = parse_header(bytes, path);
  const NetworkConfig& cfg = net.config();
  const std::size_t expected = stored_float_count(net);
  const std::size_t payload = bytes.size() - kHeaderBytes;
  const std::size_t found = payload / 4;

  std::ostringstream mismatch;
  if (h.input_size != static_cast<std::uint32_t>(cfg.input_size)) {
    mismatch << " input_size " << h.input_size << " vs " << cfg.input_size << ";";
  }
  if (h.num_classes != static_cast<std::uint32_t>(cfg.num_classes)) {
    mismatch << " classes " << h.num_classes << " vs " << cfg.num_classes << ";";
  }
  if (h.num_anchors != static_cast<std::uint32_t>(cfg.num_anchors)) {
    mismatch << " anchors " << h.num_anchors << " vs " << cfg.num_anchors << ";";
  }
  if (h.scale_num != static_cast<std::uint32_t>(cfg.scale_num) ||
      h.scale_den != static_cast<std::uint32_t>(cfg.scale_den)) {
    mismatch << " channel scale " << h.scale_num << "/" << h.scale_den << " vs " << cfg.scale_num
             << "/" << cfg.scale_den << ";";
  }
  if (h.layer_count != conv_layer_count(net)) {
    mismatch << " layer count " << h.layer_count << " vs " << conv_layer_count(net) << ";";
  }
  if (payload % 4 != 0 || found != expected || !mismatch.str().empty()) {
    throw FormatError("weight file " + path.string() + " does not fit the network: expected " +
                      std::to_string(expected) + " parameters, found " + std::to_string(found) +
                      (mismatch.str().empty() ? "" : " (file vs network:" + mismatch.str() + ")"));
  }

  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kHeaderBytes;
  const auto take = [&p](auto& range) {
    for (auto& v : range) {
      v = static_cast<std::remove_reference_t<decltype(v)>>(std::bit_cast<float>(get_u32(p)));
      p += 4;
    }
  };
  for (auto& node : net.nodes()) {
    if (!node.has_conv()) continue;
    auto& c = node.conv;
    if (c.norm != NormPlacement::kNone) {
      take(c.bn.gamma);
      take(c.bn.beta);
      take(c.bn.running_mean);
      take(c.bn.running_var);
    }
    take(c.conv.bias);
    auto w = c.conv.weights.data();
    take(w);
  }
}

NetworkGraph<float> load_network(const std::filesystem::path& path, NetworkConfig base) {
  const WeightFileHeader h = read_weight_header(path);
  base.input_size = static_cast<int>(h.input_size);
  base.num_classes = static_cast<int>(h.num_classes);
  base.num_anchors = static_cast<int>(h.num_anchors);
  base.scale_num = static_cast<int>(h.scale_num);
  base.scale_den = static_cast<int>(h.scale_den);
  NetworkGraph<float> net(base);
  load_weights(net, path);
  return net;
}

template void save_weights<float>(const NetworkGraph<float>&, const std::filesystem::path&);
template void save_weights<double>(const NetworkGraph<double>&, const std::filesystem::path&);
template void load_weights<float>(NetworkGraph<float>&, const std::filesystem::path&);
template void load_weights<double>(NetworkGraph<double>&, const std::filesystem::path&);

}  // namespace dcspp
