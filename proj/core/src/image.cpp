#include "dcspp/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dcspp {

ImageFile::ImageFile(int w, int h, std::uint8_t fill)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {
  if (w < 1 || h < 1) throw ConfigError("image dimensions must be >= 1");
}

// ------------------------------------------------------------ PPM

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const std::string& source)
      : bytes_(bytes), source_(source) {}

  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long long number(const char* what) {
    skip_space();
    long long v = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000'000) fail(std::string(what) + " too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) fail(std::string("malformed header: missing ") + what);
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError("PPM " + source_ + ": " + msg);
  }

  std::size_t pos_ = 0;

 private:
  const std::string& bytes_;
  const std::string& source_;
};

}  // namespace

ImageFile ppm_decode(const std::string& bytes, const std::string& source) {
  HeaderReader r(bytes, source);
  if (bytes.size() < 2 || bytes[0] != 'P') r.fail("not a PPM file (missing 'P6' magic)");
  if (bytes[1] == '3') r.fail("ASCII PPM unsupported (P3); only binary P6 is accepted");
  if (bytes[1] != '6') r.fail(std::string("unsupported format P") + bytes[1] + ", expected P6");
  r.pos_ = 2;
  const long long w = r.number("width");
  const long long h = r.number("height");
  const long long maxval = r.number("maxval");
  if (w < 1 || h < 1) r.fail("width and height must be >= 1");
  if (maxval != 255) r.fail("maxval " + std::to_string(maxval) + " unsupported, expected 255");
  if (r.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos_]))) {
    r.fail("malformed header: expected whitespace after maxval");
  }
  ++r.pos_;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (bytes.size() - r.pos_ < need) {
    r.fail("short payload: " + std::to_string(bytes.size() - r.pos_) + " bytes, expected " +
           std::to_string(need));
  }
  ImageFile img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos_),
                 bytes.begin() + static_cast<std::ptrdiff_t>(r.pos_ + need));
  return img;
}

std::string ppm_encode(const ImageFile& img) {
  if (img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw FormatError("image payload does not match its dimensions");
  }
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return out;
}

ImageFile ppm_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ppm_decode(ss.str(), path.string());
}

void ppm_write(const std::filesystem::path& path, const ImageFile& img) {
  const std::string bytes = ppm_encode(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write image " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing image " + path.string());
}

// ------------------------------------------------------------ letterbox

Letterbox letterbox_geometry(int src_w, int src_h, int target) {
  Letterbox lb;
  lb.target = target;
  lb.src_w = src_w;
  lb.src_h = src_h;
  lb.scale = std::min(static_cast<double>(target) / src_w, static_cast<double>(target) / src_h);
  lb.new_w = std::clamp(static_cast<int>(std::lround(src_w * lb.scale)), 1, target);
  lb.new_h = std::clamp(static_cast<int>(std::lround(src_h * lb.scale)), 1, target);
  lb.pad_x = (target - lb.new_w) / 2;
  lb.pad_y = (target - lb.new_h) / 2;
  return lb;
}

Tensor image_to_tensor(const ImageFile& img, int target, Letterbox* geometry) {
  const Letterbox lb = letterbox_geometry(img.width, img.height, target);
  if (geometry != nullptr) *geometry = lb;
  Tensor out(Shape{1, 3, target, target}, 0.5f);
  const double sx = static_cast<double>(img.width) / lb.new_w;
  const double sy = static_cast<double>(img.height) / lb.new_h;
  const bool identity = lb.new_w == img.width && lb.new_h == img.height;
  for (int y = 0; y < lb.new_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = identity ? y : static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double ay = identity ? 0.0 : fy - y0;
    for (int x = 0; x < lb.new_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = identity ? x : static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double ax = identity ? 0.0 : fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double p00 = img.pixel(x0, y0)[c];
        const double p01 = img.pixel(x1, y0)[c];
        const double p10 = img.pixel(x0, y1)[c];
        const double p11 = img.pixel(x1, y1)[c];
        // v0 + (v1 - v0) * a keeps constant regions exactly constant
        const double top = p00 + (p01 - p00) * ax;
        const double bottom = p10 + (p11 - p10) * ax;
        const double v = top + (bottom - top) * ay;
        out.at(0, c, lb.pad_y + y, lb.pad_x + x) = static_cast<float>(v / 255.0);
      }
    }
  }
  return out;
}

std::vector<TruthBox> letterbox_truths(const std::vector<TruthBox>& truths, const Letterbox& lb) {
  std::vector<TruthBox> out;
  out.reserve(truths.size());
  const double t = lb.target;
  for (TruthBox b : truths) {
    b.x = (b.x * lb.new_w + lb.pad_x) / t;
    b.y = (b.y * lb.new_h + lb.pad_y) / t;
    b.w = b.w * lb.new_w / t;
    b.h = b.h * lb.new_h / t;
    out.push_back(b);
  }
  return out;
}

std::vector<Detection> unletterbox(std::vector<Detection> dets, const Letterbox& lb) {
  const double kx = static_cast<double>(lb.src_w) / lb.new_w;
  const double ky = static_cast<double>(lb.src_h) / lb.new_h;
  for (Detection& d : dets) {
    d.box.x_min = std::clamp((d.box.x_min - lb.pad_x) * kx, 0.0, static_cast<double>(lb.src_w));
    d.box.x_max = std::clamp((d.box.x_max - lb.pad_x) * kx, 0.0, static_cast<double>(lb.src_w));
    d.box.y_min = std::clamp((d.box.y_min - lb.pad_y) * ky, 0.0, static_cast<double>(lb.src_h));
    d.box.y_max = std::clamp((d.box.y_max - lb.pad_y) * ky, 0.0, static_cast<double>(lb.src_h));
  }
  return dets;
}

// ------------------------------------------------------------ rendering

std::array<std::uint8_t, 3> class_color(int class_id) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette = {{
      {230, 25, 75},
      {60, 180, 75},
      {0, 130, 200},
      {255, 225, 25},
      {245, 130, 48},
      {145, 30, 180},
      {70, 240, 240},
      {240, 50, 230},
  }};
  const std::uint32_t h = static_cast<std::uint32_t>(class_id) * 2654435761u;
  return kPalette[(h >> 16) % kPalette.size()];
}

ImageFile render_detections(const ImageFile& img, const std::vector<Detection>& dets) {
  constexpr int kThickness = 2;
  ImageFile out = img;
  for (const Detection& d : dets) {
    const int x0 = std::clamp(static_cast<int>(std::lround(d.box.x_min)), 0, img.width - 1);
    const int y0 = std::clamp(static_cast<int>(std::lround(d.box.y_min)), 0, img.height - 1);
    const int x1 = std::clamp(static_cast<int>(std::lround(d.box.x_max)) - 1, x0, img.width - 1);
    const int y1 = std::clamp(static_cast<int>(std::lround(d.box.y_max)) - 1, y0, img.height - 1);
    const auto color = class_color(d.class_id);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const bool edge = x - x0 < kThickness || x1 - x < kThickness || y - y0 < kThickness ||
                          y1 - y < kThickness;
        if (!edge) continue;
        std::uint8_t* p = out.pixel(x, y);
        p[0] = color[0];
        p[1] = color[1];
        p[2] = color[2];
      }
    }
  }
  return out;
}

}  // namespace dcspp
