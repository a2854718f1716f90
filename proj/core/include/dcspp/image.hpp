#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcspp/detection.hpp"
#include "dcspp/loss.hpp"
#include "dcspp/tensor.hpp"

namespace dcspp {

/// 8-bit RGB image, row-major, 3 bytes per pixel.
struct ImageFile {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  ImageFile() = default;
  ImageFile(int w, int h, std::uint8_t fill = 0);

  std::uint8_t* pixel(int x, int y) {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* pixel(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  friend bool operator==(const ImageFile&, const ImageFile&) = default;
};

/// Binary P6 with maxval 255 and a "P6\n<w> <h>\n255\n" header on write.
ImageFile ppm_decode(const std::string& bytes, const std::string& source = "<memory>");
std::string ppm_encode(const ImageFile& img);
ImageFile ppm_read(const std::filesystem::path& path);
void ppm_write(const std::filesystem::path& path, const ImageFile& img);

/// Where the original image sits inside the square network input.
struct Letterbox {
  int target = 0;
  double scale = 1.0;
  int new_w = 0;
  int new_h = 0;
  int pad_x = 0;
  int pad_y = 0;
  int src_w = 0;
  int src_h = 0;
};

Letterbox letterbox_geometry(int src_w, int src_h, int target);

/// Aspect-preserving bilinear resize into a target x target frame padded
/// with 0.5 grey; values scaled to [0, 1], planes R, G, B. Output shape
/// (1, 3, target, target).
Tensor image_to_tensor(const ImageFile& img, int target, Letterbox* geometry = nullptr);

/// Normalized truths of the source image mapped into the letterboxed frame.
std::vector<TruthBox> letterbox_truths(const std::vector<TruthBox>& truths, const Letterbox& lb);

/// Network-input pixel boxes mapped back to source-image pixels and
/// clipped to the source bounds.
std::vector<Detection> unletterbox(std::vector<Detection> dets, const Letterbox& lb);

/// RGB colour assigned to a class for drawing.
std::array<std::uint8_t, 3> class_color(int class_id);

/// Draws 2-pixel rectangle outlines for every detection.
ImageFile render_detections(const ImageFile& img, const std::vector<Detection>& dets);

}  // namespace dcspp
