#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dcspp/image.hpp"
#include "dcspp/training.hpp"

namespace dcspp {

namespace {

enum Shape2D { kCircle = 0, kSquare = 1, kTriangle = 2 };

struct PixelBox {
  int x0, y0, x1, y1;  // inclusive

  bool overlaps(const PixelBox& o, int margin) const {
    return !(x1 + margin < o.x0 || o.x1 + margin < x0 || y1 + margin < o.y0 || o.y1 + margin < y0);
  }
};

// Pixel centres inside the shape whose bounding square is (left, top, side).
bool inside(int kind, double px, double py, double left, double top, double side) {
  const double u = (px - left) / side;
  const double v = (py - top) / side;
  if (u < 0 || u > 1 || v < 0 || v > 1) return false;
  switch (kind) {
    case kCircle:
      return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25;
    case kSquare:
      return true;
    default:
      // apex at top centre, base along the bottom edge
      return std::abs(u - 0.5) <= 0.5 * v;
  }
}

}  // namespace

DatasetManifest synth_dataset(int n, int image_size, std::uint64_t seed,
                              const std::filesystem::path& out_dir) {
  if (n < 1) throw ConfigError("synth: n must be >= 1");
  if (image_size < 32 || image_size % 32 != 0) {
    throw ConfigError("synth: image size must be a positive multiple of 32");
  }
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "labels", ec);
  if (ec || !fs::is_directory(out_dir / "images") || !fs::is_directory(out_dir / "labels")) {
    throw FormatError("synth: cannot create dataset directories under " + out_dir.string());
  }

  Rng rng(seed);
  const int S = image_size;
  const int min_side = std::max(8, S / 5);
  const int max_side = std::max(min_side + 1, S * 9 / 20);
  DatasetManifest manifest;
  manifest.class_names = synth_class_names();
  std::vector<ManifestEntry> relative;

  for (int idx = 0; idx < n; ++idx) {
    ImageFile img(S, S);
    for (auto& b : img.rgb) b = static_cast<std::uint8_t>(uniform_int(rng, 30, 110));

    std::vector<TruthBox> truths;
    std::vector<PixelBox> placed;
    const int count = static_cast<int>(uniform_int(rng, 1, 3));
    for (int s = 0; s < count; ++s) {
      const int kind = static_cast<int>(uniform_int(rng, 0, 2));
      std::array<std::uint8_t, 3> color{};
      for (auto& c : color) c = static_cast<std::uint8_t>(uniform_int(rng, 150, 255));
      bool ok = false;
      PixelBox box{};
      int side = 0, left = 0, top = 0;
      for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
        side = static_cast<int>(uniform_int(rng, min_side, max_side));
        left = static_cast<int>(uniform_int(rng, 0, S - side));
        top = static_cast<int>(uniform_int(rng, 0, S - side));
        box = {left, top, left + side - 1, top + side - 1};
        ok = std::none_of(placed.begin(), placed.end(),
                          [&](const PixelBox& p) { return box.overlaps(p, 2); });
      }
      if (!ok) continue;
      placed.push_back(box);

      // exact extent of the pixels actually painted
      int x_lo = S, y_lo = S, x_hi = -1, y_hi = -1;
      for (int y = top; y < top + side; ++y) {
        for (int x = left; x < left + side; ++x) {
          if (!inside(kind, x + 0.5, y + 0.5, left, top, side)) continue;
          std::uint8_t* p = img.pixel(x, y);
          p[0] = color[0];
          p[1] = color[1];
          p[2] = color[2];
          x_lo = std::min(x_lo, x);
          y_lo = std::min(y_lo, y);
          x_hi = std::max(x_hi, x);
          y_hi = std::max(y_hi, y);
        }
      }
      const double w = x_hi - x_lo + 1;
      const double h = y_hi - y_lo + 1;
      truths.push_back({(x_lo + w / 2) / S, (y_lo + h / 2) / S, w / S, h / S, kind});
    }

    char stem[32];
    std::snprintf(stem, sizeof(stem), "%06d", idx);
    const fs::path image_rel = fs::path("images") / (std::string(stem) + ".ppm");
    const fs::path label_rel = fs::path("labels") / (std::string(stem) + ".txt");
    ppm_write(out_dir / image_rel, img);
    write_label_file(out_dir / label_rel, truths);
    relative.push_back({image_rel, label_rel});
    manifest.entries.push_back({out_dir / image_rel, out_dir / label_rel});
  }
  write_manifest(out_dir / "manifest.tsv", relative);
  write_class_names(out_dir / "classes.txt", manifest.class_names);
  return manifest;
}

}  // namespace dcspp
