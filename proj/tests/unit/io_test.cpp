#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dcspp/dataset_io.hpp"
#include "dcspp/image.hpp"
#include "dcspp/random.hpp"
#include "test_support.hpp"

namespace dcspp {
namespace {

std::string error_of(const std::string& bytes) {
  try {
    ppm_decode(bytes, "x.ppm");
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

TEST(Ppm, EncodeWritesHeaderThenRowMajorRgb) {
  ImageFile img(2, 1);
  img.rgb = {1, 2, 3, 250, 251, 252};
  EXPECT_EQ(ppm_encode(img), std::string("P6\n2 1\n255\n\x01\x02\x03\xfa\xfb\xfc", 17));
}

TEST(Ppm, DecodeAcceptsCommentsAndWhitespace) {
  const std::string bytes = std::string("P6 # comment\n# more\n 2\t1 \n255\n") + "abcdef";
  const ImageFile img = ppm_decode(bytes);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.height, 1);
  EXPECT_EQ(img.pixel(1, 0)[0], 'd');
}

TEST(Ppm, RejectsMalformedFiles) {
  EXPECT_TRUE(contains(error_of("GIF89a"), "missing 'P6' magic"));
  EXPECT_TRUE(contains(error_of("P3\n1 1\n255\n0 0 0\n"), "ASCII PPM unsupported (P3)"));
  EXPECT_TRUE(contains(error_of("P6\n1 1\n65535\n" + std::string(6, '\0')), "maxval 65535"));
  EXPECT_TRUE(contains(error_of("P6\n2 2\n255\n" + std::string(5, '\0')),
                       "short payload: 5 bytes, expected 12"));
  EXPECT_TRUE(contains(error_of("P6\n2\n"), "missing height"));
  EXPECT_TRUE(contains(error_of("GIF89a"), "x.ppm"));
}

TEST(Ppm, RandomImagesRoundTripByteIdentically) {
  testing::TempDir dir;
  Rng rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    ImageFile img(static_cast<int>(uniform_int(rng, 1, 40)), static_cast<int>(uniform_int(rng, 1, 40)));
    for (auto& b : img.rgb) b = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
    ppm_write(dir / "a.ppm", img);
    const ImageFile back = ppm_read(dir / "a.ppm");
    EXPECT_EQ(back, img);
    ppm_write(dir / "b.ppm", back);
    EXPECT_EQ(testing::read_bytes(dir / "a.ppm"), testing::read_bytes(dir / "b.ppm"));
  }
  EXPECT_THROW(ppm_read(dir / "missing.ppm"), FormatError);
}

TEST(Labels, ParseAndFormatRoundTrip) {
  const auto boxes = parse_labels("0 0.5 0.5 0.2 0.4\n\n2 0.25 0.75 0.5 0.5\r\n", "l.txt");
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_EQ(boxes[1].class_id, 2);
  EXPECT_EQ(boxes[1].y, 0.75);
  EXPECT_EQ(format_labels(boxes), "0 0.500000 0.500000 0.200000 0.400000\n2 0.250000 0.750000 0.500000 0.500000\n");
}

TEST(Labels, ErrorsCarryFileAndLine) {
  const auto message = [](const std::string& text) {
    try {
      parse_labels(text, "set/a.txt");
    } catch (const FormatError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_TRUE(contains(message("0 0.5 0.5 0.2 0.2\n1 0.5 0.5\n"), "set/a.txt:2"));
  EXPECT_TRUE(contains(message("\n\n0 0.5 0.5 0.2 0.2 9\n"), "set/a.txt:3"));
  EXPECT_TRUE(contains(message("-1 0.5 0.5 0.2 0.2\n"), "set/a.txt:1: class id"));
  EXPECT_TRUE(contains(message("0 0.95 0.5 0.2 0.2\n"), "out of range"));
  EXPECT_TRUE(contains(message("0 0.5 0.5 0 0.2\n"), "out of range"));
}

TEST(Manifest, ResolvesRelativePathsAgainstItsDirectory) {
  testing::TempDir dir;
  std::filesystem::create_directories(dir / "sub");
  testing::write_bytes(dir / "sub/m.tsv", "images/a.ppm\tlabels/a.txt\n\n/abs/b.ppm\t/abs/b.txt\n");
  const auto entries = read_manifest(dir / "sub/m.tsv");
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].image, dir / "sub/images/a.ppm");
  EXPECT_EQ(entries[1].label, std::filesystem::path("/abs/b.txt"));

  testing::write_bytes(dir / "bad.tsv", "a.ppm\tb.txt\nno-tab-here\n");
  try {
    read_manifest(dir / "bad.tsv");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_TRUE(contains(e.what(), "bad.tsv:2"));
  }
}

TEST(Manifest, LoadDatasetPicksUpClassList) {
  testing::TempDir dir;
  write_manifest(dir / "m.tsv", {{"i.ppm", "l.txt"}});
  write_class_names(dir / "classes.txt", {"cat", "dog"});
  const DatasetManifest d = load_dataset(dir / "m.tsv");
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"cat", "dog"}));
  EXPECT_EQ(d.entries.size(), 1u);
}

TEST(Letterbox, GeometryForWideTallAndSquareImages) {
  const Letterbox wide = letterbox_geometry(200, 100, 96);
  EXPECT_EQ(wide.new_w, 96);
  EXPECT_EQ(wide.new_h, 48);
  EXPECT_EQ(wide.pad_x, 0);
  EXPECT_EQ(wide.pad_y, 24);
  const Letterbox tall = letterbox_geometry(50, 150, 96);
  EXPECT_EQ(tall.new_w, 32);
  EXPECT_EQ(tall.new_h, 96);
  EXPECT_EQ(tall.pad_x, 32);
  const Letterbox square = letterbox_geometry(96, 96, 96);
  EXPECT_EQ(square.scale, 1.0);
  EXPECT_EQ(square.pad_x, 0);
}

TEST(Letterbox, TensorPadsWithGreyAndKeepsConstantRegions) {
  ImageFile img(200, 100);
  for (int y = 0; y < 100; ++y) {
    for (int x = 0; x < 200; ++x) {
      img.pixel(x, y)[0] = 255;
      img.pixel(x, y)[1] = 0;
      img.pixel(x, y)[2] = 51;
    }
  }
  Letterbox lb;
  const Tensor t = image_to_tensor(img, 96, &lb);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 96, 96}));
  EXPECT_EQ(t.at(0, 0, 0, 10), 0.5f);
  EXPECT_EQ(t.at(0, 2, 95, 50), 0.5f);
  EXPECT_FLOAT_EQ(t.at(0, 0, 24, 0), 1.0f);
  EXPECT_FLOAT_EQ(t.at(0, 1, 50, 50), 0.0f);
  EXPECT_FLOAT_EQ(t.at(0, 2, 71, 95), 0.2f);
}

TEST(Letterbox, IdentitySizeCopiesPixels) {
  Rng rng(3);
  ImageFile img(32, 32);
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
  const Tensor t = image_to_tensor(img, 32);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      for (int c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(t.at(0, c, y, x), img.pixel(x, y)[c] / 255.0f);
    }
  }
}

TEST(Letterbox, TruthsAndDetectionsMapBothWays) {
  const Letterbox lb = letterbox_geometry(200, 100, 96);
  const auto boxes = letterbox_truths({{0.5, 0.5, 0.5, 0.5, 1}}, lb);
  EXPECT_DOUBLE_EQ(boxes[0].x, 0.5);
  EXPECT_DOUBLE_EQ(boxes[0].w, 0.5);
  EXPECT_DOUBLE_EQ(boxes[0].y, 0.5);
  EXPECT_DOUBLE_EQ(boxes[0].h, 0.25);

  // the same box in network pixels maps back to the source box
  const std::vector<Detection> net_px{{BBox{24, 36, 72, 60}, 1, 0.9}};
  const auto src = unletterbox(net_px, lb);
  EXPECT_DOUBLE_EQ(src[0].box.x_min, 50.0);
  EXPECT_DOUBLE_EQ(src[0].box.x_max, 150.0);
  EXPECT_DOUBLE_EQ(src[0].box.y_min, 25.0);
  EXPECT_DOUBLE_EQ(src[0].box.y_max, 75.0);
  // padding maps outside the source and is clipped
  const auto clipped = unletterbox({{BBox{0, 0, 96, 96}, 0, 0.5}}, lb);
  EXPECT_EQ(clipped[0].box, (BBox{0, 0, 200, 100}));
}

TEST(Render, DrawsTwoPixelOutlineOnly) {
  const ImageFile img(20, 20, 7);
  const ImageFile out = render_detections(img, {{BBox{4, 5, 14, 15}, 3, 0.9}});
  const auto color = class_color(3);
  int changed = 0;
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 20; ++x) {
      const bool inside = x >= 4 && x <= 13 && y >= 5 && y <= 14;
      const bool interior = x >= 6 && x <= 11 && y >= 7 && y <= 12;
      const bool outline = inside && !interior;
      const std::uint8_t* p = out.pixel(x, y);
      if (outline) {
        EXPECT_EQ(p[0], color[0]);
        EXPECT_EQ(p[1], color[1]);
        EXPECT_EQ(p[2], color[2]);
        ++changed;
      } else {
        EXPECT_EQ(p[0], 7) << x << "," << y;
      }
    }
  }
  EXPECT_EQ(changed, 10 * 10 - 6 * 6);
  EXPECT_NE(class_color(0), class_color(1));
}

}  // namespace
}  // namespace dcspp
