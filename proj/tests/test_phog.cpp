#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hic/error.hpp"
#include "hic/image.hpp"
#include "hic/phog.hpp"

using namespace hic;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("hic_phog_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

template <typename Fn>
std::optional<ErrorCode> code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

RasterImage gray_image(int w, int h, const std::function<std::uint8_t(int, int)>& f) {
  RasterImage img;
  img.width = w;
  img.height = h;
  img.channels = 1;
  img.data.resize(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.data[static_cast<std::size_t>(y) * w + x] = f(x, y);
  return img;
}

RasterImage textured_image(int w, int h) {
  return gray_image(w, h, [](int x, int y) {
    return static_cast<std::uint8_t>((x * 7 + y * 11 + (x * y) % 13) % 120);
  });
}

}  // namespace

TEST_CASE("default grid yields one descriptor per pyramid cell") {
  const RasterImage img = textured_image(32, 32);
  PhogConfig cfg;
  const ImageFeatures feats = extract(img, cfg);

  CHECK(cfg.cell_count() == 85);
  REQUIRE(feats.descriptors.size() == 85);
  std::vector<int> per_level(cfg.levels + 1, 0);
  for (const Descriptor& d : feats.descriptors) {
    REQUIRE(d.values.size() == 20);
    REQUIRE(d.cell_level >= 0);
    REQUIRE(d.cell_level <= cfg.levels);
    CHECK(d.cell_index >= 0);
    CHECK(d.cell_index < (1 << d.cell_level) * (1 << d.cell_level));
    per_level[d.cell_level]++;
  }
  CHECK(per_level[0] == 1);
  CHECK(per_level[1] == 4);
  CHECK(per_level[2] == 16);
  CHECK(per_level[3] == 64);
}

TEST_CASE("single level covers the image with one cell") {
  PhogConfig cfg;
  cfg.levels = 0;
  const ImageFeatures feats = extract(textured_image(8, 8), cfg);
  REQUIRE(feats.descriptors.size() == 1);
  CHECK(feats.descriptors[0].cell_level == 0);
  CHECK(feats.descriptors[0].cell_index == 0);
}

TEST_CASE("the smaller preset trims the pyramid") {
  const PhogConfig cfg = PhogConfig::cifar_preset();
  CHECK(cfg.levels == 2);
  CHECK(cfg.cell_count() == 21);
  const ImageFeatures feats = extract(textured_image(32, 32), cfg);
  CHECK(feats.descriptors.size() == 21);
}

TEST_CASE("every descriptor is a unit histogram") {
  const ImageFeatures feats = extract(textured_image(24, 24), PhogConfig{});
  for (const Descriptor& d : feats.descriptors) {
    double sum = 0.0;
    for (double v : d.values) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("a flat image falls back to uniform histograms") {
  const RasterImage img = gray_image(16, 16, [](int, int) { return 77; });
  const ImageFeatures feats = extract(img, PhogConfig{});
  for (const Descriptor& d : feats.descriptors)
    for (double v : d.values) CHECK(v == doctest::Approx(1.0 / 20.0).epsilon(1e-12));
}

TEST_CASE("a vertical step edge votes into the first orientation bin") {
  const RasterImage img = gray_image(4, 4, [](int x, int) { return x < 2 ? 0 : 255; });
  PhogConfig cfg;
  cfg.levels = 2;
  const ImageFeatures feats = extract(img, cfg);
  const Descriptor& whole = feats.descriptors[0];
  CHECK(whole.values[0] == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t b = 1; b < whole.values.size(); ++b) CHECK(whole.values[b] == 0.0);
}

TEST_CASE("rotating stripes a quarter turn shifts the histogram ten bins") {
  auto stripes_x = gray_image(16, 16, [](int x, int) { return (x / 2) % 2 ? 200 : 0; });
  auto stripes_y = gray_image(16, 16, [](int, int y) { return (y / 2) % 2 ? 200 : 0; });
  PhogConfig cfg;
  cfg.levels = 0;
  const Descriptor dx = extract(stripes_x, cfg).descriptors[0];
  const Descriptor dy = extract(stripes_y, cfg).descriptors[0];
  CHECK(dx.values[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(dy.values[10] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("brightness scaling cancels in the normalization") {
  const RasterImage a = textured_image(20, 20);
  RasterImage b = a;
  for (std::uint8_t& v : b.data) v = static_cast<std::uint8_t>(v * 2);

  const ImageFeatures fa = extract(a, PhogConfig{});
  const ImageFeatures fb = extract(b, PhogConfig{});
  REQUIRE(fa.descriptors.size() == fb.descriptors.size());
  for (std::size_t i = 0; i < fa.descriptors.size(); ++i)
    for (std::size_t v = 0; v < fa.descriptors[i].values.size(); ++v)
      CHECK(fa.descriptors[i].values[v] ==
            doctest::Approx(fb.descriptors[i].values[v]).epsilon(1e-9));
}

TEST_CASE("cells without gradient energy produce an all-zero raw histogram") {
  const RasterImage img = gray_image(10, 10, [](int, int) { return 50; });
  const GradientField field = compute_gradients(to_grayscale(img), img.width, img.height);
  const std::vector<double> raw = gradient_histogram(field, CellRect{0, 0, 10, 10}, 20, 180, 0.0);
  for (double v : raw) CHECK(v == 0.0);
}

TEST_CASE("the edge threshold gates weak magnitudes out") {
  const RasterImage img = textured_image(16, 16);
  const GradientField field = compute_gradients(to_grayscale(img), img.width, img.height);
  const std::vector<double> raw = gradient_histogram(field, CellRect{0, 0, 16, 16}, 20, 180, 1e6);
  for (double v : raw) CHECK(v == 0.0);

  PhogConfig cfg;
  cfg.edge_threshold = 1e6;
  const ImageFeatures feats = extract(img, cfg);
  for (const Descriptor& d : feats.descriptors)
    for (double v : d.values) CHECK(v == doctest::Approx(1.0 / 20.0).epsilon(1e-12));
}

TEST_CASE("config validation rejects unusable settings") {
  PhogConfig cfg;
  cfg.bins = 1;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
  cfg = PhogConfig{};
  cfg.angle_range = 90;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
  cfg = PhogConfig{};
  cfg.levels = -1;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
  cfg = PhogConfig{};
  cfg.edge_threshold = -0.5;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("images smaller than the finest grid are rejected") {
  PhogConfig cfg;  // levels = 3 needs 8x8
  CHECK(code_of([&] { extract(textured_image(4, 4), cfg); }) == ErrorCode::ImageTooSmall);
  CHECK(code_of([&] { compute_gradients(std::vector<float>(1, 0.f), 1, 1); }) ==
        ErrorCode::ImageTooSmall);
}

TEST_CASE("the full angle range keeps opposite directions apart") {
  PhogConfig cfg;
  cfg.levels = 0;
  cfg.angle_range = 360;
  cfg.bins = 36;
  auto rising = gray_image(16, 16, [](int x, int) { return static_cast<std::uint8_t>(x * 10); });
  auto falling =
      gray_image(16, 16, [](int x, int) { return static_cast<std::uint8_t>(150 - x * 10); });
  const Descriptor dr = extract(rising, cfg).descriptors[0];
  const Descriptor df = extract(falling, cfg).descriptors[0];
  CHECK(dr.values[0] == doctest::Approx(1.0).epsilon(1e-12));   // 0 degrees
  CHECK(df.values[18] == doctest::Approx(1.0).epsilon(1e-12));  // 180 degrees
}

TEST_CASE("descriptor dumps round trip") {
  TempDir tmp;
  PhogConfig cfg;
  cfg.levels = 2;
  std::vector<ImageFeatures> feats;
  feats.push_back(extract(textured_image(16, 16), cfg));
  feats.push_back(extract(textured_image(12, 20), cfg));

  const auto path = tmp.path / "features.phog";
  write_descriptor_dump(path, feats, cfg);

  PhogConfig read_cfg;
  const std::vector<ImageFeatures> back = read_descriptor_dump(path, &read_cfg);
  CHECK(read_cfg.levels == cfg.levels);
  CHECK(read_cfg.bins == cfg.bins);
  CHECK(read_cfg.angle_range == cfg.angle_range);
  REQUIRE(back.size() == feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    REQUIRE(back[i].descriptors.size() == feats[i].descriptors.size());
    for (std::size_t d = 0; d < feats[i].descriptors.size(); ++d) {
      CHECK(back[i].descriptors[d].cell_level == feats[i].descriptors[d].cell_level);
      CHECK(back[i].descriptors[d].cell_index == feats[i].descriptors[d].cell_index);
      CHECK(back[i].descriptors[d].values == feats[i].descriptors[d].values);
    }
  }
}

TEST_CASE("truncated dumps are rejected") {
  TempDir tmp;
  PhogConfig cfg;
  cfg.levels = 1;
  std::vector<ImageFeatures> feats{extract(textured_image(8, 8), cfg)};
  const auto path = tmp.path / "features.phog";
  write_descriptor_dump(path, feats, cfg);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  CHECK(code_of([&] { read_descriptor_dump(path); }) == ErrorCode::CorruptRecord);

  CHECK(code_of([&] { read_descriptor_dump(tmp.path / "absent.phog"); }) == ErrorCode::IoError);
}

TEST_CASE("color images collapse through the standard luma weights") {
  RasterImage rgb;
  rgb.width = 2;
  rgb.height = 1;
  rgb.channels = 3;
  rgb.data = {255, 0, 0, 0, 255, 0};  // red pixel, green pixel
  const std::vector<float> gray = to_grayscale(rgb);
  REQUIRE(gray.size() == 2);
  CHECK(gray[0] == doctest::Approx(0.299f * 255.0f).epsilon(1e-6));
  CHECK(gray[1] == doctest::Approx(0.587f * 255.0f).epsilon(1e-6));
}

TEST_CASE("gray-equivalent color images extract identically") {
  const RasterImage gray = textured_image(16, 16);
  RasterImage rgb;
  rgb.width = gray.width;
  rgb.height = gray.height;
  rgb.channels = 3;
  for (std::uint8_t v : gray.data) {
    rgb.data.push_back(v);
    rgb.data.push_back(v);
    rgb.data.push_back(v);
  }
  const ImageFeatures fg = extract(gray, PhogConfig{});
  const ImageFeatures fc = extract(rgb, PhogConfig{});
  REQUIRE(fg.descriptors.size() == fc.descriptors.size());
  for (std::size_t i = 0; i < fg.descriptors.size(); ++i)
    for (std::size_t v = 0; v < fg.descriptors[i].values.size(); ++v)
      CHECK(fg.descriptors[i].values[v] ==
            doctest::Approx(fc.descriptors[i].values[v]).epsilon(1e-9));
}
