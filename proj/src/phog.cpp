#include "hic/phog.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "binary_io.hpp"
#include "hic/error.hpp"

namespace hic {

namespace {

constexpr std::uint32_t kDumpVersion = 1;

}  // namespace

void PhogConfig::validate() const {
  if (levels < 0)
    throw Error(ErrorCode::InvalidConfig, "pyramid levels must be >= 0, got " + std::to_string(levels));
  if (bins < 2)
    throw Error(ErrorCode::InvalidConfig, "orientation bins must be >= 2, got " + std::to_string(bins));
  if (angle_range != 180 && angle_range != 360)
    throw Error(ErrorCode::InvalidConfig,
                "angle range must be 180 or 360, got " + std::to_string(angle_range));
  if (edge_threshold < 0.0)
    throw Error(ErrorCode::InvalidConfig, "edge threshold must be >= 0");
}

GradientField compute_gradients(const std::vector<float>& gray, int width, int height) {
  if (width < 2 || height < 2)
    throw Error(ErrorCode::ImageTooSmall, "gradients need at least a 2x2 image, got " +
                                              std::to_string(width) + "x" + std::to_string(height));
  if (gray.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw Error(ErrorCode::DimensionMismatch, "gray buffer does not match image dimensions");

  GradientField field;
  field.width = width;
  field.height = height;
  field.magnitude.resize(gray.size());
  field.orientation_deg.resize(gray.size());

  auto at = [&](int x, int y) { return gray[static_cast<std::size_t>(y) * width + x]; };

  constexpr double kRadToDeg = 180.0 / std::numbers::pi;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      // Centered differences, one-sided at the borders.
      double dx = (x == 0)           ? at(1, y) - at(0, y)
                  : (x == width - 1) ? at(width - 1, y) - at(width - 2, y)
                                     : 0.5 * (at(x + 1, y) - at(x - 1, y));
      double dy = (y == 0)            ? at(x, 1) - at(x, 0)
                  : (y == height - 1) ? at(x, height - 1) - at(x, height - 2)
                                      : 0.5 * (at(x, y + 1) - at(x, y - 1));
      std::size_t i = static_cast<std::size_t>(y) * width + x;
      field.magnitude[i] = static_cast<float>(std::hypot(dx, dy));
      double deg = std::atan2(dy, dx) * kRadToDeg;  // (-180, 180]
      if (deg < 0.0) deg += 360.0;                  // [0, 360)
      field.orientation_deg[i] = static_cast<float>(deg);
    }
  }
  return field;
}

std::vector<double> gradient_histogram(const GradientField& field, const CellRect& cell,
                                       int bins, int angle_range, double edge_threshold) {
  std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
  const double bin_width = static_cast<double>(angle_range) / bins;
  for (int y = cell.y0; y < cell.y1; ++y) {
    for (int x = cell.x0; x < cell.x1; ++x) {
      std::size_t i = static_cast<std::size_t>(y) * field.width + x;
      double mag = field.magnitude[i];
      if (!(mag > edge_threshold)) continue;
      double deg = field.orientation_deg[i];
      if (angle_range == 180 && deg >= 180.0) deg -= 180.0;
      int b = static_cast<int>(deg / bin_width);
      b = std::clamp(b, 0, bins - 1);
      hist[static_cast<std::size_t>(b)] += mag;
    }
  }
  return hist;
}

ImageFeatures extract(const RasterImage& image, const PhogConfig& cfg) {
  cfg.validate();
  if (!image.valid())
    throw Error(ErrorCode::InvalidConfig, "cannot extract features from an empty image");

  const int finest = 1 << cfg.levels;
  if (image.width < finest || image.height < finest || image.width < 2 || image.height < 2)
    throw Error(ErrorCode::ImageTooSmall,
                std::to_string(image.width) + "x" + std::to_string(image.height) +
                    " image cannot host a " + std::to_string(finest) + "x" +
                    std::to_string(finest) + " grid");

  std::vector<float> gray = to_grayscale(image);
  GradientField field = compute_gradients(gray, image.width, image.height);

  ImageFeatures features;
  features.descriptors.reserve(static_cast<std::size_t>(cfg.cell_count()));

  for (int level = 0; level <= cfg.levels; ++level) {
    const int n = 1 << level;
    for (int cy = 0; cy < n; ++cy) {
      for (int cx = 0; cx < n; ++cx) {
        CellRect cell;
        cell.x0 = cx * image.width / n;
        cell.x1 = (cx + 1) * image.width / n;
        cell.y0 = cy * image.height / n;
        cell.y1 = (cy + 1) * image.height / n;

        Descriptor d;
        d.cell_level = level;
        d.cell_index = cy * n + cx;
        d.values = gradient_histogram(field, cell, cfg.bins, cfg.angle_range, cfg.edge_threshold);

        double sum = 0.0;
        for (double v : d.values) sum += v;
        if (sum > 0.0) {
          for (double& v : d.values) v /= sum;
        } else {
          // Zero-energy cell: uniform vector keeps the descriptor on the simplex.
          std::fill(d.values.begin(), d.values.end(), 1.0 / cfg.bins);
        }
        features.descriptors.push_back(std::move(d));
      }
    }
  }
  return features;
}

void write_descriptor_dump(const std::filesystem::path& path,
                           const std::vector<ImageFeatures>& features, const PhogConfig& cfg) {
  cfg.validate();
  io::Writer w(path);
  w.magic("PHOG");
  w.scalar<std::uint32_t>(kDumpVersion);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(features.size()));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(cfg.levels));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(cfg.bins));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(cfg.angle_range));
  const std::size_t per_image = static_cast<std::size_t>(cfg.cell_count());
  for (const ImageFeatures& f : features) {
    if (f.descriptors.size() != per_image)
      throw Error(ErrorCode::DimensionMismatch, "descriptor count does not match the pyramid");
    for (const Descriptor& d : f.descriptors) {
      if (d.values.size() != static_cast<std::size_t>(cfg.bins))
        throw Error(ErrorCode::DimensionMismatch, "descriptor length does not match bin count");
      for (double v : d.values) w.scalar<double>(v);
    }
  }
}

std::vector<ImageFeatures> read_descriptor_dump(const std::filesystem::path& path, PhogConfig* cfg_out) {
  io::Reader r(path);
  r.expect_magic("PHOG", "descriptor dump");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kDumpVersion)
    throw Error(ErrorCode::CorruptRecord,
                "unsupported descriptor dump version " + std::to_string(version));
  const auto count = r.scalar<std::uint32_t>();
  PhogConfig cfg;
  cfg.levels = static_cast<int>(r.scalar<std::uint32_t>());
  cfg.bins = static_cast<int>(r.scalar<std::uint32_t>());
  cfg.angle_range = static_cast<int>(r.scalar<std::uint32_t>());
  cfg.validate();
  if (cfg_out) *cfg_out = cfg;

  std::vector<ImageFeatures> features(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ImageFeatures& f = features[i];
    f.descriptors.reserve(static_cast<std::size_t>(cfg.cell_count()));
    for (int level = 0; level <= cfg.levels; ++level) {
      const int n = 1 << level;
      for (int cell = 0; cell < n * n; ++cell) {
        Descriptor d;
        d.cell_level = level;
        d.cell_index = cell;
        d.values.resize(static_cast<std::size_t>(cfg.bins));
        for (double& v : d.values) v = r.scalar<double>();
        f.descriptors.push_back(std::move(d));
      }
    }
  }
  return features;
}

}  // namespace hic
