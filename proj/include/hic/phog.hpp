#pragma once

#include <filesystem>
#include <vector>

#include "hic/image.hpp"

namespace hic {

struct PhogConfig {
  int levels = 3;           // pyramid levels beyond level 0 (level l has 2^l x 2^l cells)
  int bins = 20;            // orientation bins
  int angle_range = 180;    // 180 or 360 degrees
  double edge_threshold = 0.0;

  // Cifar-scale images are too small for the full pyramid.
  static PhogConfig cifar_preset() {
    PhogConfig cfg;
    cfg.levels = 2;
    return cfg;
  }

  // number of pyramid cells: sum over l of 4^l
  int cell_count() const {
    int n = 0;
    for (int l = 0, c = 1; l <= levels; ++l, c *= 4) n += c;
    return n;
  }

  void validate() const;  // throws InvalidConfig
};

// One orientation histogram per pyramid cell. Descriptors stay separate
// (they are quantized individually); nothing is concatenated.
struct Descriptor {
  std::vector<double> values;  // length bins, L1-normalized
  int cell_level = 0;
  int cell_index = 0;
};

struct ImageFeatures {
  std::vector<Descriptor> descriptors;
};

// Centered-difference gradients, one-sided at image borders.
struct GradientField {
  int width = 0;
  int height = 0;
  std::vector<float> magnitude;
  std::vector<float> orientation_deg;  // folded into [0, angle_range) at voting time
};

GradientField compute_gradients(const std::vector<float>& gray, int width, int height);

struct CellRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
};

// Magnitude-weighted orientation votes over one rectangular cell. Orientation
// is folded into [0, angle_range); a pixel votes only when its gradient
// magnitude exceeds edge_threshold. No interpolation across bins. Returns the
// raw (unnormalized) histogram; an empty cell yields the zero vector.
std::vector<double> gradient_histogram(const GradientField& field, const CellRect& cell,
                                       int bins, int angle_range, double edge_threshold);

// Full pyramid extraction. Throws ImageTooSmall when the finest level would
// produce sub-pixel cells, InvalidConfig for a bad PhogConfig. Zero-energy
// cells emit the uniform vector so every descriptor lives on the simplex.
ImageFeatures extract(const RasterImage& image, const PhogConfig& cfg);

// Flat binary descriptor dump: "PHOG" magic, version, image count, levels,
// bins, then per-image little-endian f32 blocks.
void write_descriptor_dump(const std::filesystem::path& path,
                           const std::vector<ImageFeatures>& features, const PhogConfig& cfg);
std::vector<ImageFeatures> read_descriptor_dump(const std::filesystem::path& path, PhogConfig* cfg_out = nullptr);

}  // namespace hic
