#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hic {

// 8-bit raster image, row-major, interleaved channels for RGB.
struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (grayscale) or 3 (RGB)
  std::vector<std::uint8_t> data;

  bool valid() const {
    return width > 0 && height > 0 && (channels == 1 || channels == 3) &&
           data.size() == static_cast<std::size_t>(width) * height * channels;
  }
};

// Luma conversion with weights 0.299/0.587/0.114; grayscale passes through.
std::vector<float> to_grayscale(const RasterImage& image);

// PNG/JPEG decode, dispatched on the file's magic bytes. Anything else is
// rejected with an IoError.
RasterImage decode_image_file(const std::filesystem::path& path);
RasterImage decode_png(const std::uint8_t* bytes, std::size_t size);
RasterImage decode_jpeg(const std::uint8_t* bytes, std::size_t size);

void save_png(const RasterImage& image, const std::filesystem::path& path);
void save_jpeg(const RasterImage& image, const std::filesystem::path& path, int quality = 90);

}  // namespace hic
