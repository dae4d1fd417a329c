#pragma once

#include <array>
#include <filesystem>
#include <vector>

namespace partex {

/// Row-major float image, `channels` interleaved values per pixel.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 4;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

  bool empty() const { return data.empty(); }
  float* px(int x, int y) { return data.data() + (static_cast<size_t>(y) * width + x) * channels; }
  const float* px(int x, int y) const {
    return data.data() + (static_cast<size_t>(y) * width + x) * channels;
  }
  bool operator==(const Image&) const = default;
};

using Rgba = std::array<float, 4>;

enum class Filter { kNearest, kBilinear };

/// Samples an RGBA value at a continuous pixel coordinate (pixel centers at
/// +0.5). Coordinates are clamped to the image; images with fewer than four
/// channels report alpha 1.
Rgba sample(const Image& img, double x, double y, Filter filter);

/// 8-bit PNG I/O. Reading always yields a 4-channel image.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

}  // namespace partex
