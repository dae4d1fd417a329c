#include "partex/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "partex/common.hpp"

namespace partex {

namespace {

Rgba fetch(const Image& img, int x, int y) {
  x = std::clamp(x, 0, img.width - 1);
  y = std::clamp(y, 0, img.height - 1);
  const float* p = img.px(x, y);
  Rgba out{0, 0, 0, 1};
  if (img.channels == 1) {
    out = {p[0], p[0], p[0], 1};
  } else {
    for (int c = 0; c < std::min(img.channels, 4); ++c) out[c] = p[c];
  }
  return out;
}

}  // namespace

Rgba sample(const Image& img, double x, double y, Filter filter) {
  if (img.empty()) throw Error("sample: empty image");
  if (filter == Filter::kNearest) {
    return fetch(img, static_cast<int>(std::floor(x)), static_cast<int>(std::floor(y)));
  }
  double fx = x - 0.5, fy = y - 0.5;
  int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  double tx = fx - x0, ty = fy - y0;
  Rgba a = fetch(img, x0, y0), b = fetch(img, x0 + 1, y0);
  Rgba c = fetch(img, x0, y0 + 1), d = fetch(img, x0 + 1, y0 + 1);
  Rgba out;
  for (int k = 0; k < 4; ++k) {
    double top = a[k] * (1 - tx) + b[k] * tx;
    double bot = c[k] * (1 - tx) + d[k] * tx;
    out[k] = static_cast<float>(top * (1 - ty) + bot * ty);
  }
  return out;
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw Error("cannot read PNG '" + path.string() + "': " + png.message);
  }
  png.format = PNG_FORMAT_RGBA;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw Error("cannot decode PNG '" + path.string() + "': " + msg);
  }
  Image img(static_cast<int>(png.width), static_cast<int>(png.height), 4);
  for (size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.0f;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3 && img.channels != 4) throw Error("write_png: need 3 or 4 channels");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  std::vector<png_byte> buf(img.data.size());
  for (size_t i = 0; i < buf.size(); ++i) {
    float v = std::clamp(img.data[i], 0.0f, 1.0f);
    buf[i] = static_cast<png_byte>(std::lround(v * 255.0f));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw Error("cannot write PNG '" + path.string() + "': " + png.message);
  }
}

}  // namespace partex
