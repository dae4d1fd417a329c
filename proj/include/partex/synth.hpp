#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "partex/geom.hpp"

namespace partex::synth {

/// Red, green, blue, yellow.
extern const std::array<Vec3, 4> kPalette;

/// Index of the palette color nearest to `rgb`.
int classify_color(const Vec3& rgb);

struct ToyOptions {
  int count = 20;
  uint64_t seed = 0;
  int mesh_grid = 6;  // quads per box face edge of each part mesh
};

/// Toy chair: box-shaped parts all painted one palette color. The color class
/// is i % 4 and is encoded only by the seat thickness; back, legs and
/// armrests are jittered independently of it. Shapes with (i / 4) odd carry
/// two armrests, so the structure distribution is bimodal.
struct ToyShape {
  std::string id;
  int color_class = 0;
  bool armrests = false;
  std::vector<std::string> labels;
  std::vector<geom::PartMesh> parts;
};

std::vector<ToyShape> toy_chairs(const ToyOptions& opt = {});

/// Writes `<dir>/<id>/<label>.obj` with vertex colors and
/// `<dir>/<id>/manifest.json`; returns the manifest paths in shape order.
std::vector<std::filesystem::path> write_toy_dataset(const std::vector<ToyShape>& shapes,
                                                     const std::filesystem::path& dir);

}  // namespace partex::synth
