#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "partex/bvh.hpp"
#include "partex/geom.hpp"

namespace fixtures {

using partex::Vec3;
using partex::geom::PartMesh;

/// Unit cube (vertices at +-0.5) as a subdivided template box with optional
/// per-vertex color.
inline PartMesh cube(int grid_n = 1, const std::function<Vec3(const Vec3&)>& color = {}) {
  PartMesh m = partex::geom::undeformed(partex::geom::template_box(grid_n)).to_mesh();
  if (color) {
    for (const auto& v : m.vertices) m.vertex_colors.push_back(color(v));
  }
  return m;
}

inline PartMesh uv_sphere(double radius, int stacks, int slices, Vec3 center = Vec3::Zero()) {
  PartMesh m;
  m.vertices.push_back(center + Vec3(0, radius, 0));
  for (int i = 1; i < stacks; ++i) {
    const double th = M_PI * i / stacks;
    for (int j = 0; j < slices; ++j) {
      const double ph = 2 * M_PI * j / slices;
      m.vertices.push_back(center + radius * Vec3(std::sin(th) * std::cos(ph), std::cos(th), std::sin(th) * std::sin(ph)));
    }
  }
  m.vertices.push_back(center + Vec3(0, -radius, 0));
  const int south = static_cast<int>(m.vertices.size()) - 1;
  auto ring = [&](int i, int j) { return 1 + (i - 1) * slices + (j % slices); };
  for (int j = 0; j < slices; ++j) m.faces.push_back({0, ring(1, j + 1), ring(1, j)});
  for (int i = 1; i < stacks - 1; ++i)
    for (int j = 0; j < slices; ++j) {
      m.faces.push_back({ring(i, j), ring(i, j + 1), ring(i + 1, j + 1)});
      m.faces.push_back({ring(i, j), ring(i + 1, j + 1), ring(i + 1, j)});
    }
  for (int j = 0; j < slices; ++j) m.faces.push_back({south, ring(stacks - 1, j), ring(stacks - 1, j + 1)});
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("partex_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double point_triangle_distance_brute(const PartMesh& m, const Vec3& p) {
  double best = INFINITY;
  for (const auto& f : m.faces) {
    auto h = partex::geom::closest_point_on_triangle(p, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]);
    best = std::min(best, h.distance);
  }
  return best;
}

}  // namespace fixtures
