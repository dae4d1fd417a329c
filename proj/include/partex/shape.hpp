#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "partex/common.hpp"
#include "partex/geom.hpp"

namespace partex {

/// Category-specific canonical part list. `seed` names the part whose
/// texture is generated first; when empty it is chosen from data (the part
/// whose box center lies nearest the shape center).
struct Category {
  std::string name;
  std::vector<std::string> slots;
  std::optional<std::string> seed;

  int slot_index(const std::string& label) const;  // -1 when unknown
};

/// Registered categories: chair, table, car, plane.
const Category& category(const std::string& name);
std::vector<std::string> category_names();

/// Reparameterized Gaussian latent.
struct GeomLatent {
  std::vector<float> mean;
  std::vector<float> logvar;
  std::vector<float> eps;     // the standard-normal draw used for `sample`
  std::vector<float> sample;  // mean + exp(logvar / 2) * eps
};

/// Per-slot existence flag and bounding box, normalized to the shape bounds
/// (centers in [0,1]^3, half extents as fractions of the shape extent).
struct StructureSlot {
  float exists = 0;
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Zero();
};

struct StructureCode {
  std::vector<StructureSlot> slots;

  static constexpr int kPerSlot = 7;
  std::vector<float> flatten() const;
  static StructureCode unflatten(const std::vector<float>& values, size_t num_slots);
};

/// Builds the structure code of a shape from its parts' boxes.
StructureCode structure_code(const Category& cat, const std::vector<std::string>& labels,
                             const std::vector<Aabb>& part_bounds);

/// Concatenated per-face code grids of one atlas (face order = CubeFace order;
/// face k occupies rows [k*grid, (k+1)*grid) of a 6-fold vertical stack).
struct IndexMatrices {
  int top_grid = 0;
  int bottom_grid = 0;
  std::vector<int32_t> top;     // 6 * top_grid^2
  std::vector<int32_t> bottom;  // 6 * bottom_grid^2
  bool operator==(const IndexMatrices&) const = default;
};

struct ShapeSpec {
  std::string category;
  std::vector<std::string> parts;  // present labels in canonical order
  std::map<std::string, GeomLatent> latents;
  std::optional<StructureCode> structure;
  std::map<std::string, IndexMatrices> textures;
};

struct LoadedShape {
  ShapeSpec spec;
  std::vector<geom::PartMesh> parts;  // same order as spec.parts
};

/// Reads a JSON manifest `{"category": str, "parts": [{"label": str, "mesh": path}]}`.
/// Mesh paths are relative to the manifest. A part entry may also carry a
/// "texture" PNG path that overrides the OBJ material.
LoadedShape load_shape(const std::filesystem::path& manifest_path);

struct ManifestPart {
  std::string label;
  std::string mesh;  // path relative to the manifest directory
};
void write_manifest(const std::filesystem::path& path, const std::string& category,
                    const std::vector<ManifestPart>& parts);

/// Wavefront OBJ. Vertices may carry RGB as `v x y z r g b`; faces must be
/// triangles. A `mtllib` whose material has `map_Kd` supplies the texture.
geom::PartMesh read_obj(const std::filesystem::path& path);

/// Writes `mesh` as OBJ. When the mesh has a texture it is written next to
/// the OBJ as `<stem>.png` together with a `<stem>.mtl`.
void write_obj(const std::filesystem::path& path, const geom::PartMesh& mesh);

}  // namespace partex
