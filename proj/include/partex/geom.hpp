#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "partex/common.hpp"
#include "partex/image.hpp"

namespace partex::geom {

using Triangle = std::array<int, 3>;

/// One semantic part of an input shape.
///
/// Color comes from (in order of preference) `texture` addressed through
/// `face_uvs`, interpolated `vertex_colors`, or a uniform 0.5 gray.
struct PartMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> faces;
  std::vector<Vec3> vertex_colors;             // empty or one per vertex, RGB in [0,1]
  std::vector<std::array<Vec2, 3>> face_uvs;   // empty or one per face, texel units of `texture`
  std::shared_ptr<const Image> texture;        // RGBA
  std::string label;

  bool empty() const { return faces.empty(); }
  Aabb bounds() const;
  /// Throws Error when indices are out of range or attribute arrays are inconsistent.
  void validate() const;
  /// Color at barycentric coordinates `bc` of face `f`.
  Rgba color_at(int f, const Vec3& bc, Filter filter = Filter::kBilinear) const;
};

/// Drops zero-area triangles (and their per-face attributes).
PartMesh filter_degenerate(PartMesh mesh, double area_eps = 1e-14);

double surface_area(const std::vector<Vec3>& vertices, const std::vector<Triangle>& faces);

/// Cube faces in template order. The frame of each face is the pair of
/// in-plane axes (right, down) seen from outside the cube; the atlas maps
/// them to image x and y.
enum class CubeFace : int { kPosX = 0, kNegX, kPosY, kNegY, kPosZ, kNegZ };
inline constexpr int kNumFaces = 6;

struct FaceFrame {
  Vec3 normal;
  Vec3 right;
  Vec3 down;
};
FaceFrame face_frame(CubeFace f);
const char* face_name(CubeFace f);  // right, left, top, bottom, front, back

/// Unit cube centered at the origin, each face an n x n quad grid.
///
/// Faces are emitted in CubeFace order and each face's lattice points row by
/// row (down axis) then column (right axis); a vertex shared with an earlier
/// face keeps its first index, so the mesh is watertight.
struct BoxMesh {
  int grid_n = 0;
  std::vector<Vec3> vertices;
  std::vector<Triangle> faces;
  std::vector<int> face_id;  // CubeFace per triangle

  static int vertex_count(int n) { return 6 * (n + 1) * (n + 1) - 12 * (n + 1) + 8; }
  static int triangle_count(int n) { return 12 * n * n; }
};

std::shared_ptr<const BoxMesh> template_box(int grid_n);

/// Triangle-vertex adjacency of a mesh, sorted neighbor lists.
std::vector<std::vector<int>> vertex_neighbors(size_t num_vertices, const std::vector<Triangle>& faces);

/// True when every undirected edge is shared by exactly two triangles.
bool is_watertight(const std::vector<Triangle>& faces);

struct DeformedBox {
  std::shared_ptr<const BoxMesh> box;
  std::vector<Vec3> displacements;  // model units, one per template vertex

  std::vector<Vec3> positions() const;
  Aabb bounds() const;
  PartMesh to_mesh() const;
};

DeformedBox undeformed(std::shared_ptr<const BoxMesh> box);

struct FitParams {
  int iters = 20;
  double step = 0.5;     // fraction moved toward the closest surface point
  double smooth = 0.3;   // uniform Laplacian weight on the displacement field
};

/// Fits the template to a part: bounding-box initialization followed by
/// `iters` rounds of closest-point attraction and displacement smoothing.
/// `trace`, when given, receives the box after initialization and after every
/// iteration.
DeformedBox fit_deformed_box(const PartMesh& part, std::shared_ptr<const BoxMesh> box,
                             const FitParams& params = {},
                             std::vector<DeformedBox>* trace = nullptr);

/// Normalized geometry of a deformed box: vertex positions are centered on
/// their centroid and scaled so the bounding-sphere radius matches the
/// template's, then expressed as offsets from the template.
struct GeometryVector {
  std::vector<double> values;  // 3 * V
  Vec3 norm_center = Vec3::Zero();
  double norm_scale = 1.0;     // deformed radius / template radius
};

GeometryVector geometry_vector(const DeformedBox& db);
DeformedBox apply_geometry_vector(const GeometryVector& gv, std::shared_ptr<const BoxMesh> box);

/// Realizes normalized offsets as a box placed to fill `target` (per-axis
/// scale and translation of the normalized shape's bounding box).
DeformedBox place_in_bounds(const std::vector<double>& values, std::shared_ptr<const BoxMesh> box,
                            const Aabb& target);

}  // namespace partex::geom
