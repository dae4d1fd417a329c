#pragma once

#include <array>
#include <memory>
#include <optional>
#include <vector>

#include "partex/geom.hpp"
#include "partex/image.hpp"

namespace partex::atlas {

using geom::CubeFace;

/// Axis-aligned square of texels [x0, x0+size) x [y0, y0+size).
struct Rect {
  int x0 = 0, y0 = 0, size = 0;
  bool contains_texel(int x, int y) const { return x >= x0 && x < x0 + size && y >= y0 && y < y0 + size; }
  bool contains(const Vec2& uv, double tol = 0.0) const {
    return uv.x() >= x0 - tol && uv.x() <= x0 + size + tol && uv.y() >= y0 - tol &&
           uv.y() <= y0 + size + tol;
  }
};

struct UvSegment {
  Vec2 start, end;
};

/// One cut box edge: two boundary segments of the atlas that are the same
/// 3D edge before unfolding. Parameter s in [0,1] along side_a and side_b
/// reaches the same 3D point (edge_start + s * (edge_end - edge_start)).
struct SeamPair {
  int edge_id = 0;
  CubeFace face_a{}, face_b{};
  UvSegment side_a, side_b;
  Vec3 edge_start, edge_end;  // on the template box
};

/// Sampled correspondence across a seam: `uv_a`/`uv_b` lie exactly on the
/// rectangle boundaries, `texel_a`/`texel_b` are the texels just inside.
struct TexelPair {
  int edge_id = 0;
  Vec2 uv_a, uv_b;
  std::array<int, 2> texel_a{}, texel_b{};
};

/// Cross unfolding of the template box into a 4l x 3l image:
///
///   row 0 : top    at x in [0, l)
///   row 1 : front, right, back, left at x offsets 0, l, 2l, 3l
///   row 2 : bottom at x in [0, l)
///
/// with front = +Z, right = +X, back = -Z, left = -X, top = +Y, bottom = -Y.
/// Texel (x, y) has its center at (x + 0.5, y + 0.5).
class AtlasLayout {
 public:
  int l = 0;
  int grid_n = 0;
  std::shared_ptr<const geom::BoxMesh> box;
  std::array<Rect, geom::kNumFaces> face_rects{};    // indexed by CubeFace
  std::vector<std::array<Vec2, 3>> tri_uvs;          // per template triangle
  std::vector<SeamPair> seam_pairs;
  std::vector<int> coverage;                         // texel -> triangle, -1 when unused

  int width() const { return 4 * l; }
  int height() const { return 3 * l; }
  int triangle_at(int x, int y) const { return coverage[static_cast<size_t>(y) * width() + x]; }
  bool used(int x, int y) const { return triangle_at(x, y) >= 0; }
  /// UV of a template-box point lying on cube face `f`.
  Vec2 face_uv(CubeFace f, const Vec3& p) const;
  bool operator==(const AtlasLayout& o) const;
};

/// Throws std::invalid_argument when l < 8 or l is not a multiple of grid_n.
AtlasLayout build_layout(int l, int grid_n);

struct AtlasImage {
  int l = 0;
  Image pixels;  // 4l x 3l RGBA
};

AtlasImage blank_atlas(int l);

using Patches = std::array<Image, geom::kNumFaces>;  // l x l RGBA, CubeFace order

Patches split_patches(const AtlasImage& img, const AtlasLayout& layout);
/// Places patches into their rectangles; texels outside all rectangles are (0,0,0,0).
AtlasImage merge_patches(const Patches& patches, const AtlasLayout& layout);

struct SurfacePoint {
  Vec3 point;
  int triangle = -1;
  Vec3 bary;
};

/// Maps a UV point through its UV triangle onto the matching triangle of the
/// deformed box. Points on a rectangle's boundary count as inside; points in
/// the unused region return nullopt.
std::optional<SurfacePoint> uv_to_surface(const AtlasLayout& layout, const geom::DeformedBox& box,
                                          const Vec2& uv);

/// l samples per seam pair at parameters (k + 0.5) / l; 7l pairs in total.
std::vector<TexelPair> seam_texel_pairs(const AtlasLayout& layout);

/// Barycentric coordinates of p in the 2D triangle (a, b, c).
Vec3 barycentric(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c);

}  // namespace partex::atlas
