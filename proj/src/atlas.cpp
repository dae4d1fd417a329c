#include "partex/atlas.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace partex::atlas {

namespace {

constexpr std::array<std::pair<CubeFace, CubeFace>, 5> kKeptAdjacency = {{
    {CubeFace::kPosZ, CubeFace::kPosX},
    {CubeFace::kPosX, CubeFace::kNegZ},
    {CubeFace::kNegZ, CubeFace::kNegX},
    {CubeFace::kPosZ, CubeFace::kPosY},
    {CubeFace::kPosZ, CubeFace::kNegY},
}};

bool kept(CubeFace a, CubeFace b) {
  for (auto [x, y] : kKeptAdjacency) {
    if ((x == a && y == b) || (x == b && y == a)) return true;
  }
  return false;
}

// Half-plane ownership of a triangle edge with direction (dx, dy): exactly
// one of the two triangles sharing an edge owns texel centers lying on it.
bool owns_edge(int64_t dx, int64_t dy) { return dy > 0 || (dy == 0 && dx < 0); }

void rasterize(AtlasLayout& layout) {
  const int w = layout.width(), h = layout.height();
  layout.coverage.assign(static_cast<size_t>(w) * h, -1);
  for (size_t t = 0; t < layout.tri_uvs.size(); ++t) {
    // Doubled coordinates: vertices are even, texel centers odd.
    std::array<std::array<int64_t, 2>, 3> v;
    for (int k = 0; k < 3; ++k) {
      v[k] = {std::llround(2 * layout.tri_uvs[t][k].x()), std::llround(2 * layout.tri_uvs[t][k].y())};
    }
    int64_t area = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]);
    if (area == 0) continue;
    if (area < 0) std::swap(v[1], v[2]);
    int64_t xmin = std::min({v[0][0], v[1][0], v[2][0]}), xmax = std::max({v[0][0], v[1][0], v[2][0]});
    int64_t ymin = std::min({v[0][1], v[1][1], v[2][1]}), ymax = std::max({v[0][1], v[1][1], v[2][1]});
    for (int64_t y = ymin / 2; 2 * y + 1 <= ymax; ++y) {
      for (int64_t x = xmin / 2; 2 * x + 1 <= xmax; ++x) {
        int64_t px = 2 * x + 1, py = 2 * y + 1;
        bool inside = true;
        for (int k = 0; k < 3 && inside; ++k) {
          const auto& a = v[k];
          const auto& b = v[(k + 1) % 3];
          int64_t dx = b[0] - a[0], dy = b[1] - a[1];
          int64_t e = dx * (py - a[1]) - dy * (px - a[0]);
          inside = e > 0 || (e == 0 && owns_edge(dx, dy));
        }
        if (!inside) continue;
        int& slot = layout.coverage[static_cast<size_t>(y) * w + x];
        if (slot >= 0) throw std::logic_error("atlas rasterization: texel covered twice");
        slot = static_cast<int>(t);
      }
    }
  }
}

}  // namespace

Vec2 AtlasLayout::face_uv(CubeFace f, const Vec3& p) const {
  const auto fr = geom::face_frame(f);
  const Rect& r = face_rects[static_cast<int>(f)];
  return Vec2(r.x0 + (p.dot(fr.right) + 0.5) * l, r.y0 + (p.dot(fr.down) + 0.5) * l);
}

bool AtlasLayout::operator==(const AtlasLayout& o) const {
  if (l != o.l || grid_n != o.grid_n || coverage != o.coverage || tri_uvs.size() != o.tri_uvs.size() ||
      seam_pairs.size() != o.seam_pairs.size()) {
    return false;
  }
  for (int f = 0; f < geom::kNumFaces; ++f) {
    const Rect &a = face_rects[f], &b = o.face_rects[f];
    if (a.x0 != b.x0 || a.y0 != b.y0 || a.size != b.size) return false;
  }
  for (size_t t = 0; t < tri_uvs.size(); ++t) {
    for (int k = 0; k < 3; ++k) {
      if (tri_uvs[t][k] != o.tri_uvs[t][k]) return false;
    }
  }
  for (size_t s = 0; s < seam_pairs.size(); ++s) {
    const auto &a = seam_pairs[s], &b = o.seam_pairs[s];
    if (a.edge_id != b.edge_id || a.face_a != b.face_a || a.face_b != b.face_b ||
        a.side_a.start != b.side_a.start || a.side_a.end != b.side_a.end ||
        a.side_b.start != b.side_b.start || a.side_b.end != b.side_b.end) {
      return false;
    }
  }
  return true;
}

AtlasLayout build_layout(int l, int grid_n) {
  if (grid_n < 1) throw std::invalid_argument("build_layout: grid_n must be >= 1");
  if (l < 8) throw std::invalid_argument("build_layout: l must be >= 8");
  if (l % grid_n != 0) {
    throw std::invalid_argument("build_layout: l=" + std::to_string(l) +
                                " is not divisible by grid_n=" + std::to_string(grid_n));
  }
  AtlasLayout layout;
  layout.l = l;
  layout.grid_n = grid_n;
  layout.box = geom::template_box(grid_n);
  auto rect = [&](CubeFace f, int x0, int y0) { layout.face_rects[static_cast<int>(f)] = {x0, y0, l}; };
  rect(CubeFace::kPosZ, 0, l);
  rect(CubeFace::kPosX, l, l);
  rect(CubeFace::kNegZ, 2 * l, l);
  rect(CubeFace::kNegX, 3 * l, l);
  rect(CubeFace::kPosY, 0, 0);
  rect(CubeFace::kNegY, 0, 2 * l);

  const auto& box = *layout.box;
  layout.tri_uvs.resize(box.faces.size());
  for (size_t t = 0; t < box.faces.size(); ++t) {
    auto f = static_cast<CubeFace>(box.face_id[t]);
    for (int k = 0; k < 3; ++k) layout.tri_uvs[t][k] = layout.face_uv(f, box.vertices[box.faces[t][k]]);
  }

  int edge_id = 0;
  for (int a = 0; a < geom::kNumFaces; ++a) {
    for (int b = a + 1; b < geom::kNumFaces; ++b) {
      auto fa = static_cast<CubeFace>(a), fb = static_cast<CubeFace>(b);
      Vec3 na = geom::face_frame(fa).normal, nb = geom::face_frame(fb).normal;
      if (na.dot(nb) != 0.0 || kept(fa, fb)) continue;
      Vec3 axis = na.cross(nb);
      SeamPair sp;
      sp.edge_id = edge_id++;
      sp.face_a = fa;
      sp.face_b = fb;
      sp.edge_start = 0.5 * na + 0.5 * nb - 0.5 * axis;
      sp.edge_end = 0.5 * na + 0.5 * nb + 0.5 * axis;
      sp.side_a = {layout.face_uv(fa, sp.edge_start), layout.face_uv(fa, sp.edge_end)};
      sp.side_b = {layout.face_uv(fb, sp.edge_start), layout.face_uv(fb, sp.edge_end)};
      layout.seam_pairs.push_back(sp);
    }
  }
  rasterize(layout);
  return layout;
}

AtlasImage blank_atlas(int l) {
  AtlasImage a;
  a.l = l;
  a.pixels = Image(4 * l, 3 * l, 4, 0.0f);
  return a;
}

Patches split_patches(const AtlasImage& img, const AtlasLayout& layout) {
  const int l = layout.l;
  if (img.pixels.width != 4 * l || img.pixels.height != 3 * l || img.pixels.channels != 4) {
    throw std::invalid_argument("split_patches: expected a " + std::to_string(4 * l) + "x" +
                                std::to_string(3 * l) + " RGBA atlas, got " +
                                std::to_string(img.pixels.width) + "x" + std::to_string(img.pixels.height));
  }
  Patches out;
  for (int f = 0; f < geom::kNumFaces; ++f) {
    const Rect& r = layout.face_rects[f];
    out[f] = Image(l, l, 4);
    for (int y = 0; y < l; ++y) {
      std::copy_n(img.pixels.px(r.x0, r.y0 + y), 4 * l, out[f].px(0, y));
    }
  }
  return out;
}

AtlasImage merge_patches(const Patches& patches, const AtlasLayout& layout) {
  const int l = layout.l;
  AtlasImage out = blank_atlas(l);
  for (int f = 0; f < geom::kNumFaces; ++f) {
    const Image& p = patches[f];
    if (p.width != l || p.height != l || p.channels != 4) {
      throw std::invalid_argument("merge_patches: patch " + std::to_string(f) + " must be " +
                                  std::to_string(l) + "x" + std::to_string(l) + " RGBA");
    }
    const Rect& r = layout.face_rects[f];
    for (int y = 0; y < l; ++y) std::copy_n(p.px(0, y), 4 * l, out.pixels.px(r.x0, r.y0 + y));
  }
  return out;
}

Vec3 barycentric(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
  Vec2 v0 = b - a, v1 = c - a, v2 = p - a;
  double den = v0.x() * v1.y() - v1.x() * v0.y();
  double v = (v2.x() * v1.y() - v1.x() * v2.y()) / den;
  double w = (v0.x() * v2.y() - v2.x() * v0.y()) / den;
  return Vec3(1.0 - v - w, v, w);
}

std::optional<SurfacePoint> uv_to_surface(const AtlasLayout& layout, const geom::DeformedBox& box,
                                          const Vec2& uv) {
  int face = -1;
  for (int f = 0; f < geom::kNumFaces && face < 0; ++f) {
    const Rect& r = layout.face_rects[f];
    if (uv.x() >= r.x0 && uv.x() < r.x0 + r.size && uv.y() >= r.y0 && uv.y() < r.y0 + r.size) face = f;
  }
  for (int f = 0; f < geom::kNumFaces && face < 0; ++f) {
    if (layout.face_rects[f].contains(uv, 1e-9)) face = f;
  }
  if (face < 0) return std::nullopt;
  const Rect& r = layout.face_rects[face];
  const int n = layout.grid_n;
  const double cell = static_cast<double>(layout.l) / n;
  double lu = std::clamp((uv.x() - r.x0) / cell, 0.0, static_cast<double>(n));
  double lv = std::clamp((uv.y() - r.y0) / cell, 0.0, static_cast<double>(n));
  int i = std::min(static_cast<int>(lu), n - 1), j = std::min(static_cast<int>(lv), n - 1);
  // Cell (i, j) holds triangles {a,c,b} (upper right of the diagonal) then {a,d,c}.
  int base = face * 2 * n * n + 2 * (j * n + i);
  int tri = (lu - i) >= (lv - j) ? base : base + 1;
  const auto& t = layout.tri_uvs[tri];
  Vec3 bc = barycentric(uv, t[0], t[1], t[2]);
  const auto& fv = layout.box->faces[tri];
  SurfacePoint sp;
  sp.triangle = tri;
  sp.bary = bc;
  sp.point = Vec3::Zero();
  for (int k = 0; k < 3; ++k) {
    sp.point += bc[k] * (layout.box->vertices[fv[k]] + box.displacements[fv[k]]);
  }
  return sp;
}

std::vector<TexelPair> seam_texel_pairs(const AtlasLayout& layout) {
  std::vector<TexelPair> out;
  out.reserve(layout.seam_pairs.size() * layout.l);
  auto texel_inside = [&](CubeFace f, const Vec2& uv) {
    const Rect& r = layout.face_rects[static_cast<int>(f)];
    Vec2 c(r.x0 + 0.5 * r.size, r.y0 + 0.5 * r.size);
    Vec2 in = uv;
    // The segment is axis-aligned; step half a texel toward the rect center
    // across whichever boundary the point sits on.
    if (uv.x() == r.x0 || uv.x() == r.x0 + r.size) in.x() += (c.x() > uv.x() ? 0.5 : -0.5);
    if (uv.y() == r.y0 || uv.y() == r.y0 + r.size) in.y() += (c.y() > uv.y() ? 0.5 : -0.5);
    return std::array<int, 2>{static_cast<int>(std::floor(in.x())), static_cast<int>(std::floor(in.y()))};
  };
  for (const auto& sp : layout.seam_pairs) {
    for (int k = 0; k < layout.l; ++k) {
      double s = (k + 0.5) / layout.l;
      Vec3 p = sp.edge_start + s * (sp.edge_end - sp.edge_start);
      TexelPair tp;
      tp.edge_id = sp.edge_id;
      tp.uv_a = layout.face_uv(sp.face_a, p);
      tp.uv_b = layout.face_uv(sp.face_b, p);
      tp.texel_a = texel_inside(sp.face_a, tp.uv_a);
      tp.texel_b = texel_inside(sp.face_b, tp.uv_b);
      out.push_back(tp);
    }
  }
  return out;
}

}  // namespace partex::atlas
