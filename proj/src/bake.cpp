#include "partex/bake.hpp"

namespace partex::bake {

SurfaceIndex::SurfaceIndex(const geom::PartMesh& part) {
  if (part.empty()) throw Error("build_index: empty mesh");
  bvh_ = geom::TriangleBvh(part.vertices, part.faces);
}

SurfaceIndex build_index(const geom::PartMesh& part) { return SurfaceIndex(part); }

atlas::AtlasImage bake_part(const geom::PartMesh& part, const geom::DeformedBox& box,
                            const atlas::AtlasLayout& layout, const BakeParams& params) {
  if (!(params.tau > 0)) throw std::invalid_argument("bake_part: tau must be > 0");
  const SurfaceIndex index(part);
  const double max_dist = params.tau * part.bounds().diagonal();
  atlas::AtlasImage out = atlas::blank_atlas(layout.l);
  for (int y = 0; y < layout.height(); ++y) {
    for (int x = 0; x < layout.width(); ++x) {
      if (!layout.used(x, y)) continue;
      auto sp = atlas::uv_to_surface(layout, box, Vec2(x + 0.5, y + 0.5));
      if (!sp) continue;
      geom::ClosestHit hit = index.closest_point(sp->point);
      if (hit.distance > max_dist) continue;
      Rgba c = part.color_at(hit.face, hit.bary);
      if (c[3] < 0.5f) continue;
      float* px = out.pixels.px(x, y);
      px[0] = c[0];
      px[1] = c[1];
      px[2] = c[2];
      px[3] = 1.0f;
    }
  }
  return out;
}

}  // namespace partex::bake
