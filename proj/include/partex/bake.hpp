#pragma once

#include "partex/atlas.hpp"
#include "partex/bvh.hpp"
#include "partex/geom.hpp"

namespace partex::bake {

/// Closest-point acceleration structure over one part's triangles.
class SurfaceIndex {
 public:
  explicit SurfaceIndex(const geom::PartMesh& part);

  geom::ClosestHit closest_point(const Vec3& p) const { return bvh_.closest_point(p); }
  const geom::TriangleBvh& bvh() const { return bvh_; }
  int leaf_count() const { return bvh_.leaf_count(); }

 private:
  geom::TriangleBvh bvh_;
};

/// Throws Error on an empty mesh.
SurfaceIndex build_index(const geom::PartMesh& part);

struct BakeParams {
  double tau = 0.03;  // miss threshold as a fraction of the part's bbox diagonal
};

/// Fills every used texel with the color of the part surface nearest to the
/// texel's point on the deformed box. Texels whose nearest surface point lies
/// farther than tau * diagonal, or whose source texel is transparent, get
/// RGBA (0,0,0,0). Alpha is always exactly 0 or 1.
atlas::AtlasImage bake_part(const geom::PartMesh& part, const geom::DeformedBox& box,
                            const atlas::AtlasLayout& layout, const BakeParams& params = {});

}  // namespace partex::bake
