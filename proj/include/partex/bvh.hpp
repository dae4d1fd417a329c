#pragma once

#include <optional>
#include <vector>

#include "partex/common.hpp"
#include "partex/geom.hpp"

namespace partex::geom {

struct ClosestHit {
  Vec3 point = Vec3::Zero();
  double distance = std::numeric_limits<double>::infinity();
  int face = -1;
  Vec3 bary = Vec3::Zero();  // weights of the face's three vertices
};

struct RayHit {
  double t = 0.0;
  int face = -1;
  Vec3 bary = Vec3::Zero();
};

/// Closest point on triangle (a, b, c) to p, with barycentric weights.
ClosestHit closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Ray/triangle intersection (Moller-Trumbore); t may be any sign.
std::optional<RayHit> intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a,
                                         const Vec3& b, const Vec3& c);

/// Binary bounding-volume hierarchy over a triangle soup. Construction is a
/// deterministic median split along the widest centroid axis.
class TriangleBvh {
 public:
  struct Node {
    Aabb box;
    int left = -1, right = -1;  // children, or -1 for leaves
    int first = 0, count = 0;   // leaf range into order()
  };

  TriangleBvh() = default;
  TriangleBvh(std::vector<Vec3> vertices, std::vector<Triangle> faces, int leaf_size = 4);

  /// Globally nearest surface point; ties go to the lowest face index.
  ClosestHit closest_point(const Vec3& p) const;

  /// First hit strictly after (t_after, face_after) in (t, face) order, with
  /// t > 0. Successive calls feeding back the previous hit visit every
  /// intersection along the ray exactly once.
  std::optional<RayHit> next_hit(const Vec3& origin, const Vec3& dir, double t_after = 0.0,
                                 int face_after = -1) const;

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<int>& order() const { return order_; }
  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Triangle>& faces() const { return faces_; }
  int leaf_count() const;

 private:
  int build(int first, int count, std::vector<Vec3>& centroids, int leaf_size);

  std::vector<Vec3> vertices_;
  std::vector<Triangle> faces_;
  std::vector<Node> nodes_;
  std::vector<int> order_;
};

}  // namespace partex::geom
