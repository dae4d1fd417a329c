#include "partex/bvh.hpp"

#include <algorithm>
#include <numeric>

namespace partex::geom {

ClosestHit closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  auto make = [&](double u, double v, double w) {
    ClosestHit h;
    h.bary = Vec3(u, v, w);
    h.point = u * a + v * b + w * c;
    h.distance = (p - h.point).norm();
    return h;
  };
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return make(1, 0, 0);
  Vec3 bp = p - b;
  double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return make(0, 1, 0);
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    double v = d1 / (d1 - d3);
    return make(1 - v, v, 0);
  }
  Vec3 cp = p - c;
  double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return make(0, 0, 1);
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    double w = d2 / (d2 - d6);
    return make(1 - w, 0, w);
  }
  double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return make(0, 1 - w, w);
  }
  double denom = 1.0 / (va + vb + vc);
  double v = vb * denom, w = vc * denom;
  return make(1 - v - w, v, w);
}

std::optional<RayHit> intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a,
                                         const Vec3& b, const Vec3& c) {
  constexpr double kEdgeEps = 1e-12;
  Vec3 e1 = b - a, e2 = c - a;
  Vec3 pv = dir.cross(e2);
  double det = e1.dot(pv);
  if (std::abs(det) < 1e-300) return std::nullopt;
  double inv = 1.0 / det;
  Vec3 tv = origin - a;
  double u = tv.dot(pv) * inv;
  if (u < -kEdgeEps || u > 1 + kEdgeEps) return std::nullopt;
  Vec3 qv = tv.cross(e1);
  double v = dir.dot(qv) * inv;
  if (v < -kEdgeEps || u + v > 1 + kEdgeEps) return std::nullopt;
  RayHit hit;
  hit.t = e2.dot(qv) * inv;
  hit.bary = Vec3(1 - u - v, u, v);
  return hit;
}

TriangleBvh::TriangleBvh(std::vector<Vec3> vertices, std::vector<Triangle> faces, int leaf_size)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  if (faces_.empty()) throw Error("TriangleBvh: empty mesh");
  std::vector<Vec3> centroids(faces_.size());
  for (size_t i = 0; i < faces_.size(); ++i) {
    const auto& f = faces_[i];
    centroids[i] = (vertices_[f[0]] + vertices_[f[1]] + vertices_[f[2]]) / 3.0;
  }
  order_.resize(faces_.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * faces_.size() / std::max(1, leaf_size) + 1);
  build(0, static_cast<int>(faces_.size()), centroids, std::max(1, leaf_size));
}

int TriangleBvh::build(int first, int count, std::vector<Vec3>& centroids, int leaf_size) {
  int index = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Aabb box, cbox;
  for (int i = first; i < first + count; ++i) {
    const auto& f = faces_[order_[i]];
    for (int k = 0; k < 3; ++k) box.expand(vertices_[f[k]]);
    cbox.expand(centroids[order_[i]]);
  }
  nodes_[index].box = box;
  if (count <= leaf_size) {
    nodes_[index].first = first;
    nodes_[index].count = count;
    return index;
  }
  Vec3 ext = cbox.extent();
  int axis = 0;
  if (ext[1] > ext[axis]) axis = 1;
  if (ext[2] > ext[axis]) axis = 2;
  int mid = first + count / 2;
  std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                   [&](int a, int b) {
                     if (centroids[a][axis] != centroids[b][axis])
                       return centroids[a][axis] < centroids[b][axis];
                     return a < b;
                   });
  int left = build(first, mid - first, centroids, leaf_size);
  int right = build(mid, first + count - mid, centroids, leaf_size);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

int TriangleBvh::leaf_count() const {
  return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(),
                                        [](const Node& n) { return n.left < 0; }));
}

ClosestHit TriangleBvh::closest_point(const Vec3& p) const {
  ClosestHit best;
  if (nodes_.empty()) return best;
  double best2 = std::numeric_limits<double>::infinity();
  std::vector<int> stack{0};
  stack.reserve(64);
  while (!stack.empty()) {
    int ni = stack.back();
    stack.pop_back();
    const Node& n = nodes_[ni];
    if (n.box.distance2(p) > best2) continue;
    if (n.left < 0) {
      for (int i = n.first; i < n.first + n.count; ++i) {
        int fi = order_[i];
        const auto& f = faces_[fi];
        ClosestHit h = closest_point_on_triangle(p, vertices_[f[0]], vertices_[f[1]], vertices_[f[2]]);
        double d2 = (p - h.point).squaredNorm();
        if (d2 < best2 || (d2 == best2 && fi < best.face)) {
          best2 = d2;
          best = h;
          best.face = fi;
        }
      }
      continue;
    }
    double dl = nodes_[n.left].box.distance2(p), dr = nodes_[n.right].box.distance2(p);
    // Visit the nearer child first.
    if (dl <= dr) {
      stack.push_back(n.right);
      stack.push_back(n.left);
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  best.distance = std::sqrt(best2);
  return best;
}

namespace {

bool slab_hit(const Aabb& box, const Vec3& o, const Vec3& inv_dir, double t_max) {
  double t0 = 0.0, t1 = t_max;
  for (int k = 0; k < 3; ++k) {
    double a = (box.lo[k] - o[k]) * inv_dir[k];
    double b = (box.hi[k] - o[k]) * inv_dir[k];
    if (a > b) std::swap(a, b);
    // NaN (0 * inf) means the ray lies in the slab plane; keep it.
    if (a == a) t0 = std::max(t0, a);
    if (b == b) t1 = std::min(t1, b);
    if (t0 > t1 * (1 + 1e-12) + 1e-12) return false;
  }
  return true;
}

}  // namespace

std::optional<RayHit> TriangleBvh::next_hit(const Vec3& origin, const Vec3& dir, double t_after,
                                            int face_after) const {
  std::optional<RayHit> best;
  if (nodes_.empty()) return best;
  Vec3 inv(1.0 / dir[0], 1.0 / dir[1], 1.0 / dir[2]);
  auto after = [&](double t, int f) { return t > t_after || (t == t_after && f > face_after); };
  auto before_best = [&](double t, int f) {
    return !best || t < best->t || (t == best->t && f < best->face);
  };
  std::vector<int> stack{0};
  stack.reserve(64);
  while (!stack.empty()) {
    int ni = stack.back();
    stack.pop_back();
    const Node& n = nodes_[ni];
    double t_max = best ? best->t : std::numeric_limits<double>::infinity();
    if (!slab_hit(n.box, origin, inv, t_max)) continue;
    if (n.left >= 0) {
      stack.push_back(n.right);
      stack.push_back(n.left);
      continue;
    }
    for (int i = n.first; i < n.first + n.count; ++i) {
      int fi = order_[i];
      const auto& f = faces_[fi];
      auto h = intersect_triangle(origin, dir, vertices_[f[0]], vertices_[f[1]], vertices_[f[2]]);
      if (!h || h->t <= 0) continue;
      if (after(h->t, fi) && before_best(h->t, fi)) {
        h->face = fi;
        best = h;
      }
    }
  }
  return best;
}

}  // namespace partex::geom
