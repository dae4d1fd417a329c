#include "partex/geom.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "partex/bvh.hpp"

namespace partex::geom {

Aabb PartMesh::bounds() const {
  Aabb b;
  for (const auto& v : vertices) b.expand(v);
  return b;
}

void PartMesh::validate() const {
  const int nv = static_cast<int>(vertices.size());
  for (const auto& f : faces) {
    for (int k = 0; k < 3; ++k) {
      if (f[k] < 0 || f[k] >= nv) {
        throw Error("part '" + label + "': face index " + std::to_string(f[k]) +
                    " out of range (" + std::to_string(nv) + " vertices)");
      }
    }
  }
  if (!vertex_colors.empty() && vertex_colors.size() != vertices.size()) {
    throw Error("part '" + label + "': vertex color count does not match vertex count");
  }
  if (!face_uvs.empty() && face_uvs.size() != faces.size()) {
    throw Error("part '" + label + "': texture coordinate count does not match face count");
  }
  if (!face_uvs.empty() && !texture) {
    throw Error("part '" + label + "': texture coordinates without a texture");
  }
}

Rgba PartMesh::color_at(int f, const Vec3& bc, Filter filter) const {
  if (texture && !face_uvs.empty()) {
    const auto& uv = face_uvs[f];
    Vec2 p = bc[0] * uv[0] + bc[1] * uv[1] + bc[2] * uv[2];
    if (filter == Filter::kNearest) {
      // Keep the lookup inside the triangle's texel footprint so points on a
      // chart's far edge do not read the neighbouring (unused) texel.
      double max_u = std::max({uv[0].x(), uv[1].x(), uv[2].x()});
      double max_v = std::max({uv[0].y(), uv[1].y(), uv[2].y()});
      double min_u = std::min({uv[0].x(), uv[1].x(), uv[2].x()});
      double min_v = std::min({uv[0].y(), uv[1].y(), uv[2].y()});
      double x = std::clamp(std::floor(p.x()), std::floor(min_u), std::ceil(max_u) - 1);
      double y = std::clamp(std::floor(p.y()), std::floor(min_v), std::ceil(max_v) - 1);
      return sample(*texture, x + 0.5, y + 0.5, Filter::kNearest);
    }
    return sample(*texture, p.x(), p.y(), filter);
  }
  if (!vertex_colors.empty()) {
    const auto& t = faces[f];
    Vec3 c = bc[0] * vertex_colors[t[0]] + bc[1] * vertex_colors[t[1]] + bc[2] * vertex_colors[t[2]];
    return {static_cast<float>(c[0]), static_cast<float>(c[1]), static_cast<float>(c[2]), 1.0f};
  }
  return {0.5f, 0.5f, 0.5f, 1.0f};
}

PartMesh filter_degenerate(PartMesh mesh, double area_eps) {
  std::vector<Triangle> faces;
  std::vector<std::array<Vec2, 3>> uvs;
  for (size_t i = 0; i < mesh.faces.size(); ++i) {
    const auto& f = mesh.faces[i];
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
    Vec3 n = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
    if (0.5 * n.norm() <= area_eps) continue;
    faces.push_back(f);
    if (!mesh.face_uvs.empty()) uvs.push_back(mesh.face_uvs[i]);
  }
  mesh.faces = std::move(faces);
  if (!mesh.face_uvs.empty()) mesh.face_uvs = std::move(uvs);
  return mesh;
}

double surface_area(const std::vector<Vec3>& vertices, const std::vector<Triangle>& faces) {
  double a = 0;
  for (const auto& f : faces) {
    a += 0.5 * (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]).norm();
  }
  return a;
}

FaceFrame face_frame(CubeFace f) {
  const Vec3 X = Vec3::UnitX(), Y = Vec3::UnitY(), Z = Vec3::UnitZ();
  switch (f) {
    case CubeFace::kPosX: return {X, -Z, -Y};
    case CubeFace::kNegX: return {-X, Z, -Y};
    case CubeFace::kPosY: return {Y, X, Z};
    case CubeFace::kNegY: return {-Y, X, -Z};
    case CubeFace::kPosZ: return {Z, X, -Y};
    case CubeFace::kNegZ: return {-Z, -X, -Y};
  }
  throw std::invalid_argument("face_frame: bad face");
}

const char* face_name(CubeFace f) {
  static constexpr const char* kNames[] = {"right", "left", "top", "bottom", "front", "back"};
  return kNames[static_cast<int>(f)];
}

std::shared_ptr<const BoxMesh> template_box(int grid_n) {
  if (grid_n < 1) throw std::invalid_argument("template_box: grid_n must be >= 1");
  auto box = std::make_shared<BoxMesh>();
  box->grid_n = grid_n;
  const int n = grid_n;
  // Lattice key: coordinates scaled by 2n are integers in [-n, n].
  std::map<std::array<int, 3>, int> index;
  for (int fi = 0; fi < kNumFaces; ++fi) {
    FaceFrame fr = face_frame(static_cast<CubeFace>(fi));
    std::vector<int> ids((n + 1) * (n + 1));
    for (int j = 0; j <= n; ++j) {
      for (int i = 0; i <= n; ++i) {
        Vec3 p = 0.5 * fr.normal + (static_cast<double>(i) / n - 0.5) * fr.right +
                 (static_cast<double>(j) / n - 0.5) * fr.down;
        std::array<int, 3> key;
        for (int k = 0; k < 3; ++k) key[k] = static_cast<int>(std::lround(p[k] * 2 * n));
        auto [it, inserted] = index.emplace(key, static_cast<int>(box->vertices.size()));
        if (inserted) {
          Vec3 exact(key[0] / (2.0 * n), key[1] / (2.0 * n), key[2] / (2.0 * n));
          box->vertices.push_back(exact);
        }
        ids[j * (n + 1) + i] = it->second;
      }
    }
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        int a = ids[j * (n + 1) + i], b = ids[j * (n + 1) + i + 1];
        int c = ids[(j + 1) * (n + 1) + i + 1], d = ids[(j + 1) * (n + 1) + i];
        // Counter-clockwise seen from outside.
        box->faces.push_back({a, c, b});
        box->faces.push_back({a, d, c});
        box->face_id.push_back(fi);
        box->face_id.push_back(fi);
      }
    }
  }
  return box;
}

std::vector<std::vector<int>> vertex_neighbors(size_t num_vertices, const std::vector<Triangle>& faces) {
  std::vector<std::set<int>> sets(num_vertices);
  for (const auto& f : faces) {
    for (int k = 0; k < 3; ++k) {
      sets[f[k]].insert(f[(k + 1) % 3]);
      sets[f[k]].insert(f[(k + 2) % 3]);
    }
  }
  std::vector<std::vector<int>> out(num_vertices);
  for (size_t i = 0; i < num_vertices; ++i) out[i].assign(sets[i].begin(), sets[i].end());
  return out;
}

bool is_watertight(const std::vector<Triangle>& faces) {
  std::map<std::pair<int, int>, int> count;
  for (const auto& f : faces) {
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      ++count[{std::min(a, b), std::max(a, b)}];
    }
  }
  return std::all_of(count.begin(), count.end(), [](const auto& kv) { return kv.second == 2; });
}

std::vector<Vec3> DeformedBox::positions() const {
  std::vector<Vec3> out(box->vertices.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = box->vertices[i] + displacements[i];
  return out;
}

Aabb DeformedBox::bounds() const {
  Aabb b;
  for (const auto& p : positions()) b.expand(p);
  return b;
}

PartMesh DeformedBox::to_mesh() const {
  PartMesh m;
  m.vertices = positions();
  m.faces = box->faces;
  return m;
}

DeformedBox undeformed(std::shared_ptr<const BoxMesh> box) {
  DeformedBox db;
  db.displacements.assign(box->vertices.size(), Vec3::Zero());
  db.box = std::move(box);
  return db;
}

DeformedBox fit_deformed_box(const PartMesh& part, std::shared_ptr<const BoxMesh> box,
                             const FitParams& params, std::vector<DeformedBox>* trace) {
  if (part.empty() || part.vertices.empty()) throw Error("fit_deformed_box: empty part");
  if (params.iters < 0) throw std::invalid_argument("fit_deformed_box: iters must be >= 0");
  const Aabb bb = part.bounds();
  const Vec3 center = bb.center(), ext = bb.extent();
  const size_t nv = box->vertices.size();

  // Initial placement: template stretched onto the part's bounding box.
  std::vector<Vec3> base(nv);
  for (size_t i = 0; i < nv; ++i) base[i] = center + box->vertices[i].cwiseProduct(ext);
  std::vector<Vec3> disp(nv, Vec3::Zero());  // offsets from `base`

  auto emit = [&]() {
    DeformedBox db;
    db.box = box;
    db.displacements.resize(nv);
    for (size_t i = 0; i < nv; ++i) db.displacements[i] = base[i] + disp[i] - box->vertices[i];
    return db;
  };
  if (trace) trace->push_back(emit());
  if (params.iters == 0) return emit();

  TriangleBvh bvh(part.vertices, part.faces);
  const auto nbrs = vertex_neighbors(nv, box->faces);
  std::vector<Vec3> next(nv);
  for (int it = 0; it < params.iters; ++it) {
    for (size_t i = 0; i < nv; ++i) {
      Vec3 p = base[i] + disp[i];
      ClosestHit h = bvh.closest_point(p);
      disp[i] += params.step * (h.point - p);
    }
    // Smooth the displacement field, not the positions: an exact target is
    // then a fixed point of the iteration.
    for (size_t i = 0; i < nv; ++i) {
      Vec3 avg = Vec3::Zero();
      for (int j : nbrs[i]) avg += disp[j];
      avg /= static_cast<double>(nbrs[i].size());
      next[i] = disp[i] + params.smooth * (avg - disp[i]);
    }
    disp.swap(next);
    if (trace) trace->push_back(emit());
  }
  return emit();
}

namespace {

double template_radius(const BoxMesh& box) {
  double r = 0;
  for (const auto& v : box.vertices) r = std::max(r, v.norm());
  return r;
}

}  // namespace

GeometryVector geometry_vector(const DeformedBox& db) {
  const auto pos = db.positions();
  Vec3 c = Vec3::Zero();
  for (const auto& p : pos) c += p;
  c /= static_cast<double>(pos.size());
  double r = 0;
  for (const auto& p : pos) r = std::max(r, (p - c).norm());
  const double r0 = template_radius(*db.box);
  GeometryVector gv;
  gv.norm_center = c;
  gv.norm_scale = r > 0 ? r / r0 : 1.0;
  gv.values.resize(3 * pos.size());
  for (size_t i = 0; i < pos.size(); ++i) {
    Vec3 q = (pos[i] - c) / gv.norm_scale - db.box->vertices[i];
    for (int k = 0; k < 3; ++k) gv.values[3 * i + k] = q[k];
  }
  return gv;
}

DeformedBox apply_geometry_vector(const GeometryVector& gv, std::shared_ptr<const BoxMesh> box) {
  const size_t nv = box->vertices.size();
  if (gv.values.size() != 3 * nv) {
    throw std::invalid_argument("apply_geometry_vector: expected " + std::to_string(3 * nv) +
                                " values, got " + std::to_string(gv.values.size()));
  }
  DeformedBox db;
  db.displacements.resize(nv);
  for (size_t i = 0; i < nv; ++i) {
    Vec3 q(gv.values[3 * i], gv.values[3 * i + 1], gv.values[3 * i + 2]);
    Vec3 p = (box->vertices[i] + q) * gv.norm_scale + gv.norm_center;
    db.displacements[i] = p - box->vertices[i];
  }
  db.box = std::move(box);
  return db;
}

DeformedBox place_in_bounds(const std::vector<double>& values, std::shared_ptr<const BoxMesh> box,
                            const Aabb& target) {
  GeometryVector gv;
  gv.values = values;
  DeformedBox db = apply_geometry_vector(gv, box);
  const Aabb src = db.bounds();
  const Vec3 se = src.extent(), te = target.extent();
  for (size_t i = 0; i < db.displacements.size(); ++i) {
    Vec3 p = box->vertices[i] + db.displacements[i];
    Vec3 q;
    for (int k = 0; k < 3; ++k) {
      double s = se[k] > 1e-12 ? te[k] / se[k] : 0.0;
      q[k] = target.center()[k] + (p[k] - src.center()[k]) * s;
    }
    db.displacements[i] = q - box->vertices[i];
  }
  return db;
}

}  // namespace partex::geom
