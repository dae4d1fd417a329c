#include <fstream>

#include "doctest.h"
#include "partex/bvh.hpp"
#include "partex/geom.hpp"
#include "partex/shape.hpp"
#include "support/fixtures.hpp"

using namespace partex;
using namespace partex::geom;

TEST_CASE("template_box counts follow the closed forms") {
  for (int n = 1; n <= 8; ++n) {
    auto box = template_box(n);
    CHECK(static_cast<int>(box->vertices.size()) == BoxMesh::vertex_count(n));
    CHECK(static_cast<int>(box->faces.size()) == 12 * n * n);
    CHECK(box->face_id.size() == box->faces.size());
    std::array<int, kNumFaces> per_face{};
    for (int f : box->face_id) per_face.at(f)++;
    for (int c : per_face) CHECK(c == 2 * n * n);
    CHECK(surface_area(box->vertices, box->faces) == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(std::abs(surface_area(box->vertices, box->faces) - 6.0) < 1e-9);
    CHECK(is_watertight(box->faces));
    for (const auto& v : box->vertices) CHECK(v.cwiseAbs().maxCoeff() == doctest::Approx(0.5));
  }
}

TEST_CASE("template_box small cases") {
  auto b1 = template_box(1);
  CHECK(b1->vertices.size() == 8);
  CHECK(b1->faces.size() == 12);
  CHECK(template_box(4)->faces.size() == 192);
  CHECK_THROWS_AS(template_box(0), std::invalid_argument);
}

TEST_CASE("template_box triangles face outward") {
  auto box = template_box(3);
  for (size_t t = 0; t < box->faces.size(); ++t) {
    const auto& f = box->faces[t];
    Vec3 a = box->vertices[f[0]], b = box->vertices[f[1]], c = box->vertices[f[2]];
    Vec3 n = (b - a).cross(c - a);
    CHECK(n.dot(face_frame(static_cast<CubeFace>(box->face_id[t])).normal) > 0);
  }
}

TEST_CASE("template_box is deterministic") {
  auto a = template_box(5), b = template_box(5);
  CHECK(a->vertices == b->vertices);
  CHECK(a->faces == b->faces);
}

TEST_CASE("fit on an exact cube converges onto the surface") {
  PartMesh cube = fixtures::cube(1);
  auto box = template_box(4);
  DeformedBox db = fit_deformed_box(cube, box, {10, 0.5, 0.3});
  double worst = 0;
  for (const auto& p : db.positions()) worst = std::max(worst, fixtures::point_triangle_distance_brute(cube, p));
  CHECK(worst < 1e-3);
  CHECK(db.box->faces == box->faces);
  CHECK(is_watertight(db.to_mesh().faces));
}

TEST_CASE("fit with zero iterations matches the part bbox") {
  PartMesh s = fixtures::uv_sphere(0.7, 12, 16, Vec3(0.3, -1.0, 2.0));
  for (auto& v : s.vertices) v.x() *= 1.8;
  DeformedBox db = fit_deformed_box(s, template_box(4), {0, 0.5, 0.3});
  Aabb a = db.bounds(), b = s.bounds();
  CHECK((a.lo - b.lo).norm() < 1e-6);
  CHECK((a.hi - b.hi).norm() < 1e-6);
}

TEST_CASE("fit to a sphere reduces the one-sided Hausdorff distance every iteration") {
  PartMesh s = fixtures::uv_sphere(0.5, 24, 32);
  std::vector<DeformedBox> trace;
  DeformedBox db = fit_deformed_box(s, template_box(6), {20, 0.5, 0.3}, &trace);
  REQUIRE(trace.size() == 21);
  TriangleBvh bvh(s.vertices, s.faces);
  double prev = INFINITY;
  for (const auto& step : trace) {
    double h = 0;
    for (const auto& p : step.positions()) h = std::max(h, bvh.closest_point(p).distance);
    CHECK(h < prev);
    prev = h;
  }
  CHECK(is_watertight(db.to_mesh().faces));
}

TEST_CASE("fit rejects an empty part") {
  CHECK_THROWS_AS(fit_deformed_box(PartMesh{}, template_box(2)), Error);
}

TEST_CASE("geometry_vector of the template is zero") {
  auto box = template_box(4);
  GeometryVector gv = geometry_vector(undeformed(box));
  CHECK(gv.values.size() == 3 * box->vertices.size());
  for (double v : gv.values) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("geometry_vector round trip and scale invariance") {
  auto box = template_box(3);
  Rng rng(7);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (int trial = 0; trial < 20; ++trial) {
    DeformedBox db = undeformed(box);
    for (auto& d : db.displacements) d = Vec3(u(rng), u(rng), u(rng)) + Vec3(1.0, -2.0, 0.5);
    GeometryVector gv = geometry_vector(db);
    for (double v : gv.values) CHECK(std::isfinite(v));
    DeformedBox back = apply_geometry_vector(gv, box);
    auto p0 = db.positions(), p1 = back.positions();
    for (size_t i = 0; i < p0.size(); ++i) CHECK((p0[i] - p1[i]).norm() < 1e-6);
    GeometryVector gv2 = geometry_vector(back);
    for (size_t i = 0; i < gv.values.size(); ++i) CHECK(std::abs(gv.values[i] - gv2.values[i]) < 1e-6);

    DeformedBox scaled = db;
    for (size_t i = 0; i < p0.size(); ++i) scaled.displacements[i] = 2.0 * p0[i] - box->vertices[i];
    GeometryVector gs = geometry_vector(scaled);
    for (size_t i = 0; i < gv.values.size(); ++i) CHECK(std::abs(gv.values[i] - gs.values[i]) < 1e-9);
  }
}

TEST_CASE("apply_geometry_vector rejects a wrong length") {
  GeometryVector gv;
  gv.values.assign(5, 0.0);
  CHECK_THROWS_AS(apply_geometry_vector(gv, template_box(2)), std::invalid_argument);
}

TEST_CASE("place_in_bounds fills the target box") {
  auto box = template_box(2);
  Aabb target;
  target.expand(Vec3(-1, 0, 2));
  target.expand(Vec3(3, 0.5, 2.25));
  DeformedBox db = place_in_bounds(std::vector<double>(3 * box->vertices.size(), 0.0), box, target);
  Aabb got = db.bounds();
  CHECK((got.lo - target.lo).norm() < 1e-9);
  CHECK((got.hi - target.hi).norm() < 1e-9);
}

TEST_CASE("filter_degenerate drops zero-area triangles") {
  PartMesh m = fixtures::cube(1);
  m.faces.push_back({0, 0, 1});
  m.faces.push_back({0, 1, 1});
  m = filter_degenerate(m);
  CHECK(m.faces.size() == 12);
}

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

const char* kTriangleObj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";

}  // namespace

TEST_CASE("load_shape with a single part") {
  auto dir = fixtures::temp_dir("load_single");
  write_text(dir / "seat.obj", kTriangleObj);
  write_manifest(dir / "manifest.json", "chair", {{"seat", "seat.obj"}});
  LoadedShape s = load_shape(dir / "manifest.json");
  REQUIRE(s.spec.parts.size() == 1);
  CHECK(s.spec.parts[0] == "seat");
  CHECK(s.parts[0].label == "seat");
  CHECK(s.parts[0].faces.size() == 1);
}

TEST_CASE("load_shape reports a missing mesh") {
  auto dir = fixtures::temp_dir("load_missing");
  write_manifest(dir / "manifest.json", "chair", {{"seat", "nope.obj"}});
  try {
    load_shape(dir / "manifest.json");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("mesh not found") != std::string::npos);
  }
}

TEST_CASE("load_shape orders chair parts canonically") {
  auto dir = fixtures::temp_dir("load_order");
  const std::vector<std::string> labels = {"leg_back_right", "seat", "leg_front_left", "back", "leg_back_left",
                                           "leg_front_right"};
  std::vector<ManifestPart> parts;
  for (const auto& l : labels) {
    write_text(dir / (l + ".obj"), kTriangleObj);
    parts.push_back({l, l + ".obj"});
  }
  write_manifest(dir / "manifest.json", "chair", parts);
  LoadedShape s = load_shape(dir / "manifest.json");
  const std::vector<std::string> expect = {"back", "seat", "leg_front_left", "leg_front_right", "leg_back_left",
                                           "leg_back_right"};
  CHECK(s.spec.parts == expect);
  for (size_t i = 0; i < expect.size(); ++i) CHECK(s.parts[i].label == expect[i]);
}

TEST_CASE("load_shape rejects unknown labels and non-triangulated faces") {
  auto dir = fixtures::temp_dir("load_errors");
  write_text(dir / "a.obj", kTriangleObj);
  write_manifest(dir / "unknown.json", "chair", {{"wing", "a.obj"}});
  CHECK_THROWS_WITH_AS(load_shape(dir / "unknown.json"), doctest::Contains("unknown part label"), Error);
  write_text(dir / "quad.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  write_manifest(dir / "quad.json", "chair", {{"seat", "quad.obj"}});
  CHECK_THROWS_WITH_AS(load_shape(dir / "quad.json"), doctest::Contains("non-triangulated face"), Error);
  CHECK_THROWS_WITH_AS(load_shape(dir / "absent.json"), doctest::Contains("manifest not found"), Error);
}

TEST_CASE("OBJ vertex colors survive a write/read round trip") {
  auto dir = fixtures::temp_dir("obj_colors");
  PartMesh m = fixtures::cube(2, [](const Vec3& p) { return Vec3(p.x() + 0.5, 0.25, p.z() + 0.5); });
  write_obj(dir / "c.obj", m);
  PartMesh r = read_obj(dir / "c.obj");
  REQUIRE(r.vertices.size() == m.vertices.size());
  REQUIRE(r.vertex_colors.size() == m.vertex_colors.size());
  CHECK(r.faces == m.faces);
  for (size_t i = 0; i < r.vertices.size(); ++i) {
    CHECK((r.vertices[i] - m.vertices[i]).norm() < 1e-6);
    CHECK((r.vertex_colors[i] - m.vertex_colors[i]).norm() < 1e-6);
  }
}

TEST_CASE("structure code normalizes part boxes to the shape bounds") {
  const Category& cat = category("table");
  Aabb top, leg;
  top.expand(Vec3(-1, 0.9, -1));
  top.expand(Vec3(1, 1, 1));
  leg.expand(Vec3(-1, 0, -1));
  leg.expand(Vec3(-0.9, 0.9, -0.9));
  StructureCode sc = structure_code(cat, {"tabletop", "leg_front_left"}, {top, leg});
  REQUIRE(sc.slots.size() == cat.slots.size());
  CHECK(sc.slots[0].exists == 1.0f);
  CHECK(sc.slots[0].center.y() == doctest::Approx(0.95));
  CHECK(sc.slots[0].half_extent.x() == doctest::Approx(0.5));
  int present = 0;
  for (const auto& s : sc.slots) present += s.exists > 0.5f;
  CHECK(present == 2);
  auto flat = sc.flatten();
  CHECK(flat.size() == cat.slots.size() * StructureCode::kPerSlot);
  CHECK(StructureCode::unflatten(flat, cat.slots.size()).flatten() == flat);
}
