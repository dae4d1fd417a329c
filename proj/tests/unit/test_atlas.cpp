#include <set>

#include "doctest.h"
#include "partex/atlas.hpp"
#include "partex/bake.hpp"
#include "support/fixtures.hpp"

using namespace partex;
using namespace partex::atlas;
using geom::CubeFace;

TEST_CASE("layout dimensions") {
  AtlasLayout big = build_layout(256, 8);
  CHECK(big.width() == 1024);
  CHECK(big.height() == 768);
  CHECK(big.seam_pairs.size() == 7);
  for (int l : {8, 16, 32, 64}) CHECK(build_layout(l, 4).seam_pairs.size() == 7);
}

TEST_CASE("layout argument validation") {
  CHECK_THROWS_AS(build_layout(64, 5), std::invalid_argument);
  CHECK_THROWS_AS(build_layout(4, 4), std::invalid_argument);
  CHECK_THROWS_AS(build_layout(64, 0), std::invalid_argument);
}

TEST_CASE("cross arrangement of face rectangles") {
  const int l = 32;
  AtlasLayout lay = build_layout(l, 4);
  auto at = [&](CubeFace f) { return lay.face_rects[static_cast<int>(f)]; };
  CHECK(at(CubeFace::kPosZ).x0 == 0);
  CHECK(at(CubeFace::kPosZ).y0 == l);
  CHECK(at(CubeFace::kPosX).x0 == l);
  CHECK(at(CubeFace::kNegZ).x0 == 2 * l);
  CHECK(at(CubeFace::kNegX).x0 == 3 * l);
  for (CubeFace f : {CubeFace::kPosX, CubeFace::kNegZ, CubeFace::kNegX}) CHECK(at(f).y0 == l);
  CHECK(at(CubeFace::kPosY).x0 == 0);
  CHECK(at(CubeFace::kPosY).y0 == 0);
  CHECK(at(CubeFace::kNegY).x0 == 0);
  CHECK(at(CubeFace::kNegY).y0 == 2 * l);
  for (int a = 0; a < 6; ++a)
    for (int b = a + 1; b < 6; ++b) {
      const Rect &ra = lay.face_rects[a], &rb = lay.face_rects[b];
      bool overlap = ra.x0 < rb.x0 + rb.size && rb.x0 < ra.x0 + ra.size && ra.y0 < rb.y0 + rb.size &&
                     rb.y0 < ra.y0 + ra.size;
      CHECK_FALSE(overlap);
    }
}

TEST_CASE("triangle UVs sit on the face grid inside their rectangle") {
  AtlasLayout lay = build_layout(64, 4);
  REQUIRE(lay.tri_uvs.size() == lay.box->faces.size());
  for (size_t t = 0; t < lay.tri_uvs.size(); ++t) {
    const Rect& r = lay.face_rects[lay.box->face_id[t]];
    for (const auto& uv : lay.tri_uvs[t]) {
      CHECK(r.contains(uv));
      const double gx = (uv.x() - r.x0) / 16.0, gy = (uv.y() - r.y0) / 16.0;
      CHECK(gx == std::round(gx));
      CHECK(gy == std::round(gy));
    }
  }
}

TEST_CASE("every used texel is covered exactly once") {
  for (auto [l, n] : {std::pair{16, 4}, std::pair{64, 4}, std::pair{24, 3}}) {
    AtlasLayout lay = build_layout(l, n);
    int used = 0;
    std::vector<int> per_tri(lay.tri_uvs.size(), 0);
    for (int y = 0; y < lay.height(); ++y)
      for (int x = 0; x < lay.width(); ++x) {
        bool in_rect = false;
        for (const auto& r : lay.face_rects) in_rect = in_rect || r.contains_texel(x, y);
        CHECK(lay.used(x, y) == in_rect);
        if (!lay.used(x, y)) continue;
        ++used;
        const int t = lay.triangle_at(x, y);
        per_tri[t]++;
        // The owning triangle contains the texel center (boundary inclusive).
        const auto& uv = lay.tri_uvs[t];
        Vec3 bc = barycentric(Vec2(x + 0.5, y + 0.5), uv[0], uv[1], uv[2]);
        CHECK(bc.minCoeff() >= -1e-12);
      }
    CHECK(used == 6 * l * l);
    for (int c : per_tri) CHECK(c > 0);
  }
}

TEST_CASE("layout is deterministic") {
  CHECK(build_layout(32, 4) == build_layout(32, 4));
  CHECK_FALSE(build_layout(32, 4) == build_layout(32, 2));
}

TEST_CASE("split and merge are inverse on used texels") {
  const int l = 16;
  AtlasLayout lay = build_layout(l, 4);
  AtlasImage img = blank_atlas(l);
  Rng rng(3);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : img.pixels.data) v = u(rng);
  Patches p = split_patches(img, lay);
  CHECK(p.size() == 6);
  AtlasImage back = merge_patches(p, lay);
  for (int y = 0; y < lay.height(); ++y)
    for (int x = 0; x < lay.width(); ++x)
      for (int c = 0; c < 4; ++c) {
        if (lay.used(x, y)) CHECK(back.pixels.px(x, y)[c] == img.pixels.px(x, y)[c]);
        else CHECK(back.pixels.px(x, y)[c] == 0.0f);
      }
  Patches again = split_patches(back, lay);
  for (int f = 0; f < 6; ++f) CHECK(again[f] == p[f]);
}

TEST_CASE("all-red atlas splits into six red patches") {
  AtlasLayout lay = build_layout(8, 2);
  AtlasImage img = blank_atlas(8);
  for (int i = 0; i < img.pixels.width * img.pixels.height; ++i) {
    img.pixels.data[4 * i] = 1;
    img.pixels.data[4 * i + 3] = 1;
  }
  for (const auto& p : split_patches(img, lay)) {
    for (int i = 0; i < 64; ++i) {
      CHECK(p.data[4 * i] == 1.0f);
      CHECK(p.data[4 * i + 1] == 0.0f);
    }
  }
}

TEST_CASE("split rejects wrong dimensions") {
  AtlasLayout lay = build_layout(16, 4);
  CHECK_THROWS_AS(split_patches(blank_atlas(8), lay), std::invalid_argument);
}

TEST_CASE("uv_to_surface on template vertices, gaps and face centers") {
  AtlasLayout lay = build_layout(32, 4);
  auto box = geom::undeformed(lay.box);
  Rng rng(11);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& d : box.displacements) d = Vec3(u(rng), u(rng), u(rng));
  const auto pos = box.positions();
  for (size_t t = 0; t < lay.tri_uvs.size(); t += 7) {
    for (int k = 0; k < 3; ++k) {
      auto sp = uv_to_surface(lay, box, lay.tri_uvs[t][k]);
      REQUIRE(sp.has_value());
      CHECK((sp->point - pos[lay.box->faces[t][k]]).norm() < 1e-12);
    }
  }
  CHECK_FALSE(uv_to_surface(lay, box, Vec2(80.5, 10.5)).has_value());
  CHECK_FALSE(uv_to_surface(lay, box, Vec2(100.0, 90.0)).has_value());

  auto cube = geom::undeformed(lay.box);
  auto c = uv_to_surface(lay, cube, Vec2(16.0, 48.0));  // front face center
  REQUIRE(c.has_value());
  CHECK(c->point.x() == doctest::Approx(0.0));
  CHECK(c->point.y() == doctest::Approx(0.0));
  CHECK(std::abs(c->point.z()) == doctest::Approx(0.5));
}

TEST_CASE("uv_to_surface is affine inside a triangle") {
  AtlasLayout lay = build_layout(32, 2);
  auto box = geom::undeformed(lay.box);
  Rng rng(5);
  std::uniform_real_distribution<double> u(-0.2, 0.2), w(0.05, 0.3);
  for (auto& d : box.displacements) d = Vec3(u(rng), u(rng), u(rng));
  for (size_t t = 0; t < lay.tri_uvs.size(); ++t) {
    const auto& uv = lay.tri_uvs[t];
    Vec2 c = (uv[0] + uv[1] + uv[2]) / 3.0;
    Vec2 dir = (uv[1] - uv[0]) * 0.05;
    std::array<Vec3, 3> pts;
    for (int k = 0; k < 3; ++k) {
      auto sp = uv_to_surface(lay, box, c + (k - 1.0) * dir);
      REQUIRE(sp.has_value());
      pts[k] = sp->point;
    }
    CHECK((pts[1] - pts[0]).cross(pts[2] - pts[0]).norm() < 1e-9);
  }
}

TEST_CASE("seam pairs describe shared box edges") {
  const int l = 16;
  AtlasLayout lay = build_layout(l, 4);
  std::set<std::pair<int, int>> faces;
  for (const auto& sp : lay.seam_pairs) {
    CHECK((sp.side_a.end - sp.side_a.start).norm() == doctest::Approx(l));
    CHECK((sp.side_b.end - sp.side_b.start).norm() == doctest::Approx(l));
    faces.insert({static_cast<int>(sp.face_a), static_cast<int>(sp.face_b)});
  }
  CHECK(faces.size() == 7);
  auto pairs = seam_texel_pairs(lay);
  CHECK(pairs.size() == 7u * l);
  auto cube = geom::undeformed(lay.box);
  for (const auto& p : pairs) {
    auto a = uv_to_surface(lay, cube, p.uv_a), b = uv_to_surface(lay, cube, p.uv_b);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK((a->point - b->point).norm() < 1e-6);
    CHECK(lay.used(p.texel_a[0], p.texel_a[1]));
    CHECK(lay.used(p.texel_b[0], p.texel_b[1]));
  }
}

TEST_CASE("baked atlas is consistent across seams") {
  const int l = 32;
  AtlasLayout lay = build_layout(l, 4);
  auto color = [](const Vec3& p) {
    return Vec3(0.5 + 0.4 * std::sin(3 * p.x()), 0.5 + 0.4 * std::cos(2 * p.y()), 0.5 + 0.3 * p.z());
  };
  geom::PartMesh part = fixtures::cube(16, color);
  auto img = bake::bake_part(part, geom::undeformed(lay.box), lay);
  double diff = 0;
  auto pairs = seam_texel_pairs(lay);
  for (const auto& p : pairs) {
    const float* a = img.pixels.px(p.texel_a[0], p.texel_a[1]);
    const float* b = img.pixels.px(p.texel_b[0], p.texel_b[1]);
    CHECK(a[3] == 1.0f);
    CHECK(b[3] == 1.0f);
    for (int c = 0; c < 3; ++c) diff += std::abs(a[c] - b[c]);
  }
  CHECK(diff / (3.0 * pairs.size()) < 2.0 / 255.0);
}
