#include <cmath>
#include <numbers>

#include "doctest.h"
#include "partex/bake.hpp"
#include "partex/render.hpp"
#include "support/fixtures.hpp"

using namespace partex;
using namespace partex::render;

namespace {

atlas::AtlasImage filled_atlas(int l, std::function<Rgba(geom::CubeFace, int, int)> f) {
  auto lay = atlas::build_layout(l, 4);
  atlas::AtlasImage img = atlas::blank_atlas(l);
  for (int k = 0; k < geom::kNumFaces; ++k) {
    const auto& r = lay.face_rects[k];
    for (int y = 0; y < l; ++y)
      for (int x = 0; x < l; ++x) {
        Rgba c = f(static_cast<geom::CubeFace>(k), x, y);
        std::copy(c.begin(), c.end(), img.pixels.px(r.x0 + x, r.y0 + y));
      }
  }
  return img;
}

Camera front_camera(int size) {
  Camera cam;
  cam.eye = Vec3(0, 0, 3);
  cam.width = cam.height = size;
  return cam;
}

}  // namespace

TEST_CASE("default rig: 12 equidistant cameras 30 degrees apart") {
  Aabb b;
  b.expand(Vec3(-1, 0, 2));
  b.expand(Vec3(1, 3, 2.5));
  auto cams = default_viewpoints(b);
  REQUIRE(cams.size() == 12);
  const double r = 2.5 * b.diagonal();
  for (size_t i = 0; i < cams.size(); ++i) {
    CHECK(std::abs((cams[i].eye - b.center()).norm() - r) < 1e-9);
    CHECK(cams[i].target == b.center());
    CHECK(cams[i].fov_deg == 40.0);
    CHECK(cams[i].width == 256);
    const Vec3 d = cams[i].eye - b.center();
    CHECK(std::asin(d.y() / r) * 180 / std::numbers::pi == doctest::Approx(20.0).epsilon(1e-12));
    const double az = std::atan2(d.x(), d.z()) * 180 / std::numbers::pi;
    double expected = 30.0 * i;
    if (expected > 180) expected -= 360;
    CHECK(std::abs(az - expected) < 1e-9);
    CHECK_NOTHROW(cams[i].validate());
  }
  CHECK_THROWS_AS(default_viewpoints(Aabb{}), Error);
  Aabb point;
  point.expand(Vec3(1, 1, 1));
  CHECK_THROWS_AS(default_viewpoints(point), Error);
}

TEST_CASE("camera validation") {
  Camera c;
  c.target = c.eye;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.fov_deg = 180;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.up = Vec3(0, 0, 1);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  CHECK((c.ray_dir(128, 128) - Vec3(0, 0, -1)).norm() < 1e-12);
}

TEST_CASE("fully transparent box renders as background") {
  auto lay = atlas::build_layout(16, 4);
  TexturedPart part{geom::undeformed(lay.box), atlas::blank_atlas(16)};
  Scene s = make_scene({part}, lay);
  RenderSettings set;
  set.background = Vec3(0.25, 0.5, 0.75);
  Image img = render::render(s, front_camera(32), set);
  for (int i = 0; i < 32 * 32; ++i) {
    CHECK(img.data[3 * i] == 0.25f);
    CHECK(img.data[3 * i + 1] == 0.5f);
    CHECK(img.data[3 * i + 2] == 0.75f);
  }
  CHECK_FALSE(s.trace(Vec3(0, 0, 3), Vec3(0, 0, -1), 0.5).has_value());
}

TEST_CASE("opaque red front face shades to the Lambert value") {
  auto lay = atlas::build_layout(16, 4);
  auto img = filled_atlas(16, [](geom::CubeFace f, int, int) {
    return f == geom::CubeFace::kPosZ ? Rgba{1, 0, 0, 1} : Rgba{0, 1, 0, 1};
  });
  Scene s = make_scene({{geom::undeformed(lay.box), img}}, lay);
  Image out = render::render(s, front_camera(33));
  const float* c = out.px(16, 16);
  const double shade = 0.2 + 0.8 / std::sqrt(3.0);
  CHECK(c[0] == doctest::Approx(shade).epsilon(1e-6));
  CHECK(c[1] == 0.0f);
  CHECK(c[2] == 0.0f);
  auto hit = s.trace(Vec3(0, 0, 3), Vec3(0, 0, -1), 0.5);
  REQUIRE(hit);
  CHECK(hit->ray.t == doctest::Approx(2.5));
  CHECK(hit->lookups == 1);
  CHECK(render::render(s, front_camera(33)) == out);
}

TEST_CASE("checkerboard alpha shows background through the alpha-0 cells") {
  const int l = 64, cells = 8, size = 160;
  auto lay = atlas::build_layout(l, 4);
  auto img = filled_atlas(l, [&](geom::CubeFace f, int x, int y) {
    if (f != geom::CubeFace::kPosZ) return Rgba{0, 0, 0, 0};
    const int k = (x / (l / cells) + y / (l / cells)) % 2;
    return Rgba{1, 0, 0, static_cast<float>(k)};
  });
  Scene s = make_scene({{geom::undeformed(lay.box), img}}, lay);
  Camera cam = front_camera(size);
  RenderSettings set;
  set.background = Vec3(0, 0, 1);
  Image out = render::render(s, cam, set);

  // Oracle: intersect each pixel ray with the plane z = 0.5 and classify by
  // the cell in face coordinates (right = +x, down = -y).
  std::vector<int> expect(size * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Vec3 d = cam.ray_dir(x + 0.5, y + 0.5);
      const Vec3 p = cam.eye + d * ((0.5 - cam.eye.z()) / d.z());
      int e = 0;
      if (std::abs(p.x()) < 0.5 && std::abs(p.y()) < 0.5) {
        const int cu = static_cast<int>(std::floor((p.x() + 0.5) * cells));
        const int cv = static_cast<int>(std::floor((0.5 - p.y()) * cells));
        e = (cu + cv) % 2;
      }
      expect[y * size + x] = e;
    }
  int mismatches = 0, unexplained = 0, opaque = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float* c = out.px(x, y);
      const int got = c[2] == 1.0f && c[0] == 0.0f ? 0 : 1;
      opaque += got;
      if (got == expect[y * size + x]) continue;
      ++mismatches;
      bool boundary = false;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx >= 0 && yy >= 0 && xx < size && yy < size) boundary |= expect[yy * size + xx] != expect[y * size + x];
        }
      unexplained += !boundary;
    }
  CHECK(unexplained == 0);
  CHECK(opaque > 0);
  MESSAGE("boundary mismatches: " << mismatches);
}

TEST_CASE("ray continuation visits each intersection once") {
  auto lay = atlas::build_layout(16, 4);
  geom::DeformedBox a = geom::undeformed(lay.box), b = a;
  for (auto& d : b.displacements) d = Vec3(0, 0, -2);
  auto clear = atlas::blank_atlas(16);
  auto solid = filled_atlas(16, [](geom::CubeFace, int, int) { return Rgba{0, 1, 0, 1}; });
  Scene s = make_scene({{a, clear}, {b, solid}}, lay);
  auto hit = s.trace(Vec3(0.1, 0.2, 3), Vec3(0, 0, -1), 0.5);
  REQUIRE(hit);
  CHECK(hit->lookups == 3);  // front and back of the clear box, then the solid front
  CHECK(hit->ray.t == doctest::Approx(4.5));
}

TEST_CASE("scene contracts") {
  auto lay = atlas::build_layout(16, 4);
  Scene s;
  CHECK_THROWS_AS(s.add(TexturedPart{geom::undeformed(lay.box), {}}, lay), Error);
  CHECK_THROWS_AS(s.add(TexturedPart{geom::undeformed(lay.box), atlas::blank_atlas(32)}, lay), Error);
  Scene un;
  un.add(fixtures::cube(1));
  CHECK_THROWS_AS(render::render(un, front_camera(16)), Error);
}

TEST_CASE("ssim identities") {
  Rng rng(3);
  std::uniform_real_distribution<float> u(0, 1);
  Image a(40, 30, 3), b(40, 30, 3), bin(40, 30, 3), inv(40, 30, 3);
  for (auto& v : a.data) v = u(rng);
  for (auto& v : b.data) v = u(rng);
  for (size_t i = 0; i < bin.data.size(); ++i) {
    bin.data[i] = ((i / 3) % 7 < 3) ? 1.0f : 0.0f;
    inv.data[i] = 1.0f - bin.data[i];
  }
  CHECK(ssim(a, a) == 1.0);
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-9);
  CHECK(ssim(a, b) < 0.2);
  CHECK(ssim(bin, inv) < 0.2);
  CHECK_THROWS_AS(ssim(a, Image(40, 31, 3)), Error);
  CHECK_THROWS_AS(ssim(Image(10, 10, 3), Image(10, 10, 3)), Error);
}

TEST_CASE("seam consistency and compatibility scores") {
  auto lay = atlas::build_layout(16, 4);
  auto gray = filled_atlas(16, [](geom::CubeFace, int, int) { return Rgba{0.5, 0.5, 0.5, 1}; });
  CHECK(seam_consistency(gray, lay) == 0.0);
  auto red = filled_atlas(16, [](geom::CubeFace, int, int) { return Rgba{1, 0, 0, 1}; });
  auto blue = filled_atlas(16, [](geom::CubeFace, int, int) { return Rgba{0, 0, 1, 1}; });
  CHECK(compatibility_score({red, red, red}, lay) == 0.0);
  CHECK(compatibility_score({red, blue}, lay) == doctest::Approx(std::sqrt(2.0)));
  // Pairs (r,b), (r,b), (b,b): (2 sqrt 2) / 3.
  CHECK(compatibility_score({red, blue, blue}, lay) == doctest::Approx(2 * std::sqrt(2.0) / 3));
  CHECK(compatibility_score({red, atlas::blank_atlas(16)}, lay) == 0.0);
  // Top face white, rest black: each top-face seam pair differs by 1 in RGB.
  auto split = filled_atlas(16, [](geom::CubeFace f, int, int) {
    return f == geom::CubeFace::kPosY ? Rgba{1, 1, 1, 1} : Rgba{0, 0, 0, 1};
  });
  int top_pairs = 0;
  for (const auto& sp : lay.seam_pairs) top_pairs += sp.face_a == geom::CubeFace::kPosY || sp.face_b == geom::CubeFace::kPosY;
  CHECK(seam_consistency(split, lay) == doctest::Approx(static_cast<double>(top_pairs) / lay.seam_pairs.size()));
}

TEST_CASE("baked cube renders close to its source") {
  auto color = [](const Vec3& p) {
    return Vec3(0.5 + 0.4 * std::sin(3 * p.x()), 0.5 + 0.4 * std::cos(2 * p.y()), 0.5 + 0.4 * std::sin(4 * p.z()));
  };
  auto src = fixtures::cube(16, color);
  auto lay = atlas::build_layout(64, 4);
  auto box = geom::fit_deformed_box(src, lay.box);
  TexturedPart baked{box, bake::bake_part(src, box, lay)};
  Scene a;
  a.add(src);
  a.build();
  Scene b = make_scene({baked}, lay);
  auto cams = default_viewpoints(src.bounds(), 96);
  std::vector<Camera> three = {cams[0], cams[4], cams[7]};
  CHECK(multiview_ssim(a, b, three) >= 0.9);
  CHECK(multiview_ssim(a, a, three) == 1.0);
}
