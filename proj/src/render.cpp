#include "partex/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

namespace partex::render {

void Camera::validate() const {
  if ((eye - target).norm() == 0.0) throw std::invalid_argument("camera: eye equals target");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw std::invalid_argument("camera: FOV outside (0, 180)");
  if (width < 1 || height < 1) throw std::invalid_argument("camera: empty image");
  if ((target - eye).normalized().cross(up).norm() < 1e-12) {
    throw std::invalid_argument("camera: up is parallel to the view direction");
  }
}

Vec3 Camera::ray_dir(double x, double y) const {
  const Vec3 f = (target - eye).normalized();
  const Vec3 r = f.cross(up).normalized();
  const Vec3 u = r.cross(f);
  const double t = std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
  const double aspect = static_cast<double>(width) / height;
  const double sx = (2.0 * x / width - 1.0) * t * aspect;
  const double sy = (1.0 - 2.0 * y / height) * t;
  return (f + sx * r + sy * u).normalized();
}

std::vector<Camera> default_viewpoints(const Aabb& bounds, int size) {
  if (bounds.empty() || bounds.diagonal() <= 0.0) throw Error("default_viewpoints: degenerate bounding box");
  const Vec3 c = bounds.center();
  const double radius = 2.5 * bounds.diagonal();
  const double el = 20.0 * std::numbers::pi / 180.0;
  std::vector<Camera> cams;
  for (int i = 0; i < 12; ++i) {
    const double az = (30.0 * i) * std::numbers::pi / 180.0;
    Camera cam;
    cam.eye = c + radius * Vec3(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
    cam.target = c;
    cam.up = Vec3::UnitY();
    cam.fov_deg = 40.0;
    cam.width = cam.height = size;
    cams.push_back(cam);
  }
  return cams;
}

void Scene::add(const TexturedPart& part, const atlas::AtlasLayout& layout) {
  if (built_) throw Error("scene: already built");
  if (part.atlas.pixels.empty()) throw Error("scene: part has no atlas");
  if (!part.box.box) throw Error("scene: part has no box");
  if (part.atlas.l != layout.l || part.atlas.pixels.width != layout.width() ||
      part.atlas.pixels.height != layout.height() || part.box.box->grid_n != layout.grid_n) {
    throw Error("scene: atlas does not match the layout");
  }
  const int first = static_cast<int>(faces_.size());
  const int base = static_cast<int>(vertices_.size());
  for (const Vec3& p : part.box.positions()) vertices_.push_back(p);
  const auto& tmpl = *part.box.box;
  for (const auto& f : tmpl.faces) faces_.push_back({f[0] + base, f[1] + base, f[2] + base});
  face_part_.resize(faces_.size(), static_cast<int>(parts_.size()));
  auto img = std::make_shared<const Image>(part.atlas.pixels);
  auto box = part.box.box;
  std::vector<atlas::Rect> rects;
  for (int id : tmpl.face_id) rects.push_back(layout.face_rects[id]);
  auto uvs = layout.tri_uvs;
  parts_.push_back({first, [img, rects, uvs](int f, const Vec3& bc) -> Rgba {
                      const auto& t = uvs[f];
                      const Vec2 uv = bc[0] * t[0] + bc[1] * t[1] + bc[2] * t[2];
                      const auto& r = rects[f];
                      const int x = std::clamp(static_cast<int>(std::floor(uv.x())), r.x0, r.x0 + r.size - 1);
                      const int y = std::clamp(static_cast<int>(std::floor(uv.y())), r.y0, r.y0 + r.size - 1);
                      const float* p = img->px(x, y);
                      return {p[0], p[1], p[2], p[3]};
                    }});
}

void Scene::add(const geom::PartMesh& mesh) {
  if (built_) throw Error("scene: already built");
  mesh.validate();
  const int first = static_cast<int>(faces_.size());
  const int base = static_cast<int>(vertices_.size());
  vertices_.insert(vertices_.end(), mesh.vertices.begin(), mesh.vertices.end());
  for (const auto& f : mesh.faces) faces_.push_back({f[0] + base, f[1] + base, f[2] + base});
  face_part_.resize(faces_.size(), static_cast<int>(parts_.size()));
  auto m = std::make_shared<const geom::PartMesh>(mesh);
  parts_.push_back({first, [m](int f, const Vec3& bc) { return m->color_at(f, bc, Filter::kNearest); }});
}

void Scene::build() {
  if (built_) return;
  bvh_ = geom::TriangleBvh(vertices_, faces_);
  built_ = true;
}

Aabb Scene::bounds() const {
  Aabb b;
  for (const auto& v : vertices_) b.expand(v);
  return b;
}

Rgba Scene::lookup(int face, const Vec3& bary) const {
  const Part& p = parts_[face_part_[face]];
  return p.lookup(face - p.first_face, bary);
}

std::optional<Scene::Hit> Scene::trace(const Vec3& origin, const Vec3& dir, double alpha_threshold) const {
  Hit hit;
  double t = 0.0;
  int face = -1;
  // next_hit returns each intersection once in (t, face) order, so the loop
  // ends after at most one lookup per intersection.
  while (auto h = bvh_.next_hit(origin, dir, t, face)) {
    ++hit.lookups;
    Rgba c = lookup(h->face, h->bary);
    if (c[3] >= alpha_threshold) {
      hit.ray = *h;
      hit.color = c;
      return hit;
    }
    t = h->t;
    face = h->face;
  }
  return std::nullopt;
}

Scene make_scene(const std::vector<TexturedPart>& parts, const atlas::AtlasLayout& layout) {
  Scene s;
  for (const auto& p : parts) s.add(p, layout);
  s.build();
  return s;
}

Image render(const Scene& scene, const Camera& cam, const RenderSettings& settings) {
  if (!scene.built()) throw Error("render: scene not built");
  cam.validate();
  if (!(settings.alpha_threshold > 0.0 && settings.alpha_threshold < 1.0)) {
    throw std::invalid_argument("render: alpha threshold outside (0, 1)");
  }
  Image img(cam.width, cam.height, 3);
  const auto& verts = scene.bvh().vertices();
  const auto& faces = scene.bvh().faces();
  const Vec3 light = settings.light_dir.normalized();
  auto row = [&](int y) {
    for (int x = 0; x < cam.width; ++x) {
      float* px = img.px(x, y);
      const Vec3 dir = cam.ray_dir(x + 0.5, y + 0.5);
      auto hit = scene.trace(cam.eye, dir, settings.alpha_threshold);
      if (!hit) {
        for (int c = 0; c < 3; ++c) px[c] = static_cast<float>(settings.background[c]);
        continue;
      }
      const auto& f = faces[hit->ray.face];
      const Vec3 n = (verts[f[1]] - verts[f[0]]).cross(verts[f[2]] - verts[f[0]]).normalized();
      const double shade = settings.ambient + (1.0 - settings.ambient) * std::abs(n.dot(light));
      for (int c = 0; c < 3; ++c) px[c] = static_cast<float>(std::clamp(hit->color[c] * shade, 0.0, 1.0));
    }
  };
  const int threads = settings.threads > 0 ? settings.threads
                                           : static_cast<int>(std::max(1u, std::min(std::thread::hardware_concurrency(), 16u)));
  if (threads == 1) {
    for (int y = 0; y < cam.height; ++y) row(y);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (int y = t; y < cam.height; y += threads) row(y);
      });
    for (auto& th : pool) th.join();
  }
  return img;
}

double ssim(const Image& a, const Image& b) {
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw Error("ssim: image dimensions differ");
  }
  if (a.width < kWin || a.height < kWin) throw Error("ssim: images smaller than the 11x11 window");
  double w[kWin], wsum = 0;
  for (int i = 0; i < kWin; ++i) wsum += w[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (kSigma * kSigma));
  for (double& v : w) v /= wsum;
  const int ow = a.width - kWin + 1, oh = a.height - kWin + 1, ch = a.channels;
  // Separable Gaussian moments: horizontal pass then vertical pass.
  auto blur = [&](const std::vector<double>& src) {
    std::vector<double> h(static_cast<size_t>(ow) * a.height), out(static_cast<size_t>(ow) * oh);
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0;
        for (int i = 0; i < kWin; ++i) s += w[i] * src[static_cast<size_t>(y) * a.width + x + i];
        h[static_cast<size_t>(y) * ow + x] = s;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0;
        for (int i = 0; i < kWin; ++i) s += w[i] * h[static_cast<size_t>(y + i) * ow + x];
        out[static_cast<size_t>(y) * ow + x] = s;
      }
    return out;
  };
  const size_t n = static_cast<size_t>(a.width) * a.height;
  std::vector<double> acc(static_cast<size_t>(ow) * oh, 0.0);
  for (int c = 0; c < ch; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (size_t i = 0; i < n; ++i) {
      x[i] = a.data[i * ch + c];
      y[i] = b.data[i * ch + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = blur(x), my = blur(y), sxx = blur(xx), syy = blur(yy), sxy = blur(xy);
    for (size_t i = 0; i < acc.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      acc[i] += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
  }
  double total = 0;
  for (double v : acc) total += v / ch;
  return total / acc.size();
}

double multiview_ssim(const Scene& a, const Scene& b, const std::vector<Camera>& cams, const RenderSettings& settings) {
  if (cams.empty()) throw Error("multiview_ssim: no cameras");
  double s = 0;
  for (const auto& cam : cams) s += ssim(render(a, cam, settings), render(b, cam, settings));
  return s / cams.size();
}

double seam_consistency(const atlas::AtlasImage& img, const atlas::AtlasLayout& layout) {
  if (img.pixels.width != layout.width() || img.pixels.height != layout.height()) {
    throw Error("seam_consistency: atlas does not match the layout");
  }
  const auto pairs = atlas::seam_texel_pairs(layout);
  double s = 0;
  for (const auto& p : pairs) {
    const float* a = img.pixels.px(p.texel_a[0], p.texel_a[1]);
    const float* b = img.pixels.px(p.texel_b[0], p.texel_b[1]);
    for (int c = 0; c < 3; ++c) s += std::abs(double(a[c]) - b[c]);
  }
  return s / (3.0 * pairs.size());
}

std::optional<Vec3> mean_color(const atlas::AtlasImage& img, const atlas::AtlasLayout& layout) {
  if (img.pixels.width != layout.width() || img.pixels.height != layout.height()) {
    throw Error("mean_color: atlas does not match the layout");
  }
  Vec3 s = Vec3::Zero();
  long count = 0;
  for (int y = 0; y < layout.height(); ++y)
    for (int x = 0; x < layout.width(); ++x) {
      const float* p = img.pixels.px(x, y);
      if (!layout.used(x, y) || p[3] < 0.5f) continue;
      s += Vec3(p[0], p[1], p[2]);
      ++count;
    }
  if (count == 0) return std::nullopt;
  return s / static_cast<double>(count);
}

double compatibility_score(const std::vector<atlas::AtlasImage>& parts, const atlas::AtlasLayout& layout) {
  std::vector<Vec3> means;
  for (const auto& p : parts)
    if (auto m = mean_color(p, layout)) means.push_back(*m);
  if (means.size() < 2) return 0.0;
  double s = 0;
  int pairs = 0;
  for (size_t i = 0; i < means.size(); ++i)
    for (size_t j = i + 1; j < means.size(); ++j, ++pairs) s += (means[i] - means[j]).norm();
  return s / pairs;
}

}  // namespace partex::render
