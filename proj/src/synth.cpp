#include "partex/synth.hpp"

#include "partex/shape.hpp"

namespace partex::synth {

namespace fs = std::filesystem;

const std::array<Vec3, 4> kPalette = {Vec3(0.85, 0.15, 0.15), Vec3(0.15, 0.75, 0.2), Vec3(0.15, 0.25, 0.85),
                                      Vec3(0.9, 0.8, 0.15)};

int classify_color(const Vec3& rgb) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(kPalette.size()); ++k)
    if ((rgb - kPalette[k]).squaredNorm() < (rgb - kPalette[best]).squaredNorm()) best = k;
  return best;
}

namespace {

geom::PartMesh box_part(int grid, const Vec3& center, const Vec3& size, const Vec3& color, const std::string& label) {
  geom::PartMesh m = geom::undeformed(geom::template_box(grid)).to_mesh();
  for (auto& v : m.vertices) v = center + v.cwiseProduct(size);
  m.vertex_colors.assign(m.vertices.size(), color);
  m.label = label;
  return m;
}

}  // namespace

std::vector<ToyShape> toy_chairs(const ToyOptions& opt) {
  if (opt.count < 1) throw std::invalid_argument("toy_chairs: count must be positive");
  constexpr double kThickness[4] = {0.05, 0.11, 0.17, 0.23};
  constexpr double kSeatBottom = 0.42;
  Rng rng(opt.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<ToyShape> out;
  for (int i = 0; i < opt.count; ++i) {
    ToyShape s;
    s.id = "toy" + std::to_string(i / 10) + std::to_string(i % 10);
    s.color_class = i % 4;
    s.armrests = (i / 4) % 2 == 1;
    const Vec3 color = kPalette[s.color_class];
    auto add = [&](const std::string& label, const Vec3& c, const Vec3& size) {
      s.labels.push_back(label);
      s.parts.push_back(box_part(opt.mesh_grid, c, size, color, label));
    };
    const double seat_w = 0.5 + 0.02 * u(rng);
    const double t = kThickness[s.color_class] + 0.004 * u(rng);
    const double back_h = 0.5 + 0.05 * u(rng), back_t = 0.05 + 0.01 * u(rng);
    add("back", Vec3(0, kSeatBottom + 0.25 + back_h / 2, -seat_w / 2 + back_t / 2), Vec3(seat_w, back_h, back_t));
    add("seat", Vec3(0, kSeatBottom + t / 2, 0), Vec3(seat_w, t, seat_w));
    const char* legs[4] = {"leg_front_left", "leg_front_right", "leg_back_left", "leg_back_right"};
    for (int k = 0; k < 4; ++k) {
      const double w = 0.06 + 0.01 * u(rng);
      const double x = (k % 2 == 0 ? -1 : 1) * (seat_w / 2 - w / 2);
      const double z = (k < 2 ? 1 : -1) * (seat_w / 2 - w / 2);
      add(legs[k], Vec3(x, kSeatBottom / 2, z), Vec3(w, kSeatBottom, w));
    }
    if (s.armrests) {
      const double len = 0.4 + 0.03 * u(rng);
      for (int k = 0; k < 2; ++k) {
        add(k == 0 ? "armrest_left" : "armrest_right", Vec3((k == 0 ? -1 : 1) * (seat_w / 2 + 0.03), 0.75, 0.0),
            Vec3(0.05, 0.05, len));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<fs::path> write_toy_dataset(const std::vector<ToyShape>& shapes, const fs::path& dir) {
  std::vector<fs::path> manifests;
  for (const auto& s : shapes) {
    const fs::path sd = dir / s.id;
    fs::create_directories(sd);
    std::vector<ManifestPart> parts;
    for (size_t k = 0; k < s.parts.size(); ++k) {
      write_obj(sd / (s.labels[k] + ".obj"), s.parts[k]);
      parts.push_back({s.labels[k], s.labels[k] + ".obj"});
    }
    write_manifest(sd / "manifest.json", "chair", parts);
    manifests.push_back(sd / "manifest.json");
  }
  return manifests;
}

}  // namespace partex::synth
