#include "partex/shape.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

namespace partex {

namespace fs = std::filesystem;
using nlohmann::json;

int Category::slot_index(const std::string& label) const {
  auto it = std::find(slots.begin(), slots.end(), label);
  return it == slots.end() ? -1 : static_cast<int>(it - slots.begin());
}

namespace {

const std::vector<Category>& registry() {
  static const std::vector<Category> kCategories = {
      {"chair",
       {"back", "seat", "leg_front_left", "leg_front_right", "leg_back_left", "leg_back_right",
        "armrest_left", "armrest_right"},
       "seat"},
      {"table",
       {"tabletop", "leg_front_left", "leg_front_right", "leg_back_left", "leg_back_right", "support"},
       "tabletop"},
      {"car",
       {"body", "wheel_front_left", "wheel_front_right", "wheel_back_left", "wheel_back_right",
        "mirror_left", "mirror_right"},
       std::nullopt},
      {"plane", {"body", "wing_left", "wing_right", "tail", "engine_left", "engine_right"}, std::nullopt},
  };
  return kCategories;
}

}  // namespace

const Category& category(const std::string& name) {
  for (const auto& c : registry()) {
    if (c.name == name) return c;
  }
  throw Error("unknown category '" + name + "'");
}

std::vector<std::string> category_names() {
  std::vector<std::string> out;
  for (const auto& c : registry()) out.push_back(c.name);
  return out;
}

std::vector<float> StructureCode::flatten() const {
  std::vector<float> out;
  out.reserve(slots.size() * kPerSlot);
  for (const auto& s : slots) {
    out.push_back(s.exists);
    for (int k = 0; k < 3; ++k) out.push_back(static_cast<float>(s.center[k]));
    for (int k = 0; k < 3; ++k) out.push_back(static_cast<float>(s.half_extent[k]));
  }
  return out;
}

StructureCode StructureCode::unflatten(const std::vector<float>& values, size_t num_slots) {
  if (values.size() != num_slots * kPerSlot) {
    throw std::invalid_argument("StructureCode::unflatten: expected " +
                                std::to_string(num_slots * kPerSlot) + " values");
  }
  StructureCode sc;
  sc.slots.resize(num_slots);
  for (size_t i = 0; i < num_slots; ++i) {
    const float* v = values.data() + i * kPerSlot;
    sc.slots[i].exists = v[0];
    sc.slots[i].center = Vec3(v[1], v[2], v[3]);
    sc.slots[i].half_extent = Vec3(v[4], v[5], v[6]);
  }
  return sc;
}

StructureCode structure_code(const Category& cat, const std::vector<std::string>& labels,
                             const std::vector<Aabb>& part_bounds) {
  if (labels.size() != part_bounds.size()) throw std::invalid_argument("structure_code: size mismatch");
  Aabb all;
  for (const auto& b : part_bounds) all.expand(b);
  Vec3 ext = all.extent();
  for (int k = 0; k < 3; ++k) ext[k] = ext[k] > 1e-12 ? ext[k] : 1.0;
  StructureCode sc;
  sc.slots.resize(cat.slots.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    int s = cat.slot_index(labels[i]);
    if (s < 0) throw Error("unknown part label '" + labels[i] + "' for category '" + cat.name + "'");
    auto& slot = sc.slots[s];
    slot.exists = 1;
    slot.center = (part_bounds[i].center() - all.lo).cwiseQuotient(ext);
    slot.half_extent = (0.5 * part_bounds[i].extent()).cwiseQuotient(ext);
  }
  return sc;
}

namespace {

struct MtlInfo {
  std::map<std::string, fs::path> diffuse_maps;
};

MtlInfo read_mtl(const fs::path& path) {
  MtlInfo info;
  std::ifstream in(path);
  if (!in) return info;
  std::string line, current;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "newmtl") {
      ss >> current;
    } else if (tag == "map_Kd") {
      std::string file;
      std::getline(ss >> std::ws, file);
      while (!file.empty() && (file.back() == '\r' || file.back() == ' ')) file.pop_back();
      info.diffuse_maps[current] = path.parent_path() / file;
    }
  }
  return info;
}

// Resolves a possibly negative OBJ index (1-based) into a 0-based one.
int resolve_index(long idx, size_t count, const fs::path& path, int line_no) {
  long r = idx > 0 ? idx - 1 : static_cast<long>(count) + idx;
  if (idx == 0 || r < 0 || r >= static_cast<long>(count)) {
    throw Error(path.string() + ":" + std::to_string(line_no) + ": index out of range");
  }
  return static_cast<int>(r);
}

}  // namespace

geom::PartMesh read_obj(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("mesh not found: " + path.string());
  geom::PartMesh mesh;
  std::vector<Vec2> texcoords;
  std::vector<std::array<int, 3>> face_vt;
  std::vector<Vec3> colors;
  bool any_color = false, all_color = true;
  MtlInfo mtl;
  std::optional<fs::path> texture_path;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      std::vector<double> vals;
      double x;
      while (ss >> x) vals.push_back(x);
      if (vals.size() != 3 && vals.size() != 6) {
        throw Error(path.string() + ":" + std::to_string(line_no) + ": expected 3 or 6 vertex values");
      }
      mesh.vertices.emplace_back(vals[0], vals[1], vals[2]);
      if (vals.size() == 6) {
        colors.emplace_back(vals[3], vals[4], vals[5]);
        any_color = true;
      } else {
        colors.emplace_back(0.5, 0.5, 0.5);
        all_color = false;
      }
    } else if (tag == "vt") {
      double u = 0, v = 0;
      ss >> u >> v;
      texcoords.emplace_back(u, v);
    } else if (tag == "f") {
      std::vector<std::string> corners;
      std::string c;
      while (ss >> c) corners.push_back(c);
      if (corners.size() != 3) {
        throw Error(path.string() + ":" + std::to_string(line_no) + ": non-triangulated face (" +
                    std::to_string(corners.size()) + " vertices)");
      }
      geom::Triangle tri;
      std::array<int, 3> vt{-1, -1, -1};
      for (int k = 0; k < 3; ++k) {
        const std::string& s = corners[k];
        size_t p1 = s.find('/');
        tri[k] = resolve_index(std::stol(s.substr(0, p1)), mesh.vertices.size(), path, line_no);
        if (p1 != std::string::npos) {
          size_t p2 = s.find('/', p1 + 1);
          std::string t = s.substr(p1 + 1, p2 == std::string::npos ? std::string::npos : p2 - p1 - 1);
          if (!t.empty()) vt[k] = resolve_index(std::stol(t), texcoords.size(), path, line_no);
        }
      }
      mesh.faces.push_back(tri);
      face_vt.push_back(vt);
    } else if (tag == "mtllib") {
      std::string file;
      std::getline(ss >> std::ws, file);
      mtl = read_mtl(path.parent_path() / file);
    } else if (tag == "usemtl") {
      std::string name;
      ss >> name;
      auto it = mtl.diffuse_maps.find(name);
      if (it != mtl.diffuse_maps.end()) texture_path = it->second;
    }
  }
  if (any_color && all_color) mesh.vertex_colors = std::move(colors);
  bool has_uv = !face_vt.empty() && std::all_of(face_vt.begin(), face_vt.end(), [](const auto& t) {
    return t[0] >= 0 && t[1] >= 0 && t[2] >= 0;
  });
  if (texture_path && has_uv) {
    if (!fs::exists(*texture_path)) throw Error("texture not found: " + texture_path->string());
    auto tex = std::make_shared<Image>(read_png(*texture_path));
    mesh.face_uvs.resize(mesh.faces.size());
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
      for (int k = 0; k < 3; ++k) {
        const Vec2& t = texcoords[face_vt[f][k]];
        mesh.face_uvs[f][k] = Vec2(t.x() * tex->width, (1.0 - t.y()) * tex->height);
      }
    }
    mesh.texture = std::move(tex);
  }
  if (mesh.vertices.size() < 3) throw Error(path.string() + ": fewer than 3 vertices");
  mesh.validate();
  return mesh;
}

void write_obj(const fs::path& path, const geom::PartMesh& mesh) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(9);
  const bool textured = mesh.texture && !mesh.face_uvs.empty();
  const std::string stem = path.stem().string();
  if (textured) {
    out << "mtllib " << stem << ".mtl\n";
    std::ofstream m(path.parent_path() / (stem + ".mtl"));
    m << "newmtl atlas\nKd 1 1 1\nmap_Kd " << stem << ".png\n";
    write_png(path.parent_path() / (stem + ".png"), *mesh.texture);
  }
  const bool colored = mesh.vertex_colors.size() == mesh.vertices.size() && !mesh.vertex_colors.empty();
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    out << "v " << v.x() << ' ' << v.y() << ' ' << v.z();
    if (colored) {
      const auto& c = mesh.vertex_colors[i];
      out << ' ' << c.x() << ' ' << c.y() << ' ' << c.z();
    }
    out << '\n';
  }
  if (textured) {
    const double w = mesh.texture->width, h = mesh.texture->height;
    for (const auto& tri : mesh.face_uvs) {
      for (const auto& uv : tri) out << "vt " << uv.x() / w << ' ' << 1.0 - uv.y() / h << '\n';
    }
    out << "usemtl atlas\n";
  }
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    out << 'f';
    for (int k = 0; k < 3; ++k) {
      out << ' ' << t[k] + 1;
      if (textured) out << '/' << 3 * f + k + 1;
    }
    out << '\n';
  }
}

LoadedShape load_shape(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("manifest not found: " + manifest_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!j.contains("category") || !j.contains("parts") || !j["parts"].is_array()) {
    throw Error("manifest " + manifest_path.string() + " needs 'category' and 'parts'");
  }
  const Category& cat = category(j["category"].get<std::string>());
  const fs::path dir = manifest_path.parent_path();

  struct Entry {
    int slot;
    geom::PartMesh mesh;
  };
  std::vector<Entry> entries;
  std::set<std::string> seen;
  for (const auto& p : j["parts"]) {
    std::string label = p.at("label").get<std::string>();
    int slot = cat.slot_index(label);
    if (slot < 0) throw Error("unknown part label '" + label + "' for category '" + cat.name + "'");
    if (!seen.insert(label).second) throw Error("duplicate part label '" + label + "'");
    fs::path mesh_path = dir / p.at("mesh").get<std::string>();
    if (!fs::exists(mesh_path)) throw Error("mesh not found: " + mesh_path.string());
    geom::PartMesh mesh = read_obj(mesh_path);
    if (p.contains("texture")) {
      fs::path tex = dir / p["texture"].get<std::string>();
      if (!fs::exists(tex)) throw Error("texture not found: " + tex.string());
      if (mesh.face_uvs.empty()) throw Error("part '" + label + "': texture given but mesh has no vt");
      mesh.texture = std::make_shared<Image>(read_png(tex));
    }
    mesh.label = label;
    mesh = geom::filter_degenerate(std::move(mesh));
    if (mesh.empty()) throw Error("part '" + label + "' has no non-degenerate triangles");
    entries.push_back({slot, std::move(mesh)});
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.slot < b.slot; });
  LoadedShape out;
  out.spec.category = cat.name;
  std::vector<Aabb> bounds;
  for (auto& e : entries) {
    out.spec.parts.push_back(e.mesh.label);
    bounds.push_back(e.mesh.bounds());
    out.parts.push_back(std::move(e.mesh));
  }
  out.spec.structure = structure_code(cat, out.spec.parts, bounds);
  return out;
}

void write_manifest(const fs::path& path, const std::string& category_name,
                    const std::vector<ManifestPart>& parts) {
  json j;
  j["category"] = category_name;
  j["parts"] = json::array();
  for (const auto& p : parts) j["parts"].push_back({{"label", p.label}, {"mesh", p.mesh}});
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

}  // namespace partex
