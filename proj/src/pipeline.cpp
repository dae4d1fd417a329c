#include "partex/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include "partex/bake.hpp"

namespace partex::pipeline {

using nlohmann::json;

// ---------------------------------------------------------------- RunConfig

namespace {

std::string fmt(int v) { return std::to_string(v); }
std::string fmt(uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(const std::string& v) { return v; }
std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string fmt(float v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v) {
  throw Error("config: bad value '" + v + "' for key '" + key + "'");
}

template <typename T>
void parse_number(const std::string& key, const std::string& v, T& out) {
  T x{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v);
  out = x;
}
void parse_into(const std::string& key, const std::string& v, int& out) { parse_number(key, v, out); }
void parse_into(const std::string& key, const std::string& v, uint64_t& out) { parse_number(key, v, out); }
void parse_into(const std::string& key, const std::string& v, double& out) { parse_number(key, v, out); }
void parse_into(const std::string& key, const std::string& v, float& out) { parse_number(key, v, out); }
void parse_into(const std::string&, const std::string& v, std::string& out) { out = v; }
void parse_into(const std::string& key, const std::string& v, bool& out) {
  if (v == "true" || v == "1") {
    out = true;
  } else if (v == "false" || v == "0") {
    out = false;
  } else {
    bad_value(key, v);
  }
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Ref>
Field field(const std::string& key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
          [ref, key](RunConfig& c, const std::string& v) { parse_into(key, v, ref(c)); }};
}

#define PARTEX_FIELD(key, expr) field(key, [](RunConfig& c) -> auto& { return c.expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      PARTEX_FIELD("category", category),
      PARTEX_FIELD("seed", seed),
      PARTEX_FIELD("atlas.l", l),
      PARTEX_FIELD("atlas.grid_n", grid_n),
      PARTEX_FIELD("bake.tau", tau),
      PARTEX_FIELD("tvae.k", tvae.k),
      PARTEX_FIELD("tvae.d", tvae.d),
      PARTEX_FIELD("tvae.channels", tvae.channels),
      PARTEX_FIELD("tvae.beta", tvae.beta),
      PARTEX_FIELD("tvae.alpha", tvae.alpha),
      PARTEX_FIELD("tvae.seam_weight", tvae.seam_weight),
      PARTEX_FIELD("tvae.seam_every", tvae.seam_every),
      PARTEX_FIELD("tvae.restart_below", tvae.restart_below),
      PARTEX_FIELD("tvae.iterations", tvae_iterations),
      PARTEX_FIELD("tvae.batch", tvae_batch),
      PARTEX_FIELD("tvae.lr", tvae_lr),
      PARTEX_FIELD("gvae.part_latent", gvae.part_latent),
      PARTEX_FIELD("gvae.part_hidden", gvae.part_hidden),
      PARTEX_FIELD("gvae.shape_latent", gvae.shape_latent),
      PARTEX_FIELD("gvae.shape_hidden", gvae.shape_hidden),
      PARTEX_FIELD("gvae.kl_weight", gvae.kl_weight),
      PARTEX_FIELD("gvae.warmup", gvae.warmup),
      PARTEX_FIELD("gvae.part_iterations", part_iterations),
      PARTEX_FIELD("gvae.shape_iterations", shape_iterations),
      PARTEX_FIELD("gvae.batch", vae_batch),
      PARTEX_FIELD("gvae.lr", vae_lr),
      PARTEX_FIELD("prior.hidden", prior.hidden),
      PARTEX_FIELD("prior.blocks", prior.blocks),
      PARTEX_FIELD("prior.cond_channels", prior.cond_channels),
      PARTEX_FIELD("prior.fc_hidden", prior.fc_hidden),
      PARTEX_FIELD("prior.top_iterations", top_iterations),
      PARTEX_FIELD("prior.bottom_iterations", bottom_iterations),
      PARTEX_FIELD("prior.batch", prior_batch),
      PARTEX_FIELD("prior.lr", prior_lr),
      PARTEX_FIELD("prior.seed_conditioning", seed_conditioning),
      PARTEX_FIELD("sample.temperature", temperature),
  };
  return kFields;
}

#undef PARTEX_FIELD

// Derived sizes follow their sources.
void sync(RunConfig& c) {
  c.tvae.patch_size = c.l;
  c.tvae.bottom_grid = c.l / 4;
  c.tvae.top_grid = c.l / 8;
  c.gvae.grid_n = c.grid_n;
  c.prior.k = c.tvae.k;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

}  // namespace

RunConfig RunConfig::desk() {
  RunConfig c;
  sync(c);
  return c;
}

RunConfig RunConfig::paper() {
  RunConfig c;
  c.profile = "paper";
  c.l = 256;
  c.grid_n = 8;
  c.tvae = tvae::TextureVAEConfig::paper();
  c.tvae_iterations = 100000;
  c.tvae_batch = 16;
  c.tvae_lr = 3e-4;
  c.gvae = gvae::GeomVAEConfig::paper();
  c.part_iterations = 20000;
  c.shape_iterations = 20000;
  c.vae_batch = 32;
  c.vae_lr = 1e-3;
  c.prior = prior::PriorConfig::paper();
  c.top_iterations = 200000;
  c.bottom_iterations = 100000;
  c.prior_batch = 16;
  c.prior_lr = 3e-4;
  sync(c);
  return c;
}

RunConfig RunConfig::profile_defaults(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw Error("config: unknown profile '" + name + "' (expected desk or paper)");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "profile") {
    RunConfig base = profile_defaults(value);
    *this = base;
    return;
  }
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(*this, value);
      sync(*this);
      return;
    }
  }
  throw Error("config: unknown key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  if (key == "profile") return profile;
  for (const auto& f : fields())
    if (f.key == key) return f.get(*this);
  throw Error("config: unknown key '" + key + "'");
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> kKeys = [] {
    std::vector<std::string> k{"profile"};
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return kKeys;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& k : keys()) os << k << " = " << get(k) << '\n';
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text, const std::string& default_profile) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::string profile = default_profile;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config: line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "profile") {
      profile = value;
    } else {
      entries.emplace_back(key, value);
    }
  }
  RunConfig c = profile_defaults(profile);
  for (const auto& [k, v] : entries) c.set(k, v);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << to_text();
}

void RunConfig::validate() const {
  (void)partex::category(category);
  tvae.validate();
  if (grid_n < 1 || l % grid_n != 0) throw std::invalid_argument("config: atlas.l must be a multiple of atlas.grid_n");
  if (tau <= 0) throw std::invalid_argument("config: bake.tau must be positive");
  if (tvae_iterations < 0 || part_iterations < 0 || shape_iterations < 0 || top_iterations < 0 ||
      bottom_iterations < 0) {
    throw std::invalid_argument("config: iteration counts must be non-negative");
  }
  if (tvae_batch < 1 || vae_batch < 1 || prior_batch < 1) throw std::invalid_argument("config: batch sizes must be positive");
  if (prior.k != tvae.k) throw std::invalid_argument("config: prior K must equal the texture codebook size");
}

// ------------------------------------------------------------------ dataset

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("file not found: " + p.string());
  return json::parse(in);
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << j.dump(1) << '\n';
}

std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

std::vector<float> geometry_of(const geom::DeformedBox& b) { return to_float(geom::geometry_vector(b).values); }

json codes_json(const IndexMatrices& im) {
  return {{"top_grid", im.top_grid}, {"bottom_grid", im.bottom_grid}, {"top", im.top}, {"bottom", im.bottom}};
}

IndexMatrices codes_from(const json& j) {
  IndexMatrices im;
  im.top_grid = j.at("top_grid");
  im.bottom_grid = j.at("bottom_grid");
  im.top = j.at("top").get<std::vector<int32_t>>();
  im.bottom = j.at("bottom").get<std::vector<int32_t>>();
  return im;
}

}  // namespace

Aabb DatasetShape::bounds() const {
  Aabb b;
  for (const auto& x : boxes) b.expand(x.bounds());
  return b;
}

fs::path Dataset::part_dir(const std::string& label, const std::string& id) const { return root / "parts" / label / id; }

atlas::AtlasImage Dataset::atlas(const std::string& label, const std::string& id) const {
  atlas::AtlasImage img;
  img.l = l;
  img.pixels = read_png(part_dir(label, id) / "atlas.png");
  return img;
}

Dataset Dataset::load(const fs::path& root) {
  const fs::path index = root / "dataset.json";
  if (!fs::exists(index)) throw Error("dataset not found: " + index.string() + " (run bake first)");
  json j = read_json(index);
  Dataset ds;
  ds.root = root;
  ds.category = j.at("category");
  ds.l = j.at("l");
  ds.grid_n = j.at("grid_n");
  ds.tau = j.at("tau");
  auto box = geom::template_box(ds.grid_n);
  for (const auto& s : j.at("shapes")) {
    DatasetShape sh;
    sh.id = s.at("id");
    for (const auto& label : s.at("parts")) {
      sh.labels.push_back(label);
      json b = read_json(ds.part_dir(label, sh.id) / "bake.json");
      geom::DeformedBox db = geom::undeformed(box);
      const auto d = b.at("displacements").get<std::vector<double>>();
      if (d.size() != 3 * db.displacements.size()) throw Error("dataset: bad displacement count for " + sh.id);
      for (size_t i = 0; i < db.displacements.size(); ++i) db.displacements[i] = Vec3(d[3 * i], d[3 * i + 1], d[3 * i + 2]);
      sh.boxes.push_back(db);
    }
    ds.shapes.push_back(std::move(sh));
  }
  return ds;
}

DatasetShape bake_shape(const fs::path& manifest, const fs::path& root, const std::string& shape_id,
                        const RunConfig& cfg) {
  cfg.validate();
  LoadedShape shape = load_shape(manifest);
  const fs::path index = root / "dataset.json";
  json j;
  if (fs::exists(index)) {
    j = read_json(index);
    if (j.at("l") != cfg.l || j.at("grid_n") != cfg.grid_n || std::abs(j.at("tau").get<double>() - cfg.tau) > 1e-12) {
      throw Error("bake: dataset at " + root.string() + " uses different l/grid_n/tau");
    }
    if (j.at("category") != shape.spec.category) {
      throw Error("bake: dataset category '" + j.at("category").get<std::string>() + "' differs from '" +
                  shape.spec.category + "'");
    }
  } else {
    j = {{"category", shape.spec.category}, {"l", cfg.l}, {"grid_n", cfg.grid_n}, {"tau", cfg.tau},
         {"shapes", json::array()}};
  }
  const auto layout = atlas::build_layout(cfg.l, cfg.grid_n);
  DatasetShape out;
  out.id = shape_id;
  out.labels = shape.spec.parts;
  for (size_t k = 0; k < shape.parts.size(); ++k) {
    const auto& label = shape.spec.parts[k];
    geom::DeformedBox box = geom::fit_deformed_box(shape.parts[k], layout.box);
    atlas::AtlasImage img = bake::bake_part(shape.parts[k], box, layout, {cfg.tau});
    const fs::path dir = root / "parts" / label / shape_id;
    fs::create_directories(dir);
    write_png(dir / "atlas.png", img.pixels);
    const auto patches = atlas::split_patches(img, layout);
    for (int f = 0; f < geom::kNumFaces; ++f) write_png(dir / ("face" + std::to_string(f) + ".png"), patches[f]);
    std::vector<double> disp;
    for (const auto& d : box.displacements) disp.insert(disp.end(), {d.x(), d.y(), d.z()});
    write_json(dir / "bake.json", {{"tau", cfg.tau},
                                   {"l", cfg.l},
                                   {"grid_n", cfg.grid_n},
                                   {"source", fs::absolute(manifest).string()},
                                   {"displacements", disp}});
    out.boxes.push_back(box);
  }
  json entry = {{"id", shape_id}, {"parts", out.labels}};
  bool replaced = false;
  for (auto& s : j["shapes"])
    if (s.at("id") == shape_id) {
      s = entry;
      replaced = true;
    }
  if (!replaced) j["shapes"].push_back(entry);
  write_json(index, j);
  return out;
}

// ------------------------------------------------------------------- stages

const std::vector<StageInfo>& stages() {
  static const std::vector<StageInfo> kStages = {
      {1, "train PartVAEs", {}, "partvae.ckpt"},
      {2, "train SP-VAE", {1}, "geom.ckpt"},
      {3, "train texture VAE", {}, "tvae.ckpt"},
      {4, "extract seed-part latents", {1, 3}, "seed_latents.json"},
      {5, "train seed-part priors", {4}, "prior_seed.ckpt"},
      {6, "extract non-seed latents and seed features", {4}, "part_latents.json"},
      {7, "train non-seed priors", {6}, "prior_part.ckpt"},
  };
  return kStages;
}

std::string dry_run(const RunConfig& cfg) {
  std::ostringstream os;
  os << "profile " << cfg.profile << ", category " << cfg.category << '\n';
  for (const auto& s : stages()) {
    os << s.number << ". " << s.name << " -> checkpoints/" << s.output;
    if (!s.after.empty()) {
      os << " (after";
      for (int r : s.after) os << ' ' << r;
      os << ')';
    }
    os << '\n';
  }
  return os.str();
}

namespace {

const StageInfo& stage(int n) {
  if (n < 1 || n > 7) throw Error("unknown training stage " + std::to_string(n) + " (expected 1..7)");
  return stages()[n - 1];
}

void require(int n, const fs::path& ck) {
  std::set<int> seen;
  std::vector<int> todo = stage(n).after;
  while (!todo.empty()) {
    int r = todo.back();
    todo.pop_back();
    if (!seen.insert(r).second) continue;
    for (int q : stage(r).after) todo.push_back(q);
  }
  std::string missing;
  for (int r : seen)
    if (!fs::exists(ck / stage(r).output))
      missing += (missing.empty() ? "" : ", ") + ("stage " + std::to_string(r) + " (" + stage(r).name + ")");
  if (!missing.empty()) {
    throw Error("stage " + std::to_string(n) + " (" + stage(n).name + ") needs outputs that are missing from " +
                ck.string() + ": run " + missing + " first");
  }
}

std::vector<gvae::ShapeSample> shape_samples(const Dataset& ds) {
  const Category& cat = partex::category(ds.category);
  std::vector<gvae::ShapeSample> out;
  for (const auto& s : ds.shapes) {
    gvae::ShapeSample sh;
    std::vector<Aabb> bounds;
    for (size_t k = 0; k < s.labels.size(); ++k) {
      sh.parts.push_back({s.labels[k], geometry_of(s.boxes[k])});
      bounds.push_back(s.boxes[k].bounds());
    }
    sh.structure = structure_code(cat, s.labels, bounds);
    sh.bounds = s.bounds();
    out.push_back(sh);
  }
  return out;
}

struct LatentEntry {
  std::string shape, label;
  std::vector<float> z, feature;
  IndexMatrices codes;
};

json entries_json(const std::vector<LatentEntry>& es) {
  json a = json::array();
  for (const auto& e : es)
    a.push_back({{"shape", e.shape}, {"label", e.label}, {"z", e.z}, {"feature", e.feature}, {"codes", codes_json(e.codes)}});
  return a;
}

std::vector<LatentEntry> entries_from(const json& a) {
  std::vector<LatentEntry> out;
  for (const auto& j : a) {
    LatentEntry e;
    e.shape = j.at("shape");
    e.label = j.at("label");
    e.z = j.at("z").get<std::vector<float>>();
    e.feature = j.at("feature").get<std::vector<float>>();
    e.codes = codes_from(j.at("codes"));
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<float> as_floats(const std::vector<int32_t>& v) { return {v.begin(), v.end()}; }

prior::PriorTrainOptions prior_options(const RunConfig& cfg, int iterations, uint64_t salt, const Log& log) {
  prior::PriorTrainOptions o;
  o.iterations = iterations;
  o.batch = cfg.prior_batch;
  o.lr = cfg.prior_lr;
  o.seed = cfg.seed * 1000003 + salt;
  o.log = log;
  o.log_every = log ? 100 : 0;
  return o;
}

gvae::VaeTrainOptions vae_options(const RunConfig& cfg, int iterations, const Log& log) {
  gvae::VaeTrainOptions o;
  o.iterations = iterations;
  o.batch = cfg.vae_batch;
  o.lr = cfg.vae_lr;
  o.kl_weight = cfg.gvae.kl_weight;
  o.warmup = cfg.gvae.warmup;
  o.seed = cfg.seed;
  o.log = log;
  o.log_every = log ? 250 : 0;
  return o;
}

// Per-dimension mean and standard deviation of the seed features.
std::pair<std::vector<float>, std::vector<float>> feature_stats(const std::vector<LatentEntry>& es) {
  const size_t d = es.at(0).feature.size();
  std::vector<double> sum(d, 0.0), sq(d, 0.0);
  for (const auto& e : es) {
    if (e.feature.size() != d) throw Error("seed features of different lengths in part_latents.json");
    for (size_t j = 0; j < d; ++j) {
      sum[j] += e.feature[j];
      sq[j] += static_cast<double>(e.feature[j]) * e.feature[j];
    }
  }
  std::vector<float> mean(d), sd(d);
  for (size_t j = 0; j < d; ++j) {
    const double mu = sum[j] / es.size();
    mean[j] = static_cast<float>(mu);
    sd[j] = static_cast<float>(std::max(std::sqrt(std::max(sq[j] / es.size() - mu * mu, 0.0)), 1e-6));
  }
  return {mean, sd};
}

std::vector<float> standardize(std::vector<float> f, const std::vector<float>& mean, const std::vector<float>& sd) {
  if (mean.empty()) return f;
  if (f.size() != mean.size()) throw Error("seed feature length does not match the trained prior");
  for (size_t j = 0; j < f.size(); ++j) f[j] = (f[j] - mean[j]) / sd[j];
  return f;
}

prior::PriorModel train_top(const RunConfig& cfg, const std::vector<LatentEntry>& es, bool with_feature,
                            uint64_t salt, const Log& log) {
  if (es.empty()) throw Error("no training entries for the top prior");
  std::vector<prior::PriorSample> data;
  for (const auto& e : es)
    data.push_back({e.codes.top, with_feature ? prior::raw_condition(e.z, e.feature) : prior::raw_condition(e.z)});
  const int g = cfg.tvae.top_grid;
  prior::PriorModel m(prior::Level::kTop, cfg.prior, 6 * g, g, static_cast<int>(data[0].cond.size()),
                      cfg.seed * 7919 + salt);
  prior::train_prior(m, data, prior_options(cfg, cfg.top_iterations, salt, log));
  return m;
}

void stage_run(int n, const RunConfig& cfg, const Dataset& ds, const fs::path& ck, const Log& log) {
  const Category& cat = partex::category(ds.category);
  const auto layout = atlas::build_layout(cfg.l, cfg.grid_n);
  const fs::path out = ck / stage(n).output;
  switch (n) {
    case 1: {
      gvae::GeomModels m(cat, cfg.gvae);
      gvae::train_partvaes(m, shape_samples(ds), vae_options(cfg, cfg.part_iterations, log));
      ad::Checkpoint c;
      m.save(c);
      c.save(out.string());
      break;
    }
    case 2: {
      auto m = gvae::GeomModels::load(ad::Checkpoint::load((ck / "partvae.ckpt").string()));
      gvae::train_spvae(m, shape_samples(ds), vae_options(cfg, cfg.shape_iterations, log));
      ad::Checkpoint c;
      m.save(c);
      c.save(out.string());
      break;
    }
    case 3: {
      auto data = tvae::PatchDataset::load(ds.root);
      tvae::TextureVAE vae(cfg.tvae, cfg.seed);
      tvae::TrainOptions o;
      o.iterations = cfg.tvae_iterations;
      o.batch = cfg.tvae_batch;
      o.lr = cfg.tvae_lr;
      o.seed = cfg.seed;
      o.log = log;
      o.log_every = log ? 100 : 0;
      tvae::train_texturevae(vae, data, o);
      ad::Checkpoint c;
      vae.save(c);
      c.save(out.string());
      break;
    }
    case 4: {
      auto geom = gvae::GeomModels::load(ad::Checkpoint::load((ck / "partvae.ckpt").string()));
      auto vae = tvae::TextureVAE::load(ad::Checkpoint::load((ck / "tvae.ckpt").string()));
      const std::string seed = choose_seed_label(cat, ds.shapes);
      std::vector<LatentEntry> es;
      for (const auto& s : ds.shapes)
        for (size_t k = 0; k < s.labels.size(); ++k) {
          if (s.labels[k] != seed) continue;
          LatentEntry e{s.id, seed, geom.partvae_encode(seed, geometry_of(s.boxes[k])).mean, {}, {}};
          e.codes = tvae::encode_atlas(vae, ds.atlas(seed, s.id), layout);
          es.push_back(std::move(e));
        }
      if (es.empty()) throw Error("stage 4: no shape has the seed part '" + seed + "'");
      write_json(out, {{"seed_label", seed}, {"entries", entries_json(es)}});
      break;
    }
    case 5: {
      json j = read_json(ck / "seed_latents.json");
      auto m = train_top(cfg, entries_from(j.at("entries")), false, 5, log);
      ad::Checkpoint c;
      m.save(c, "prior.top.seed");
      c.meta["seed_label"] = j.at("seed_label");
      c.save(out.string());
      break;
    }
    case 6: {
      auto geom = gvae::GeomModels::load(ad::Checkpoint::load((ck / "partvae.ckpt").string()));
      auto vae = tvae::TextureVAE::load(ad::Checkpoint::load((ck / "tvae.ckpt").string()));
      json sj = read_json(ck / "seed_latents.json");
      const std::string seed = sj.at("seed_label");
      std::map<std::string, std::vector<float>> features;
      for (const auto& e : entries_from(sj.at("entries"))) features[e.shape] = prior::seed_feature(vae, e.codes);
      std::vector<LatentEntry> es;
      for (const auto& s : ds.shapes) {
        auto f = features.find(s.id);
        if (f == features.end()) {
          if (log) log("stage 6: shape " + s.id + " has no seed part, skipped");
          continue;
        }
        for (size_t k = 0; k < s.labels.size(); ++k) {
          if (s.labels[k] == seed) continue;
          LatentEntry e{s.id, s.labels[k], geom.partvae_encode(s.labels[k], geometry_of(s.boxes[k])).mean, f->second, {}};
          e.codes = tvae::encode_atlas(vae, ds.atlas(s.labels[k], s.id), layout);
          es.push_back(std::move(e));
        }
      }
      write_json(out, {{"seed_label", seed}, {"entries", entries_json(es)}});
      break;
    }
    case 7: {
      auto parts = entries_from(read_json(ck / "part_latents.json").at("entries"));
      auto seeds = entries_from(read_json(ck / "seed_latents.json").at("entries"));
      ad::Checkpoint c;
      if (!parts.empty()) {
        if (cfg.seed_conditioning) {
          // Seed features differ between textures by a few hundredths, next
          // to unit-scale geometry latents; standardizing lets the fusion FCs
          // see the texture difference.
          auto [mean, sd] = feature_stats(parts);
          for (auto& e : parts) e.feature = standardize(std::move(e.feature), mean, sd);
          c.meta["feature_mean"] = mean;
          c.meta["feature_std"] = sd;
        }
        auto top = train_top(cfg, parts, cfg.seed_conditioning, 7, log);
        top.save(c, "prior.top.part");
      }
      std::vector<prior::PriorSample> bottom_data;
      for (const auto* list : {&seeds, &parts})
        for (const auto& e : *list) bottom_data.push_back({e.codes.bottom, as_floats(e.codes.top)});
      const int g = cfg.tvae.bottom_grid;
      prior::PriorModel bottom(prior::Level::kBottom, cfg.prior, 6 * g, g, 0, cfg.seed * 7919 + 8);
      prior::train_prior(bottom, bottom_data, prior_options(cfg, cfg.bottom_iterations, 8, log));
      bottom.save(c, "prior.bottom");
      c.meta["seed_conditioning"] = cfg.seed_conditioning;
      c.meta["has_part_prior"] = !parts.empty();
      c.save(out.string());
      break;
    }
    default:
      throw Error("unknown training stage");
  }
}

}  // namespace

std::string choose_seed_label(const Category& cat, const std::vector<DatasetShape>& shapes) {
  if (cat.seed) return *cat.seed;
  std::map<std::string, int> votes;
  for (const auto& s : shapes) {
    if (s.boxes.empty()) continue;
    const Vec3 c = s.bounds().center();
    size_t best = 0;
    for (size_t k = 1; k < s.boxes.size(); ++k)
      if ((s.boxes[k].bounds().center() - c).norm() < (s.boxes[best].bounds().center() - c).norm()) best = k;
    votes[s.labels[best]]++;
  }
  if (votes.empty()) throw Error("choose_seed_label: empty dataset");
  std::string best;
  int n = -1;
  for (const auto& slot : cat.slots)
    if (votes.count(slot) && votes[slot] > n) {
      best = slot;
      n = votes[slot];
    }
  return best;
}

void train(const RunConfig& cfg, const fs::path& data_root, const fs::path& run_dir, std::vector<int> which,
           const Log& log) {
  cfg.validate();
  std::sort(which.begin(), which.end());
  which.erase(std::unique(which.begin(), which.end()), which.end());
  for (int n : which) (void)stage(n);
  const Dataset ds = Dataset::load(data_root);
  if (ds.category != cfg.category) {
    throw Error("train: dataset category '" + ds.category + "' differs from config '" + cfg.category + "'");
  }
  if (ds.l != cfg.l || ds.grid_n != cfg.grid_n) throw Error("train: dataset l/grid_n differ from the config");
  const fs::path ck = run_dir / "checkpoints";
  fs::create_directories(ck);
  cfg.save(run_dir / "config.txt");
  const fs::path mpath = run_dir / "manifest.json";
  json manifest = fs::exists(mpath) ? read_json(mpath) : json{{"stages", json::object()}};
  manifest["dataset"] = fs::absolute(data_root).string();
  manifest["config"] = "config.txt";
  for (int n : which) {
    require(n, ck);
    if (log) log("stage " + std::to_string(n) + ": " + stage(n).name);
    const auto t0 = std::chrono::steady_clock::now();
    stage_run(n, cfg, ds, ck, log);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    manifest["stages"][std::to_string(n)] = {{"name", stage(n).name}, {"output", "checkpoints/" + stage(n).output},
                                             {"seconds", secs}};
    write_json(mpath, manifest);
    if (log) log("stage " + std::to_string(n) + " done in " + fmt(secs) + " s");
  }
}

// ------------------------------------------------------------- applications

Models Models::load(const fs::path& run_dir) {
  const fs::path ck = run_dir / "checkpoints";
  for (int n = 1; n <= 7; ++n)
    if (n != 1 && !fs::exists(ck / stage(n).output)) {
      throw Error("run at " + run_dir.string() + " is incomplete: stage " + std::to_string(n) + " (" + stage(n).name +
                  ") has not been run");
    }
  Models m;
  m.cfg = RunConfig::load(run_dir / "config.txt");
  m.geom = gvae::GeomModels::load(ad::Checkpoint::load((ck / "geom.ckpt").string()));
  m.tvae = tvae::TextureVAE::load(ad::Checkpoint::load((ck / "tvae.ckpt").string()));
  auto seed = ad::Checkpoint::load((ck / "prior_seed.ckpt").string());
  m.seed_top = prior::PriorModel::load(seed, "prior.top.seed");
  m.seed_label = seed.meta.at("seed_label");
  auto part = ad::Checkpoint::load((ck / "prior_part.ckpt").string());
  if (part.meta.value("has_part_prior", false)) m.part_top = prior::PriorModel::load(part, "prior.top.part");
  m.bottom = prior::PriorModel::load(part, "prior.bottom");
  m.seed_conditioning = part.meta.value("seed_conditioning", true);
  if (part.meta.contains("feature_mean")) {
    m.feature_mean = part.meta.at("feature_mean").get<std::vector<float>>();
    m.feature_std = part.meta.at("feature_std").get<std::vector<float>>();
  }
  m.layout = atlas::build_layout(m.cfg.l, m.cfg.grid_n);
  return m;
}

namespace {

IndexMatrices sample_codes(const Models& m, const prior::PriorModel& top, const std::vector<float>& cond,
                           double temperature, Rng& rng) {
  IndexMatrices im;
  im.top_grid = m.cfg.tvae.top_grid;
  im.bottom_grid = m.cfg.tvae.bottom_grid;
  im.top = top.sample(cond, temperature, rng);
  im.bottom = m.bottom.sample(as_floats(im.top), temperature, rng);
  return im;
}

}  // namespace

TexturedParts texture_parts(const Models& m, const std::vector<PartInput>& parts, double temperature, Rng& rng) {
  const Category& cat = m.geom.category();
  int seed_at = -1;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (cat.slot_index(parts[i].label) < 0) {
      throw Error("unknown part slot '" + parts[i].label + "' for category '" + cat.name + "'");
    }
    if (parts[i].label == m.seed_label) seed_at = static_cast<int>(i);
  }
  if (seed_at < 0) throw Error("shape has no seed part '" + m.seed_label + "'");
  TexturedParts out;
  out.labels.resize(parts.size());
  out.codes.resize(parts.size());
  out.atlases.resize(parts.size());
  auto finish = [&](size_t i, IndexMatrices im) {
    out.labels[i] = parts[i].label;
    out.atlases[i] = tvae::decode_atlas(*m.tvae, im, m.layout);
    out.codes[i] = std::move(im);
  };
  finish(seed_at, sample_codes(m, m.seed_top, prior::raw_condition(parts[seed_at].z), temperature, rng));
  out.seed_feature = prior::seed_feature(*m.tvae, out.codes[seed_at]);
  for (size_t i = 0; i < parts.size(); ++i) {
    if (static_cast<int>(i) == seed_at) continue;
    if (m.part_top.height() == 0) throw Error("run has no non-seed prior (the training data had only seed parts)");
    auto cond = m.seed_conditioning
                    ? prior::raw_condition(parts[i].z, standardize(out.seed_feature, m.feature_mean, m.feature_std))
                    : prior::raw_condition(parts[i].z);
    finish(i, sample_codes(m, m.part_top, cond, temperature, rng));
  }
  return out;
}

EncodedShape encode_shape(const Models& m, const LoadedShape& shape) {
  EncodedShape e;
  auto box = geom::template_box(m.cfg.grid_n);
  for (size_t k = 0; k < shape.parts.size(); ++k) {
    const auto& label = shape.spec.parts[k];
    if (m.geom.category().slot_index(label) < 0) {
      throw Error("unknown part slot '" + label + "' for category '" + m.geom.category().name + "'");
    }
    e.labels.push_back(label);
    e.boxes.push_back(geom::fit_deformed_box(shape.parts[k], box));
    e.latents.push_back(m.geom.partvae_encode(label, geometry_of(e.boxes.back())));
  }
  return e;
}

fs::path write_textured_shape(const fs::path& dir, const std::string& category, const std::vector<std::string>& labels,
                              const std::vector<geom::DeformedBox>& boxes, const std::vector<atlas::AtlasImage>& atlases,
                              const std::vector<IndexMatrices>& codes, const atlas::AtlasLayout& layout) {
  if (labels.size() != boxes.size() || labels.size() != atlases.size()) {
    throw std::invalid_argument("write_textured_shape: size mismatch");
  }
  fs::create_directories(dir);
  json j = {{"category", category}, {"l", layout.l}, {"grid_n", layout.grid_n}, {"parts", json::array()}};
  json cj = json::object();
  for (size_t k = 0; k < labels.size(); ++k) {
    geom::PartMesh mesh = boxes[k].to_mesh();
    mesh.label = labels[k];
    mesh.texture = std::make_shared<const Image>(atlases[k].pixels);
    mesh.face_uvs = layout.tri_uvs;
    write_obj(dir / (labels[k] + ".obj"), mesh);
    j["parts"].push_back({{"label", labels[k]}, {"mesh", labels[k] + ".obj"}, {"atlas", labels[k] + ".png"}});
    if (k < codes.size()) cj[labels[k]] = codes_json(codes[k]);
  }
  write_json(dir / "codes.json", cj);
  write_json(dir / "manifest.json", j);
  return dir / "manifest.json";
}

std::vector<fs::path> cmd_texture(const fs::path& run_dir, const fs::path& shape_manifest, const fs::path& out_dir,
                                  const TextureOptions& opt) {
  if (opt.num_samples < 1) throw Error("texture: num_samples must be positive");
  const Models m = Models::load(run_dir);
  const LoadedShape shape = load_shape(shape_manifest);
  const EncodedShape e = encode_shape(m, shape);
  std::vector<PartInput> in;
  for (size_t k = 0; k < e.labels.size(); ++k) in.push_back({e.labels[k], e.latents[k].mean});
  Rng rng(opt.seed);
  std::vector<fs::path> out;
  for (int i = 0; i < opt.num_samples; ++i) {
    auto t = texture_parts(m, in, opt.temperature, rng);
    out.push_back(write_textured_shape(out_dir / ("sample_" + std::to_string(i)), m.geom.category().name, t.labels,
                                       e.boxes, t.atlases, t.codes, m.layout));
  }
  return out;
}

Generated generate(const Models& m, double temperature, Rng& rng) {
  // Texturing starts from the seed part, so structures without it are redrawn.
  constexpr int kAttempts = 100;
  Generated g;
  for (int a = 0;; ++a) {
    g.shape = m.geom.sample_shape(rng);
    const auto& p = g.shape.spec.parts;
    if (std::find(p.begin(), p.end(), m.seed_label) != p.end()) break;
    if (a + 1 == kAttempts) {
      throw Error("generate: no sampled structure contained the seed part '" + m.seed_label + "' in " +
                  std::to_string(kAttempts) + " draws");
    }
  }
  std::vector<PartInput> in;
  for (const auto& label : g.shape.spec.parts) in.push_back({label, g.shape.spec.latents.at(label).mean});
  g.textures = texture_parts(m, in, temperature, rng);
  for (size_t k = 0; k < in.size(); ++k) g.shape.spec.textures[in[k].label] = g.textures.codes[k];
  return g;
}

fs::path cmd_generate(const fs::path& run_dir, const fs::path& out_dir, uint64_t seed, double temperature) {
  const Models m = Models::load(run_dir);
  Rng rng(seed);
  Generated g = generate(m, temperature, rng);
  return write_textured_shape(out_dir, m.geom.category().name, g.textures.labels, g.shape.boxes, g.textures.atlases,
                              g.textures.codes, m.layout);
}

void cmd_generate_from_image(const fs::path& image) {
  throw Error("image-guided generation from " + image.string() +
              " requires external shape-prediction and perceptual networks");
}

Endpoint make_endpoint(const Models& m, const std::vector<std::string>& labels,
                       const std::vector<geom::DeformedBox>& boxes, const std::vector<atlas::AtlasImage>& atlases) {
  if (labels.size() != boxes.size() || labels.size() != atlases.size()) throw Error("make_endpoint: size mismatch");
  Endpoint e;
  e.labels = labels;
  std::map<std::string, std::vector<float>> lat;
  std::vector<Aabb> bounds;
  for (size_t k = 0; k < labels.size(); ++k) {
    lat[labels[k]] = m.geom.partvae_encode(labels[k], geometry_of(boxes[k])).mean;
    bounds.push_back(boxes[k].bounds());
  }
  e.z = m.geom.spvae_encode(lat, structure_code(m.geom.category(), labels, bounds)).mean;
  ad::NoGradGuard ng;
  for (const auto& img : atlases) {
    const auto p = atlas::split_patches(img, m.layout);
    tvae::Encoded enc = m.tvae->encode(tvae::patches_to_tensor({p.begin(), p.end()}));
    e.z_e_top.push_back(enc.z_e_top);
    e.z_e_bottom.push_back(enc.z_e_bottom);
    e.codes.push_back({m.cfg.tvae.top_grid, m.cfg.tvae.bottom_grid, enc.top_indices, enc.bottom_indices});
  }
  return e;
}

std::vector<Frame> interpolate(const Models& m, const Endpoint& a, const Endpoint& b, int steps) {
  if (steps < 2) throw Error("interpolate: steps must be at least 2");
  if (a.labels != b.labels) throw Error("interpolate: part-slot mismatch between the two shapes");
  ad::NoGradGuard ng;
  std::vector<Frame> frames;
  for (int i = 0; i < steps; ++i) {
    Frame f;
    f.t = static_cast<double>(i) / (steps - 1);
    const bool first = i == 0, last = i == steps - 1;
    std::vector<float> z = first ? a.z : b.z;
    if (!first && !last)
      for (size_t j = 0; j < z.size(); ++j) z[j] = static_cast<float>((1 - f.t) * a.z[j] + f.t * b.z[j]);
    f.shape = m.geom.realize(z);
    std::vector<IndexMatrices> codes;
    for (size_t k = 0; k < a.labels.size(); ++k) {
      if (first || last) {
        codes.push_back(first ? a.codes[k] : b.codes[k]);
        continue;
      }
      const float t = static_cast<float>(f.t);
      IndexMatrices im{m.cfg.tvae.top_grid, m.cfg.tvae.bottom_grid, {}, {}};
      m.tvae->quantize_map(ad::add(ad::scale(a.z_e_top[k], 1 - t), ad::scale(b.z_e_top[k], t)), m.tvae->top_codebook,
                           &im.top, nullptr);
      m.tvae->quantize_map(ad::add(ad::scale(a.z_e_bottom[k], 1 - t), ad::scale(b.z_e_bottom[k], t)),
                           m.tvae->bottom_codebook, &im.bottom, nullptr);
      codes.push_back(std::move(im));
    }
    // Keep realized parts that have a texture, in realized order.
    gvae::GeomModels::SampledShape kept = f.shape;
    kept.spec.parts.clear();
    kept.boxes.clear();
    for (size_t r = 0; r < f.shape.spec.parts.size(); ++r) {
      auto it = std::find(a.labels.begin(), a.labels.end(), f.shape.spec.parts[r]);
      if (it == a.labels.end()) continue;
      const size_t k = it - a.labels.begin();
      kept.spec.parts.push_back(f.shape.spec.parts[r]);
      kept.boxes.push_back(f.shape.boxes[r]);
      f.codes.push_back(codes[k]);
      f.atlases.push_back(tvae::decode_atlas(*m.tvae, codes[k], m.layout));
    }
    f.shape = std::move(kept);
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<fs::path> cmd_interpolate(const fs::path& run_dir, const fs::path& shape_a, const fs::path& shape_b,
                                      int steps, const fs::path& out_dir) {
  const Models m = Models::load(run_dir);
  auto endpoint = [&](const fs::path& p) {
    const LoadedShape s = load_shape(p);
    const EncodedShape e = encode_shape(m, s);
    std::vector<atlas::AtlasImage> atlases;
    for (size_t k = 0; k < s.parts.size(); ++k)
      atlases.push_back(bake::bake_part(s.parts[k], e.boxes[k], m.layout, {m.cfg.tau}));
    return make_endpoint(m, e.labels, e.boxes, atlases);
  };
  const Endpoint a = endpoint(shape_a), b = endpoint(shape_b);
  std::vector<fs::path> out;
  const auto frames = interpolate(m, a, b, steps);
  for (size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    out.push_back(write_textured_shape(out_dir / ("frame_" + std::to_string(i)), m.geom.category().name, f.shape.spec.parts,
                                       f.shape.boxes, f.atlases, f.codes, m.layout));
  }
  return out;
}

// ------------------------------------------------------------ render / eval

namespace {

render::Scene scene_of(const LoadedShape& s) {
  render::Scene scene;
  for (const auto& p : s.parts) scene.add(p);
  scene.build();
  return scene;
}

}  // namespace

std::vector<Image> cmd_render(const fs::path& manifest, const fs::path& out_dir, int views, int size) {
  if (views < 1 || views > 12) throw Error("render: views must be in 1..12");
  const LoadedShape s = load_shape(manifest);
  const render::Scene scene = scene_of(s);
  const auto cams = render::default_viewpoints(scene.bounds(), size);
  fs::create_directories(out_dir);
  std::vector<Image> out;
  for (int v = 0; v < views; ++v) {
    out.push_back(render::render(scene, cams[v]));
    char name[32];
    std::snprintf(name, sizeof name, "view_%02d.png", v);
    write_png(out_dir / name, out.back());
  }
  return out;
}

json cmd_eval(const fs::path& manifest, const std::optional<fs::path>& reference, int views, int size) {
  const json j = read_json(manifest);
  const fs::path dir = manifest.parent_path();
  json report = json::object();
  std::vector<atlas::AtlasImage> atlases;
  for (const auto& p : j.at("parts")) {
    if (!p.contains("atlas")) continue;
    atlas::AtlasImage img;
    img.pixels = read_png(dir / p.at("atlas").get<std::string>());
    img.l = img.pixels.width / 4;
    atlases.push_back(std::move(img));
  }
  if (!atlases.empty()) {
    const auto layout = atlas::build_layout(atlases[0].l, j.value("grid_n", 4));
    double seam = 0;
    for (const auto& a : atlases) seam += render::seam_consistency(a, layout);
    report["seam_consistency"] = seam / atlases.size();
    report["compatibility"] = render::compatibility_score(atlases, layout);
    report["parts_with_atlas"] = atlases.size();
  }
  if (reference) {
    if (views < 1 || views > 12) throw Error("eval: views must be in 1..12");
    const render::Scene a = scene_of(load_shape(manifest)), b = scene_of(load_shape(*reference));
    Aabb bounds = a.bounds();
    bounds.expand(b.bounds());
    auto cams = render::default_viewpoints(bounds, size);
    cams.resize(views);
    report["multiview_ssim"] = render::multiview_ssim(a, b, cams);
    report["views"] = views;
  }
  return report;
}

}  // namespace partex::pipeline
