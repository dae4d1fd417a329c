#include "partex/geom_vae.hpp"

#include <sstream>

namespace partex::gvae {

using ad::Tensor;

GeomVAEConfig GeomVAEConfig::desk() { return {}; }

GeomVAEConfig GeomVAEConfig::paper() {
  GeomVAEConfig c;
  c.grid_n = 8;
  c.part_latent = 128;
  c.part_hidden = 512;
  c.shape_latent = 256;
  c.shape_hidden = 512;
  return c;
}

nlohmann::json GeomVAEConfig::to_json() const {
  return {{"grid_n", grid_n},           {"part_latent", part_latent}, {"part_hidden", part_hidden},
          {"shape_latent", shape_latent}, {"shape_hidden", shape_hidden}, {"kl_weight", kl_weight},
          {"warmup", warmup}};
}

GeomVAEConfig GeomVAEConfig::from_json(const nlohmann::json& j) {
  GeomVAEConfig c;
  c.grid_n = j.at("grid_n");
  c.part_latent = j.at("part_latent");
  c.part_hidden = j.at("part_hidden");
  c.shape_latent = j.at("shape_latent");
  c.shape_hidden = j.at("shape_hidden");
  c.kl_weight = j.at("kl_weight");
  c.warmup = j.at("warmup");
  return c;
}

template <typename T>
ad::BasicTensor<T> kl_divergence(const ad::BasicTensor<T>& mean, const ad::BasicTensor<T>& logvar) {
  if (mean.shape() != logvar.shape() || mean.rank() != 2) {
    throw ad::ShapeError("kl_divergence: expected matching [N, Z], got " + ad::shape_str(mean.shape()) + " and " +
                         ad::shape_str(logvar.shape()));
  }
  // 0.5 * sum(mean^2 + exp(logvar) - 1 - logvar) / N
  auto inner = ad::sub(ad::add(ad::mul(mean, mean), ad::exp(logvar)), ad::shift(logvar, T(1)));
  return ad::scale(ad::sum(inner), T(0.5) / static_cast<T>(mean.dim(0)));
}

template ad::BasicTensor<float> kl_divergence(const ad::BasicTensor<float>&, const ad::BasicTensor<float>&);
template ad::BasicTensor<double> kl_divergence(const ad::BasicTensor<double>&, const ad::BasicTensor<double>&);

FcVAE::FcVAE(int input, int hidden, int latent, uint64_t seed) : input_(input), hidden_(hidden), latent_(latent) {
  if (input < 1 || hidden < 1 || latent < 1) throw std::invalid_argument("FcVAE: dimensions must be positive");
  Rng rng(seed);
  enc_.emplace_back(ps_, "enc0", input, hidden, rng);
  enc_.emplace_back(ps_, "enc1", hidden, hidden, rng);
  enc_.emplace_back(ps_, "enc2", hidden, 2 * latent, rng);
  dec_.emplace_back(ps_, "dec0", latent, hidden, rng);
  dec_.emplace_back(ps_, "dec1", hidden, hidden, rng);
  dec_.emplace_back(ps_, "dec2", hidden, input, rng);
}

std::pair<Tensor, Tensor> FcVAE::encode(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != input_) {
    throw ad::ShapeError("vae: expected input [N, " + std::to_string(input_) + "], got " + ad::shape_str(x.shape()));
  }
  Tensor h = ad::leaky_relu(enc_[0](x));
  h = ad::leaky_relu(enc_[1](h));
  h = enc_[2](h);
  const int64_t n = x.dim(0);
  std::vector<int64_t> mi, li;
  for (int64_t r = 0; r < n; ++r)
    for (int j = 0; j < latent_; ++j) {
      mi.push_back(r * 2 * latent_ + j);
      li.push_back(r * 2 * latent_ + latent_ + j);
    }
  return {ad::reshape(ad::gather(h, mi), {n, latent_}), ad::reshape(ad::gather(h, li), {n, latent_})};
}

Tensor FcVAE::decode(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != latent_) {
    throw ad::ShapeError("vae: expected latent [N, " + std::to_string(latent_) + "], got " + ad::shape_str(z.shape()));
  }
  Tensor h = ad::leaky_relu(dec_[0](z));
  h = ad::leaky_relu(dec_[1](h));
  return dec_[2](h);
}

GeomLatent FcVAE::encode(std::span<const float> x, Rng* rng) const {
  if (static_cast<int>(x.size()) != input_) {
    throw ad::ShapeError("vae: input length " + std::to_string(x.size()) + " != " + std::to_string(input_));
  }
  ad::NoGradGuard ng;
  auto [m, lv] = encode(Tensor::from({1, input_}, {x.begin(), x.end()}));
  GeomLatent g;
  g.mean = m.data();
  g.logvar = lv.data();
  g.eps.assign(latent_, 0.0f);
  if (rng) {
    std::normal_distribution<float> nd(0.0f, 1.0f);
    for (auto& e : g.eps) e = nd(*rng);
  }
  g.sample.resize(latent_);
  for (int j = 0; j < latent_; ++j) g.sample[j] = g.mean[j] + std::exp(0.5f * g.logvar[j]) * g.eps[j];
  return g;
}

std::vector<float> FcVAE::decode(std::span<const float> z) const {
  if (static_cast<int>(z.size()) != latent_) {
    throw ad::ShapeError("vae: latent length " + std::to_string(z.size()) + " != " + std::to_string(latent_));
  }
  ad::NoGradGuard ng;
  return decode(Tensor::from({1, latent_}, {z.begin(), z.end()})).data();
}

void FcVAE::save(ad::Checkpoint& ck, const std::string& prefix) const {
  ck.meta["fcvae"][prefix] = {{"input", input_}, {"hidden", hidden_}, {"latent", latent_}};
  ck.put_params(ps_, prefix);
}

FcVAE FcVAE::load(const ad::Checkpoint& ck, const std::string& prefix) {
  if (!ck.meta.contains("fcvae") || !ck.meta["fcvae"].contains(prefix)) {
    throw Error("checkpoint has no VAE '" + prefix + "'");
  }
  const auto& m = ck.meta["fcvae"][prefix];
  FcVAE v(m.at("input"), m.at("hidden"), m.at("latent"), 0);
  ck.get_params(v.ps_, prefix);
  return v;
}

VaeTrainReport train_vae(FcVAE& vae, const std::vector<std::vector<float>>& data, const VaeTrainOptions& opt) {
  if (data.empty()) throw Error("train_vae: empty dataset");
  const int in = vae.input_dim(), z = vae.latent_dim();
  for (const auto& row : data)
    if (static_cast<int>(row.size()) != in) throw ad::ShapeError("train_vae: row length mismatch");
  Rng rng(opt.seed);
  std::uniform_int_distribution<size_t> pick(0, data.size() - 1);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  ad::AdamState state;
  ad::AdamOptions adam;
  adam.lr = opt.lr;
  VaeTrainReport rep;
  const int warm = static_cast<int>(opt.warmup * opt.iterations);
  for (int it = 0; it < opt.iterations; ++it) {
    const int b = std::min<int>(opt.batch, static_cast<int>(data.size()));
    std::vector<float> xv;
    xv.reserve(static_cast<size_t>(b) * in);
    for (int i = 0; i < b; ++i) {
      const auto& row = data[b == static_cast<int>(data.size()) ? i : pick(rng)];
      xv.insert(xv.end(), row.begin(), row.end());
    }
    Tensor x = Tensor::from({b, in}, std::move(xv));
    auto [mean, logvar] = vae.encode(x);
    std::vector<float> ev(static_cast<size_t>(b) * z);
    for (auto& e : ev) e = nd(rng);
    Tensor sample = ad::add(mean, ad::mul(ad::exp(ad::scale(logvar, 0.5f)), Tensor::from({b, z}, std::move(ev))));
    Tensor recon = ad::mse_loss(vae.decode(sample), x);
    Tensor kl = kl_divergence(mean, logvar);
    const float lam = opt.kl_weight * (warm > 0 ? std::min(1.0f, static_cast<float>(it + 1) / warm) : 1.0f);
    Tensor loss = ad::add(recon, ad::scale(kl, lam));
    ad::backward(loss);
    ad::adam_step(vae.params(), state, adam);
    rep.loss.push_back(loss.item());
    rep.recon.push_back(recon.item());
    rep.kl.push_back(kl.item());
    if (opt.log && opt.log_every > 0 && it % opt.log_every == 0) {
      std::ostringstream os;
      os << "vae it " << it << " loss " << loss.item() << " recon " << recon.item() << " kl " << kl.item();
      opt.log(os.str());
    }
  }
  return rep;
}

GeomModels::GeomModels(const Category& cat, const GeomVAEConfig& cfg) : cat_(&cat), cfg_(cfg) {}

int GeomModels::geometry_dim() const { return 3 * static_cast<int>(geom::template_box(cfg_.grid_n)->vertices.size()); }

int GeomModels::shape_input_dim() const {
  return static_cast<int>(cat_->slots.size()) * (cfg_.part_latent + StructureCode::kPerSlot);
}

GeomLatent GeomModels::partvae_encode(const std::string& label, std::span<const float> gv, Rng* rng) const {
  auto it = part_vaes.find(label);
  if (it == part_vaes.end()) throw Error("no PartVAE for part '" + label + "' (run training stage 1)");
  return it->second.encode(gv, rng);
}

std::vector<float> GeomModels::partvae_decode(const std::string& label, std::span<const float> z) const {
  auto it = part_vaes.find(label);
  if (it == part_vaes.end()) throw Error("no PartVAE for part '" + label + "' (run training stage 1)");
  return it->second.decode(z);
}

std::vector<float> GeomModels::shape_input(const std::map<std::string, std::vector<float>>& part_latents,
                                           const StructureCode& structure) const {
  const size_t slots = cat_->slots.size();
  if (structure.slots.size() != slots) {
    throw Error("SP-VAE: structure has " + std::to_string(structure.slots.size()) + " slots, category '" +
                cat_->name + "' has " + std::to_string(slots));
  }
  std::vector<float> v(static_cast<size_t>(shape_input_dim()), 0.0f);
  for (const auto& [label, z] : part_latents) {
    const int s = cat_->slot_index(label);
    if (s < 0) throw Error("SP-VAE: unknown part slot '" + label + "'");
    if (static_cast<int>(z.size()) != cfg_.part_latent) throw ad::ShapeError("SP-VAE: part latent length mismatch");
    std::copy(z.begin(), z.end(), v.begin() + static_cast<size_t>(s) * cfg_.part_latent);
  }
  const auto flat = structure.flatten();
  std::copy(flat.begin(), flat.end(), v.begin() + slots * cfg_.part_latent);
  return v;
}

GeomLatent GeomModels::spvae_encode(const std::map<std::string, std::vector<float>>& part_latents,
                                    const StructureCode& structure, Rng* rng) const {
  if (!has_spvae) throw Error("SP-VAE is not trained (run training stage 2)");
  return spvae.encode(shape_input(part_latents, structure), rng);
}

GeomModels::ShapeDecode GeomModels::spvae_decode(std::span<const float> z) const {
  if (!has_spvae) throw Error("SP-VAE is not trained (run training stage 2)");
  const std::vector<float> v = spvae.decode(z);
  const size_t slots = cat_->slots.size();
  ShapeDecode out;
  out.structure = StructureCode::unflatten(std::vector<float>(v.begin() + slots * cfg_.part_latent, v.end()), slots);
  for (size_t s = 0; s < slots; ++s) {
    auto& slot = out.structure.slots[s];
    slot.exists = slot.exists >= 0.5f ? 1.0f : 0.0f;
    if (slot.exists == 0) {
      slot.center.setZero();
      slot.half_extent.setZero();
      continue;
    }
    slot.half_extent = slot.half_extent.cwiseMax(Vec3::Zero());
    auto first = v.begin() + s * cfg_.part_latent;
    out.part_latents[cat_->slots[s]] = std::vector<float>(first, first + cfg_.part_latent);
  }
  return out;
}

GeomModels::SampledShape GeomModels::realize(std::span<const float> z) const {
  ShapeDecode d = spvae_decode(z);
  SampledShape out;
  out.z.assign(z.begin(), z.end());
  out.spec.category = cat_->name;
  out.spec.structure = d.structure;
  auto box = geom::template_box(cfg_.grid_n);
  const Vec3 ext = mean_bounds.extent();
  for (size_t s = 0; s < cat_->slots.size(); ++s) {
    const auto& slot = d.structure.slots[s];
    if (slot.exists == 0) continue;
    const std::string& label = cat_->slots[s];
    const auto& zp = d.part_latents.at(label);
    std::vector<float> gv = partvae_decode(label, zp);
    Aabb target;
    const Vec3 c = mean_bounds.lo + slot.center.cwiseProduct(ext);
    const Vec3 h = slot.half_extent.cwiseProduct(ext).cwiseMax(Vec3::Constant(1e-4 * ext.norm()));
    target.expand(c - h);
    target.expand(c + h);
    out.boxes.push_back(geom::place_in_bounds(std::vector<double>(gv.begin(), gv.end()), box, target));
    out.spec.parts.push_back(label);
    GeomLatent gl;
    gl.mean = zp;
    gl.logvar.assign(zp.size(), 0.0f);
    gl.eps.assign(zp.size(), 0.0f);
    gl.sample = zp;
    out.spec.latents[label] = gl;
  }
  return out;
}

GeomModels::SampledShape GeomModels::sample_shape(Rng& rng) const {
  if (!has_spvae) throw Error("sample_shape: SP-VAE is not trained (run training stage 2)");
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<float> z(cfg_.shape_latent);
  for (auto& v : z) v = nd(rng);
  return realize(z);
}

void GeomModels::save(ad::Checkpoint& ck) const {
  ck.meta["geom"] = {{"category", cat_->name},
                     {"config", cfg_.to_json()},
                     {"has_spvae", has_spvae},
                     {"mean_bounds", {mean_bounds.lo.x(), mean_bounds.lo.y(), mean_bounds.lo.z(), mean_bounds.hi.x(),
                                      mean_bounds.hi.y(), mean_bounds.hi.z()}}};
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& [label, v] : part_vaes) {
    labels.push_back(label);
    v.save(ck, "pvae." + label + ".");
  }
  ck.meta["geom"]["part_labels"] = labels;
  if (has_spvae) spvae.save(ck, "spvae.");
}

GeomModels GeomModels::load(const ad::Checkpoint& ck) {
  if (!ck.meta.contains("geom")) throw Error("checkpoint has no geometry VAEs (run training stage 1)");
  const auto& g = ck.meta["geom"];
  GeomModels m(partex::category(g.at("category").get<std::string>()), GeomVAEConfig::from_json(g.at("config")));
  for (const auto& label : g.at("part_labels")) {
    m.part_vaes.emplace(label.get<std::string>(), FcVAE::load(ck, "pvae." + label.get<std::string>() + "."));
  }
  m.has_spvae = g.at("has_spvae");
  if (m.has_spvae) m.spvae = FcVAE::load(ck, "spvae.");
  const auto& b = g.at("mean_bounds");
  if (!b[0].is_null()) {  // an empty box is stored as nulls
    m.mean_bounds.lo = Vec3(b[0], b[1], b[2]);
    m.mean_bounds.hi = Vec3(b[3], b[4], b[5]);
  }
  return m;
}

void train_partvaes(GeomModels& models, const std::vector<ShapeSample>& shapes, const VaeTrainOptions& opt) {
  std::map<std::string, std::vector<std::vector<float>>> by_label;
  for (const auto& s : shapes)
    for (const auto& p : s.parts) {
      if (models.category().slot_index(p.label) < 0) throw Error("unknown part slot '" + p.label + "'");
      by_label[p.label].push_back(p.geometry);
    }
  if (by_label.empty()) throw Error("train_partvaes: empty dataset");
  const auto& cfg = models.config();
  for (const auto& [label, rows] : by_label) {
    const int slot = models.category().slot_index(label);
    FcVAE vae(models.geometry_dim(), cfg.part_hidden, cfg.part_latent, opt.seed * 131 + slot);
    VaeTrainOptions o = opt;
    o.seed = opt.seed * 131 + slot;
    train_vae(vae, rows, o);
    models.part_vaes[label] = std::move(vae);
  }
}

VaeTrainReport train_spvae(GeomModels& models, const std::vector<ShapeSample>& shapes, const VaeTrainOptions& opt) {
  if (shapes.empty()) throw Error("train_spvae: empty dataset");
  if (models.part_vaes.empty()) throw Error("SP-VAE training requires the PartVAE checkpoints of stage 1");
  std::vector<std::vector<float>> rows;
  Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();
  for (const auto& s : shapes) {
    std::map<std::string, std::vector<float>> latents;
    for (const auto& p : s.parts) latents[p.label] = models.partvae_encode(p.label, p.geometry).mean;
    rows.push_back(models.shape_input(latents, s.structure));
    lo += s.bounds.lo;
    hi += s.bounds.hi;
  }
  models.mean_bounds = Aabb{};
  models.mean_bounds.expand(lo / shapes.size());
  models.mean_bounds.expand(hi / shapes.size());
  const auto& cfg = models.config();
  models.spvae = FcVAE(models.shape_input_dim(), cfg.shape_hidden, cfg.shape_latent, opt.seed);
  auto rep = train_vae(models.spvae, rows, opt);
  models.has_spvae = true;
  return rep;
}

}  // namespace partex::gvae
