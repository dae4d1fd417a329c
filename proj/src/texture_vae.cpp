#include "partex/texture_vae.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <sstream>

namespace partex::tvae {

using ad::Tensor;

TextureVAEConfig TextureVAEConfig::desk() { return {}; }

TextureVAEConfig TextureVAEConfig::paper() {
  TextureVAEConfig c;
  c.patch_size = 256;
  c.bottom_grid = 64;
  c.top_grid = 32;
  c.k = 512;
  c.d = 64;
  c.channels = 128;
  c.seam_weight = 1.0f;
  c.seam_every = 8;
  return c;
}

void TextureVAEConfig::validate() const {
  if (patch_size <= 0 || patch_size % 8 != 0) throw std::invalid_argument("tvae: patch_size must be a positive multiple of 8");
  if (bottom_grid != patch_size / 4) throw std::invalid_argument("tvae: bottom_grid must equal patch_size / 4");
  if (top_grid != patch_size / 8) throw std::invalid_argument("tvae: top_grid must equal patch_size / 8");
  if (k < 2 || d < 1 || channels < 2 || channels % 2 != 0) throw std::invalid_argument("tvae: invalid K, D or channels");
  if (seam_every < 1) throw std::invalid_argument("tvae: seam_every must be >= 1");
}

nlohmann::json TextureVAEConfig::to_json() const {
  return {{"patch_size", patch_size}, {"bottom_grid", bottom_grid}, {"top_grid", top_grid},
          {"k", k},                   {"d", d},                     {"channels", channels},
          {"beta", beta},             {"alpha", alpha},             {"seam_weight", seam_weight},
          {"seam_every", seam_every}, {"restart_below", restart_below}};
}

TextureVAEConfig TextureVAEConfig::from_json(const nlohmann::json& j) {
  TextureVAEConfig c;
  c.patch_size = j.at("patch_size");
  c.bottom_grid = j.at("bottom_grid");
  c.top_grid = j.at("top_grid");
  c.k = j.at("k");
  c.d = j.at("d");
  c.channels = j.at("channels");
  c.beta = j.at("beta");
  c.alpha = j.at("alpha");
  c.seam_weight = j.at("seam_weight");
  c.seam_every = j.at("seam_every");
  c.restart_below = j.value("restart_below", 0.0f);
  return c;
}

TextureVAE::TextureVAE(const TextureVAEConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int c = cfg_.channels, h = c / 2, d = cfg_.d;
  auto conv = [&](const std::string& n, int in, int out, int k, int s, int p) {
    conv_.emplace(n, ad::Conv2d(ps_, n, in, out, k, s, p, rng));
  };
  auto convt = [&](const std::string& n, int in, int out) {
    convt_.emplace(n, ad::ConvTranspose2d(ps_, n, in, out, 4, 2, 1, rng));
  };
  auto res = [&](const std::string& n, int ch) {
    conv(n + ".a", ch, ch, 3, 1, 1);
    conv(n + ".b", ch, ch, 1, 1, 0);
  };
  conv("enc_b.0", 4, h, 4, 2, 1);
  conv("enc_b.1", h, c, 4, 2, 1);
  conv("enc_b.2", c, c, 3, 1, 1);
  res("enc_b.res", c);
  conv("enc_t.0", c, c, 4, 2, 1);
  conv("enc_t.1", c, c, 3, 1, 1);
  res("enc_t.res", c);
  conv("q_t", c, d, 1, 1, 0);
  conv("dec_t.0", d, c, 3, 1, 1);
  res("dec_t.res", c);
  convt("dec_t.up", c, d);
  conv("q_b", d + c, d, 1, 1, 0);
  convt("up_t", d, d);
  conv("dec.0", d + d, c, 3, 1, 1);
  res("dec.res", c);
  convt("dec.up1", c, h);
  convt("dec.up2", h, 4);
  top_codebook = vq::init_codebook(cfg_.k, d, rng);
  bottom_codebook = vq::init_codebook(cfg_.k, d, rng);
}

Tensor TextureVAE::res_block(const std::string& name, const Tensor& x) const {
  Tensor y = conv_.at(name + ".a")(ad::leaky_relu(x));
  return ad::add(x, conv_.at(name + ".b")(ad::leaky_relu(y)));
}

Tensor TextureVAE::bottom_features(const Tensor& x) const {
  const int p = cfg_.patch_size;
  if (x.rank() != 4 || x.dim(1) != 4 || x.dim(2) != p || x.dim(3) != p) {
    throw ad::ShapeError("tvae: expected patches [N, 4, " + std::to_string(p) + ", " + std::to_string(p) +
                         "], got " + ad::shape_str(x.shape()));
  }
  Tensor h = ad::leaky_relu(conv_.at("enc_b.0")(ad::shift(x, -0.5f)));
  h = ad::leaky_relu(conv_.at("enc_b.1")(h));
  h = conv_.at("enc_b.2")(h);
  return res_block("enc_b.res", h);
}

namespace {

Tensor top_from_hb(const std::map<std::string, ad::Conv2d>& conv, const Tensor& h_b,
                   const std::function<Tensor(const std::string&, const Tensor&)>& res) {
  Tensor t = ad::leaky_relu(conv.at("enc_t.0")(h_b));
  t = conv.at("enc_t.1")(t);
  t = ad::leaky_relu(res("enc_t.res", t));
  return conv.at("q_t")(t);
}

}  // namespace

Tensor TextureVAE::encode_top(const Tensor& x) const {
  return top_from_hb(conv_, bottom_features(x), [this](const std::string& n, const Tensor& t) { return res_block(n, t); });
}

Tensor TextureVAE::encode_bottom(const Tensor& x, const Tensor& z_q_top) const {
  Tensor h_b = bottom_features(x);
  Tensor dt = ad::leaky_relu(conv_.at("dec_t.0")(z_q_top));
  dt = ad::leaky_relu(res_block("dec_t.res", dt));
  dt = convt_.at("dec_t.up")(dt);
  return conv_.at("q_b")(ad::concat<float>({dt, h_b}, 1));
}

Tensor TextureVAE::quantize_map(const Tensor& z_e, const vq::Codebook& cb, std::vector<int32_t>* indices,
                                std::vector<float>* vectors) const {
  if (z_e.rank() != 4 || z_e.dim(1) != cb.d) throw ad::ShapeError("tvae: quantize expects [N, D, g, g]");
  const int64_t n = z_e.dim(0), d = cb.d, hw = z_e.dim(2) * z_e.dim(3);
  std::vector<float> nhwc(z_e.numel());
  const auto& v = z_e.data();
  for (int64_t b = 0; b < n; ++b)
    for (int64_t c = 0; c < d; ++c)
      for (int64_t p = 0; p < hw; ++p) nhwc[(b * hw + p) * d + c] = v[(b * d + c) * hw + p];
  std::vector<int32_t> idx = vq::nearest_all(nhwc, cb);
  std::vector<float> q(z_e.numel());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t p = 0; p < hw; ++p) {
      const float* e = cb.entry(idx[b * hw + p]);
      for (int64_t c = 0; c < d; ++c) q[(b * d + c) * hw + p] = e[c];
    }
  if (indices) *indices = std::move(idx);
  if (vectors) *vectors = std::move(nhwc);
  return ad::straight_through(z_e, Tensor::from(z_e.shape(), std::move(q)));
}

Encoded TextureVAE::encode(const Tensor& x) const {
  Encoded e;
  Tensor h_b = bottom_features(x);
  e.z_e_top = top_from_hb(conv_, h_b, [this](const std::string& n, const Tensor& t) { return res_block(n, t); });
  e.z_q_top = quantize_map(e.z_e_top, top_codebook, &e.top_indices, &e.top_vectors);
  Tensor dt = ad::leaky_relu(conv_.at("dec_t.0")(e.z_q_top));
  dt = ad::leaky_relu(res_block("dec_t.res", dt));
  dt = convt_.at("dec_t.up")(dt);
  e.z_e_bottom = conv_.at("q_b")(ad::concat<float>({dt, h_b}, 1));
  e.z_q_bottom = quantize_map(e.z_e_bottom, bottom_codebook, &e.bottom_indices, &e.bottom_vectors);
  return e;
}

Tensor TextureVAE::decode(const Tensor& z_q_top, const Tensor& z_q_bottom) const {
  const int d = cfg_.d, t = cfg_.top_grid, b = cfg_.bottom_grid;
  if (z_q_top.rank() != 4 || z_q_top.dim(1) != d || z_q_top.dim(2) != t || z_q_top.dim(3) != t ||
      z_q_bottom.rank() != 4 || z_q_bottom.dim(1) != d || z_q_bottom.dim(2) != b || z_q_bottom.dim(3) != b ||
      z_q_top.dim(0) != z_q_bottom.dim(0)) {
    throw ad::ShapeError("tvae: decode got top " + ad::shape_str(z_q_top.shape()) + " and bottom " +
                         ad::shape_str(z_q_bottom.shape()));
  }
  Tensor up = convt_.at("up_t")(z_q_top);
  Tensor h = conv_.at("dec.0")(ad::concat<float>({up, z_q_bottom}, 1));
  h = ad::leaky_relu(res_block("dec.res", h));
  h = ad::leaky_relu(convt_.at("dec.up1")(h));
  return ad::sigmoid(convt_.at("dec.up2")(h));
}

namespace {

Tensor codes_to_map(std::span<const int32_t> idx, const vq::Codebook& cb, int n, int g) {
  const size_t hw = static_cast<size_t>(g) * g;
  if (idx.size() != n * hw) {
    throw ad::ShapeError("tvae: expected " + std::to_string(n * hw) + " indices, got " + std::to_string(idx.size()));
  }
  std::vector<float> nhwc = vq::lookup(idx, cb), q(nhwc.size());
  for (int b = 0; b < n; ++b)
    for (size_t p = 0; p < hw; ++p)
      for (int c = 0; c < cb.d; ++c) q[(b * cb.d + c) * hw + p] = nhwc[(b * hw + p) * cb.d + c];
  return Tensor::from({n, cb.d, g, g}, std::move(q));
}

}  // namespace

Tensor TextureVAE::decode_indices(std::span<const int32_t> top, std::span<const int32_t> bottom, int n) const {
  ad::NoGradGuard ng;
  return decode(codes_to_map(top, top_codebook, n, cfg_.top_grid),
                codes_to_map(bottom, bottom_codebook, n, cfg_.bottom_grid));
}

void TextureVAE::save(ad::Checkpoint& ck) const {
  ck.meta["tvae"] = cfg_.to_json();
  ck.meta["tvae_trained"] = trained;
  ck.put_params(ps_, "tvae.");
  vq::save_codebook(ck, "tvae.top.codebook", top_codebook);
  vq::save_codebook(ck, "tvae.bottom.codebook", bottom_codebook);
}

TextureVAE TextureVAE::load(const ad::Checkpoint& ck) {
  if (!ck.meta.contains("tvae")) throw Error("checkpoint has no texture VAE (run training stage 3)");
  TextureVAE vae(TextureVAEConfig::from_json(ck.meta["tvae"]), 0);
  ck.get_params(vae.ps_, "tvae.");
  vae.top_codebook = vq::load_codebook(ck, "tvae.top.codebook");
  vae.bottom_codebook = vq::load_codebook(ck, "tvae.bottom.codebook");
  vae.trained = ck.meta.value("tvae_trained", false);
  return vae;
}

Tensor patches_to_tensor(const std::vector<Image>& patches) {
  if (patches.empty()) throw Error("patches_to_tensor: no patches");
  const int p = patches[0].width;
  const size_t hw = static_cast<size_t>(p) * p;
  std::vector<float> v(patches.size() * 4 * hw);
  for (size_t b = 0; b < patches.size(); ++b) {
    const Image& img = patches[b];
    if (img.width != p || img.height != p || img.channels != 4) {
      throw ad::ShapeError("patches_to_tensor: patch " + std::to_string(b) + " is " + std::to_string(img.width) +
                           "x" + std::to_string(img.height) + "x" + std::to_string(img.channels));
    }
    for (size_t i = 0; i < hw; ++i)
      for (int c = 0; c < 4; ++c) v[(b * 4 + c) * hw + i] = img.data[i * 4 + c];
  }
  return Tensor::from({static_cast<int64_t>(patches.size()), 4, p, p}, std::move(v));
}

std::vector<Image> tensor_to_patches(const Tensor& t) {
  if (t.rank() != 4 || t.dim(1) != 4) throw ad::ShapeError("tensor_to_patches: expected [N, 4, P, P]");
  const int n = static_cast<int>(t.dim(0)), p = static_cast<int>(t.dim(2));
  const size_t hw = static_cast<size_t>(p) * p;
  std::vector<Image> out;
  for (int b = 0; b < n; ++b) {
    Image img(p, p, 4);
    for (size_t i = 0; i < hw; ++i)
      for (int c = 0; c < 4; ++c) img.data[i * 4 + c] = t.data()[(b * 4 + c) * hw + i];
    out.push_back(std::move(img));
  }
  return out;
}

SeamGather seam_gather(const atlas::AtlasLayout& layout, int64_t patch_offset) {
  const int l = layout.l;
  const int64_t plane = static_cast<int64_t>(l) * l;
  auto flat = [&](const std::array<int, 2>& t, int c) -> int64_t {
    for (int f = 0; f < geom::kNumFaces; ++f) {
      const auto& r = layout.face_rects[f];
      if (r.contains_texel(t[0], t[1])) {
        return ((patch_offset + f) * 4 + c) * plane + static_cast<int64_t>(t[1] - r.y0) * l + (t[0] - r.x0);
      }
    }
    throw Error("seam texel outside every face");
  };
  SeamGather g;
  for (const auto& p : atlas::seam_texel_pairs(layout))
    for (int c = 0; c < 4; ++c) {
      g.a.push_back(flat(p.texel_a, c));
      g.b.push_back(flat(p.texel_b, c));
    }
  return g;
}

Tensor seam_loss(const Tensor& recon, const atlas::AtlasLayout& layout) {
  const int l = layout.l;
  if (recon.rank() != 4 || recon.dim(0) < 6 || recon.dim(1) != 4 || recon.dim(2) != l || recon.dim(3) != l) {
    throw ad::ShapeError("seam_loss: expected [6, 4, l, l], got " + ad::shape_str(recon.shape()));
  }
  SeamGather g = seam_gather(layout);
  return ad::mse_loss(ad::gather(recon, g.a), ad::gather(recon, g.b));
}

double seam_loss(const atlas::AtlasImage& img, const atlas::AtlasLayout& layout) {
  const auto pairs = atlas::seam_texel_pairs(layout);
  double s = 0;
  for (const auto& p : pairs) {
    const float* a = img.pixels.px(p.texel_a[0], p.texel_a[1]);
    const float* b = img.pixels.px(p.texel_b[0], p.texel_b[1]);
    for (int c = 0; c < 4; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  }
  return s / (4.0 * pairs.size());
}

namespace {

std::vector<Image> face_patches(const atlas::AtlasImage& img, const atlas::AtlasLayout& layout) {
  atlas::Patches p = atlas::split_patches(img, layout);
  return {p.begin(), p.end()};
}

atlas::AtlasImage merge(const Tensor& recon, const atlas::AtlasLayout& layout) {
  auto imgs = tensor_to_patches(recon);
  atlas::Patches p;
  for (int f = 0; f < geom::kNumFaces; ++f) p[f] = std::move(imgs[f]);
  return atlas::merge_patches(p, layout);
}

void check_layout(const TextureVAE& vae, const atlas::AtlasLayout& layout) {
  if (layout.l != vae.config().patch_size) {
    throw ad::ShapeError("tvae: atlas face size " + std::to_string(layout.l) + " does not match patch size " +
                         std::to_string(vae.config().patch_size));
  }
}

}  // namespace

IndexMatrices encode_atlas(const TextureVAE& vae, const atlas::AtlasImage& img, const atlas::AtlasLayout& layout) {
  check_layout(vae, layout);
  ad::NoGradGuard ng;
  Encoded e = vae.encode(patches_to_tensor(face_patches(img, layout)));
  IndexMatrices im;
  im.top_grid = vae.config().top_grid;
  im.bottom_grid = vae.config().bottom_grid;
  im.top = std::move(e.top_indices);
  im.bottom = std::move(e.bottom_indices);
  return im;
}

atlas::AtlasImage decode_atlas(const TextureVAE& vae, const IndexMatrices& im, const atlas::AtlasLayout& layout) {
  check_layout(vae, layout);
  return merge(vae.decode_indices(im.top, im.bottom, geom::kNumFaces), layout);
}

atlas::AtlasImage reconstruct_atlas(const TextureVAE& vae, const atlas::AtlasImage& img,
                                    const atlas::AtlasLayout& layout) {
  return decode_atlas(vae, encode_atlas(vae, img, layout), layout);
}

void PatchDataset::add_atlas(const atlas::AtlasImage& img, const atlas::AtlasLayout& layout) {
  std::array<int, 6> ids{};
  auto p = atlas::split_patches(img, layout);
  for (int f = 0; f < geom::kNumFaces; ++f) {
    ids[f] = static_cast<int>(patches.size());
    patches.push_back(std::move(p[f]));
  }
  atlases.push_back(ids);
}

PatchDataset PatchDataset::load(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path parts = fs::exists(root / "parts") ? root / "parts" : root;
  if (!fs::is_directory(parts)) throw Error("patch dataset not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& label : fs::directory_iterator(parts)) {
    if (!label.is_directory()) continue;
    for (const auto& shape : fs::directory_iterator(label.path()))
      if (shape.is_directory()) dirs.push_back(shape.path());
  }
  std::sort(dirs.begin(), dirs.end());
  PatchDataset ds;
  for (const auto& dir : dirs) {
    std::array<int, 6> ids{};
    bool complete = true;
    for (int f = 0; f < geom::kNumFaces; ++f) complete = complete && fs::exists(dir / ("face" + std::to_string(f) + ".png"));
    for (int f = 0; f < geom::kNumFaces; ++f) {
      const fs::path file = dir / ("face" + std::to_string(f) + ".png");
      if (!fs::exists(file)) continue;
      ids[f] = static_cast<int>(ds.patches.size());
      ds.patches.push_back(read_png(file));
    }
    if (complete) ds.atlases.push_back(ids);
  }
  if (ds.patches.empty()) throw Error("patch dataset is empty: " + root.string());
  return ds;
}

TrainReport train_texturevae(TextureVAE& vae, const PatchDataset& data, const TrainOptions& opt) {
  if (data.patches.empty()) throw Error("train_texturevae: empty dataset");
  const auto& cfg = vae.config();
  for (const auto& p : data.patches)
    if (p.width != cfg.patch_size || p.height != cfg.patch_size) {
      throw ad::ShapeError("train_texturevae: patch size " + std::to_string(p.width) + " does not match config " +
                           std::to_string(cfg.patch_size));
    }
  // Atlas batches are drawn whether or not the seam term is on, so an
  // ablation differs only in the loss.
  const bool atlas_steps = !data.atlases.empty();
  const bool seam = opt.seam && cfg.seam_weight > 0 && atlas_steps;
  const atlas::AtlasLayout layout = atlas::build_layout(cfg.patch_size, 4);
  const SeamGather gather = atlas_steps ? seam_gather(layout) : SeamGather{};

  Rng rng(opt.seed);
  std::uniform_int_distribution<size_t> pick(0, data.patches.size() - 1);
  ad::AdamState state;
  ad::AdamOptions adam;
  adam.lr = opt.lr;
  TrainReport report;
  std::deque<double> window;
  double window_sum = 0;
  for (int it = 0; it < opt.iterations; ++it) {
    std::vector<Image> batch;
    const bool seam_step = atlas_steps && it % cfg.seam_every == 0;
    if (seam_step) {
      const auto& ids = data.atlases[(it / cfg.seam_every) % data.atlases.size()];
      for (int id : ids) batch.push_back(data.patches[id]);
    }
    while (static_cast<int>(batch.size()) < opt.batch + (seam_step ? 6 : 0)) batch.push_back(data.patches[pick(rng)]);
    Tensor x = patches_to_tensor(batch);
    Encoded e = vae.encode(x);
    Tensor recon = vae.decode(e.z_q_top, e.z_q_bottom);
    Tensor l1 = ad::l1_loss(recon, x);
    Tensor emb = ad::add(vq::embedding_loss(e.z_e_top, ad::stop_gradient(e.z_q_top), cfg.beta, vq::Reduction::kMean),
                         vq::embedding_loss(e.z_e_bottom, ad::stop_gradient(e.z_q_bottom), cfg.beta,
                                            vq::Reduction::kMean));
    Tensor loss = ad::add(l1, ad::scale(emb, cfg.alpha));
    TrainStep step;
    step.iteration = it;
    if (seam_step) {
      Tensor s = ad::mse_loss(ad::gather(recon, gather.a), ad::gather(recon, gather.b));
      step.seam = s.item();
      if (seam) loss = ad::add(loss, ad::scale(s, cfg.seam_weight));
    }
    ad::backward(loss);
    ad::adam_step(vae.params(), state, adam);
    vq::ema_update(vae.top_codebook, e.top_vectors, e.top_indices);
    vq::ema_update(vae.bottom_codebook, e.bottom_vectors, e.bottom_indices);
    if (cfg.restart_below > 0) {
      // The first step re-seeds every entry the batch left unclaimed from
      // encoder outputs (data-dependent init); later steps only revive entries
      // whose usage decayed below the threshold.
      const double below = it == 0 ? std::max(1.0, static_cast<double>(cfg.restart_below)) : cfg.restart_below;
      vq::restart_dead(vae.top_codebook, e.top_vectors, below, rng);
      vq::restart_dead(vae.bottom_codebook, e.bottom_vectors, below, rng);
    }

    step.l1 = l1.item();
    step.embedding = emb.item();
    step.perplexity_top = vq::perplexity(e.top_indices, cfg.k);
    step.perplexity_bottom = vq::perplexity(e.bottom_indices, cfg.k);
    report.steps.push_back(step);
    window.push_back(step.l1);
    window_sum += step.l1;
    if (window.size() > 50) {
      window_sum -= window.front();
      window.pop_front();
    }
    report.final_l1 = window_sum / window.size();
    if (opt.log && opt.log_every > 0 && it % opt.log_every == 0) {
      std::ostringstream os;
      os << "tvae it " << it << " l1 " << step.l1 << " emb " << step.embedding << " ppl " << step.perplexity_top
         << "/" << step.perplexity_bottom;
      if (step.seam >= 0) os << " seam " << step.seam;
      opt.log(os.str());
    }
    if (opt.stop_l1 > 0 && window.size() == 50 && report.final_l1 < opt.stop_l1) break;
  }
  vae.trained = true;
  return report;
}

}  // namespace partex::tvae
