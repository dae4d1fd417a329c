#include "partex/prior.hpp"

#include <cmath>
#include <deque>
#include <sstream>

namespace partex::prior {

using ad::Tensor;

PriorConfig PriorConfig::desk() { return {}; }

PriorConfig PriorConfig::paper() {
  PriorConfig c;
  c.k = 512;
  c.hidden = 128;
  c.blocks = 8;
  c.cond_channels = 16;
  c.fc_hidden = 512;
  return c;
}

nlohmann::json PriorConfig::to_json() const {
  return {{"k", k}, {"hidden", hidden}, {"blocks", blocks}, {"cond_channels", cond_channels}, {"fc_hidden", fc_hidden}};
}

PriorConfig PriorConfig::from_json(const nlohmann::json& j) {
  PriorConfig c;
  c.k = j.at("k");
  c.hidden = j.at("hidden");
  c.blocks = j.at("blocks");
  c.cond_channels = j.at("cond_channels");
  c.fc_hidden = j.at("fc_hidden");
  return c;
}

PriorModel::PriorModel(Level level, const PriorConfig& cfg, int height, int width, int cond_dim, uint64_t seed)
    : level_(level), cfg_(cfg), h_(height), w_(width), cond_dim_(cond_dim), seed_(seed) {
  if (height < 1 || width < 1 || cfg.k < 2 || cfg.hidden < 1 || cfg.blocks < 0 || cfg.cond_channels < 1) {
    throw std::invalid_argument("prior: invalid configuration");
  }
  if (level == Level::kTop && cond_dim < 1) throw std::invalid_argument("prior: top level needs a condition length");
  if (level == Level::kBottom && (height % 2 || width % 2)) {
    throw std::invalid_argument("prior: bottom grid must be twice the top grid");
  }
  if (level == Level::kBottom) cond_dim_ = (height / 2) * (width / 2);
  Rng rng(seed);
  const int f = cfg.hidden, cc = cfg.cond_channels;
  embed_ = ps_.xavier("embed", {cfg.k, f}, f, f, rng);
  if (level == Level::kTop) {
    fc_.emplace_back(ps_, "cond.fc0", cond_dim, cfg.fc_hidden, rng);
    fc_.emplace_back(ps_, "cond.fc1", cfg.fc_hidden, cfg.fc_hidden, rng);
    fc_.emplace_back(ps_, "cond.fc2", cfg.fc_hidden, static_cast<int64_t>(cc) * height * width, rng);
  } else {
    cond_embed_ = ps_.xavier("cond.embed", {cfg.k, cc}, cc, cc, rng);
    cond_spatial_.emplace_back(ps_, "cond.spatial0", cc, cc, 3, 1, 1, rng);
    cond_spatial_.emplace_back(ps_, "cond.spatial1", cc, cc, 3, 1, 1, rng);
  }
  input_ = ad::MaskedConv2d(ps_, "input", f, f, 3, ad::MaskType::kA, rng);
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    conv_a_.emplace_back(ps_, p + "conv_a", f, f, 3, ad::MaskType::kB, rng);
    conv_g_.emplace_back(ps_, p + "conv_g", f, f, 3, ad::MaskType::kB, rng);
    cond_a_.emplace_back(ps_, p + "cond_a", cc, f, 1, 1, 0, rng);
    cond_g_.emplace_back(ps_, p + "cond_g", cc, f, 1, 1, 0, rng);
    out_.emplace_back(ps_, p + "out", f, f, 1, 1, 0, rng);
  }
  head1_ = ad::Conv2d(ps_, "head1", f, f, 1, 1, 0, rng);
  head2_ = ad::Conv2d(ps_, "head2", f, cfg.k, 1, 1, 0, rng);
  // Uniform initial predictions: the first loss is exactly ln K.
  std::fill(head2_.weight.data().begin(), head2_.weight.data().end(), 0.0f);
}

Tensor PriorModel::embed_condition(std::span<const float> cond, int n) const {
  const int cc = cfg_.cond_channels;
  if (cond.size() != static_cast<size_t>(n) * cond_dim_) {
    throw ad::ShapeError("prior: expected " + std::to_string(n) + " conditions of length " +
                         std::to_string(cond_dim_) + ", got " + std::to_string(cond.size()) + " values");
  }
  if (level_ == Level::kTop) {
    Tensor c = Tensor::from({n, cond_dim_}, {cond.begin(), cond.end()});
    c = ad::leaky_relu(fc_[0](c));
    c = ad::leaky_relu(fc_[1](c));
    return ad::reshape(fc_[2](c), {n, cc, h_, w_});
  }
  const int h2 = h_ / 2, w2 = w_ / 2;
  std::vector<int32_t> idx(cond.size());
  for (size_t i = 0; i < cond.size(); ++i) {
    idx[i] = static_cast<int32_t>(std::lround(cond[i]));
    if (idx[i] < 0 || idx[i] >= cfg_.k) throw Error("prior: top index out of range in bottom condition");
  }
  Tensor e = ad::embedding(cond_embed_, std::span<const int32_t>(idx));  // [n*h2*w2, cc]
  e = ad::permute(ad::reshape(e, {n, h2, w2, cc}), {0, 3, 1, 2});
  // Unmasked 3x3 stack: each cell also sees its neighbors, so cells whose own
  // code is ambiguous (patch corners) borrow from adjacent codes.
  e = ad::add(e, cond_spatial_[1](ad::leaky_relu(cond_spatial_[0](e))));
  std::vector<int64_t> g;
  g.reserve(static_cast<size_t>(n) * cc * h_ * w_);
  for (int b = 0; b < n; ++b)
    for (int c = 0; c < cc; ++c)
      for (int y = 0; y < h_; ++y)
        for (int x = 0; x < w_; ++x)
          g.push_back((static_cast<int64_t>(b) * cc + c) * h2 * w2 + (y / 2) * w2 + x / 2);
  return ad::reshape(ad::gather(e, g), {n, cc, h_, w_});
}

Tensor PriorModel::trunk(const Tensor& emb, const Tensor& cond) const {
  Tensor x = input_(emb);
  for (int b = 0; b < cfg_.blocks; ++b) {
    Tensor a = ad::add(conv_a_[b](x), cond_a_[b](cond));
    Tensor g = ad::add(conv_g_[b](x), cond_g_[b](cond));
    x = ad::add(x, out_[b](ad::mul(ad::tanh(a), ad::sigmoid(g))));
  }
  return head2_(ad::leaky_relu(head1_(ad::leaky_relu(x))));
}

Tensor PriorModel::logits(std::span<const int32_t> indices, std::span<const float> cond, int n) const {
  const int64_t hw = static_cast<int64_t>(h_) * w_;
  if (static_cast<int64_t>(indices.size()) != n * hw) {
    throw ad::ShapeError("prior: expected " + std::to_string(n * hw) + " indices, got " +
                         std::to_string(indices.size()));
  }
  for (int32_t i : indices)
    if (i < 0 || i >= cfg_.k) throw Error("prior: index " + std::to_string(i) + " outside [0, K)");
  Tensor emb = ad::permute(ad::reshape(ad::embedding(embed_, indices), {n, h_, w_, cfg_.hidden}), {0, 3, 1, 2});
  Tensor out = trunk(emb, embed_condition(cond, n));
  return ad::reshape(ad::permute(out, {0, 2, 3, 1}), {n * hw, cfg_.k});
}

Tensor PriorModel::loss(std::span<const int32_t> indices, std::span<const float> cond, int n) const {
  return ad::softmax_cross_entropy(logits(indices, cond, n), indices);
}

namespace {

// Dense view of a (masked) conv layer for single-position evaluation.
struct ConvView {
  const float* w = nullptr;
  const float* b = nullptr;
  int out = 0, in = 0, k = 1;
  std::vector<uint8_t> mask;  // k*k, empty means all taps
};

ConvView view(const Tensor& w, const Tensor& b, std::vector<uint8_t> mask = {}) {
  ConvView v;
  v.w = w.data().data();
  v.b = b.defined() ? b.data().data() : nullptr;
  v.out = static_cast<int>(w.dim(0));
  v.in = static_cast<int>(w.dim(1));
  v.k = static_cast<int>(w.dim(2));
  v.mask = std::move(mask);
  return v;
}

// out[o] = b[o] + sum over taps of w * src at (y, x) of an [in, h, w] map.
void conv_at(const ConvView& v, const std::vector<float>& src, int h, int w, int y, int x, float* out) {
  const int r = v.k / 2;
  for (int o = 0; o < v.out; ++o) out[o] = v.b ? v.b[o] : 0.0f;
  for (int dy = 0; dy < v.k; ++dy) {
    const int yy = y + dy - r;
    if (yy < 0 || yy >= h) continue;
    for (int dx = 0; dx < v.k; ++dx) {
      const int xx = x + dx - r;
      if (xx < 0 || xx >= w) continue;
      if (!v.mask.empty() && !v.mask[dy * v.k + dx]) continue;
      for (int c = 0; c < v.in; ++c) {
        const float s = src[(static_cast<size_t>(c) * h + yy) * w + xx];
        if (s == 0.0f) continue;
        for (int o = 0; o < v.out; ++o) out[o] += v.w[((static_cast<size_t>(o) * v.in + c) * v.k + dy) * v.k + dx] * s;
      }
    }
  }
}

void pointwise(const ConvView& v, const float* in, float* out) {
  for (int o = 0; o < v.out; ++o) {
    float s = v.b ? v.b[o] : 0.0f;
    for (int c = 0; c < v.in; ++c) s += v.w[static_cast<size_t>(o) * v.in + c] * in[c];
    out[o] = s;
  }
}

float lrelu(float v) { return v > 0 ? v : 0.2f * v; }

}  // namespace

std::vector<int32_t> PriorModel::sample(std::span<const float> cond, double temperature, Rng& rng,
                                        std::vector<float>* logits_out) const {
  ad::NoGradGuard ng;
  const int f = cfg_.hidden, k = cfg_.k, h = h_, w = w_;
  const size_t plane = static_cast<size_t>(h) * w;
  Tensor c = embed_condition(cond, 1);
  std::vector<std::vector<float>> ca, cg;
  for (int b = 0; b < cfg_.blocks; ++b) {
    ca.push_back(cond_a_[b](c).data());
    cg.push_back(cond_g_[b](c).data());
  }
  const auto mask_a = ad::causal_mask(3, 3, ad::MaskType::kA), mask_b = ad::causal_mask(3, 3, ad::MaskType::kB);
  const ConvView in_v = view(input_.weight, input_.bias, mask_a);
  std::vector<ConvView> av, gv, ov;
  for (int b = 0; b < cfg_.blocks; ++b) {
    av.push_back(view(conv_a_[b].weight, conv_a_[b].bias, mask_b));
    gv.push_back(view(conv_g_[b].weight, conv_g_[b].bias, mask_b));
    ov.push_back(view(out_[b].weight, out_[b].bias));
  }
  const ConvView h1 = view(head1_.weight, head1_.bias), h2 = view(head2_.weight, head2_.bias);

  std::vector<float> emb(f * plane, 0.0f);
  std::vector<std::vector<float>> xs(cfg_.blocks + 1, std::vector<float>(f * plane, 0.0f));
  std::vector<float> col(f), a(f), g(f), gated(f), o(f), t1(f), t2(f), lg(k);
  std::vector<int32_t> out(plane);
  if (logits_out) logits_out->assign(plane * k, 0.0f);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const float* table = embed_.data().data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t p = static_cast<size_t>(y) * w + x;
      conv_at(in_v, emb, h, w, y, x, col.data());
      for (int ch = 0; ch < f; ++ch) xs[0][ch * plane + p] = col[ch];
      for (int b = 0; b < cfg_.blocks; ++b) {
        conv_at(av[b], xs[b], h, w, y, x, a.data());
        conv_at(gv[b], xs[b], h, w, y, x, g.data());
        for (int ch = 0; ch < f; ++ch) {
          const float aa = a[ch] + ca[b][ch * plane + p], gg = g[ch] + cg[b][ch * plane + p];
          gated[ch] = std::tanh(aa) * (1.0f / (1.0f + std::exp(-gg)));
        }
        pointwise(ov[b], gated.data(), o.data());
        for (int ch = 0; ch < f; ++ch) xs[b + 1][ch * plane + p] = xs[b][ch * plane + p] + o[ch];
      }
      for (int ch = 0; ch < f; ++ch) t1[ch] = lrelu(xs[cfg_.blocks][ch * plane + p]);
      pointwise(h1, t1.data(), t2.data());
      for (int ch = 0; ch < f; ++ch) t2[ch] = lrelu(t2[ch]);
      pointwise(h2, t2.data(), lg.data());
      if (logits_out) std::copy(lg.begin(), lg.end(), logits_out->begin() + p * k);

      int32_t pick = 0;
      if (temperature <= 0) {
        for (int i = 1; i < k; ++i)
          if (lg[i] > lg[pick]) pick = i;
      } else {
        const float mx = *std::max_element(lg.begin(), lg.end());
        std::vector<double> pr(k);
        double total = 0;
        for (int i = 0; i < k; ++i) total += pr[i] = std::exp((lg[i] - mx) / temperature);
        double r = u(rng) * total;
        pick = k - 1;
        for (int i = 0; i < k; ++i) {
          r -= pr[i];
          if (r < 0) {
            pick = i;
            break;
          }
        }
      }
      out[p] = pick;
      for (int ch = 0; ch < f; ++ch) emb[ch * plane + p] = table[static_cast<size_t>(pick) * f + ch];
    }
  return out;
}

void PriorModel::save(ad::Checkpoint& ck, const std::string& prefix) const {
  ck.meta["prior"][prefix] = {{"level", level_ == Level::kTop ? "top" : "bottom"},
                              {"config", cfg_.to_json()},
                              {"height", h_},
                              {"width", w_},
                              {"cond_dim", cond_dim_}};
  ck.put_params(ps_, prefix);
}

PriorModel PriorModel::load(const ad::Checkpoint& ck, const std::string& prefix) {
  if (!ck.meta.contains("prior") || !ck.meta["prior"].contains(prefix)) {
    throw Error("checkpoint has no prior '" + prefix + "'");
  }
  const auto& m = ck.meta["prior"][prefix];
  PriorModel p(m.at("level") == "top" ? Level::kTop : Level::kBottom, PriorConfig::from_json(m.at("config")),
               m.at("height"), m.at("width"), m.at("cond_dim"), 0);
  ck.get_params(p.ps_, prefix);
  return p;
}

PriorTrainReport train_prior(PriorModel& model, const std::vector<PriorSample>& data, const PriorTrainOptions& opt) {
  if (data.empty()) throw Error("train_prior: empty dataset");
  const size_t hw = static_cast<size_t>(model.height()) * model.width();
  for (const auto& s : data) {
    if (s.indices.size() != hw) throw ad::ShapeError("train_prior: index grid size mismatch");
    for (int32_t i : s.indices)
      if (i < 0 || i >= model.config().k) throw Error("train_prior: index " + std::to_string(i) + " outside [0, K)");
    if (s.cond.size() != static_cast<size_t>(model.cond_dim())) throw ad::ShapeError("train_prior: condition length mismatch");
  }
  Rng rng(opt.seed);
  std::uniform_int_distribution<size_t> pick(0, data.size() - 1);
  ad::AdamState state;
  ad::AdamOptions adam;
  adam.lr = opt.lr;
  PriorTrainReport rep;
  std::deque<double> window;
  double wsum = 0;
  for (int it = 0; it < opt.iterations; ++it) {
    std::vector<int32_t> idx;
    std::vector<float> cond;
    for (int b = 0; b < opt.batch; ++b) {
      const auto& s = data[pick(rng)];
      idx.insert(idx.end(), s.indices.begin(), s.indices.end());
      cond.insert(cond.end(), s.cond.begin(), s.cond.end());
    }
    Tensor loss = model.loss(idx, cond, opt.batch);
    ad::backward(loss);
    ad::adam_step(model.params(), state, adam);
    rep.loss.push_back(loss.item());
    window.push_back(loss.item());
    wsum += loss.item();
    if (window.size() > 50) {
      wsum -= window.front();
      window.pop_front();
    }
    if (opt.log && opt.log_every > 0 && it % opt.log_every == 0) {
      std::ostringstream os;
      os << "prior it " << it << " loss " << loss.item();
      opt.log(os.str());
    }
    if (opt.stop_loss > 0 && window.size() == 50 && wsum / 50 < opt.stop_loss) break;
  }
  return rep;
}

std::vector<float> seed_feature(const tvae::TextureVAE& vae, const IndexMatrices& im) {
  const auto& cb = vae.top_codebook;
  if (!vae.trained) throw Error("seed_feature: texture VAE is untrained (run training stage 3)");
  if (im.top.empty()) throw Error("seed_feature: empty index matrices");
  std::vector<double> acc(cb.d, 0.0);
  const auto rows = vq::lookup(im.top, cb);
  for (size_t i = 0; i < im.top.size(); ++i)
    for (int j = 0; j < cb.d; ++j) acc[j] += rows[i * cb.d + j];
  std::vector<float> out(cb.d);
  for (int j = 0; j < cb.d; ++j) out[j] = static_cast<float>(acc[j] / im.top.size());
  return out;
}

std::vector<float> seed_feature(const tvae::TextureVAE& vae, const atlas::AtlasImage& img,
                                const atlas::AtlasLayout& layout) {
  return seed_feature(vae, tvae::encode_atlas(vae, img, layout));
}

std::vector<float> raw_condition(std::span<const float> z_p, std::span<const float> seed_feature) {
  std::vector<float> v(z_p.begin(), z_p.end());
  v.insert(v.end(), seed_feature.begin(), seed_feature.end());
  return v;
}

}  // namespace partex::prior
