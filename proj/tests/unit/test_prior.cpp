#include <cmath>

#include "doctest.h"
#include "partex/prior.hpp"
#include "support/fixtures.hpp"

using namespace partex;
using namespace partex::prior;
using ad::Tensor;

namespace {

PriorConfig small() {
  PriorConfig c;
  c.k = 16;
  c.hidden = 16;
  c.blocks = 2;
  c.cond_channels = 4;
  c.fc_hidden = 16;
  return c;
}

std::vector<int32_t> random_grid(int n, int k, Rng& rng) {
  std::uniform_int_distribution<int> u(0, k - 1);
  std::vector<int32_t> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<float> random_cond(int n, Rng& rng) {
  std::normal_distribution<float> g;
  std::vector<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// Perturbs weights off their init so logits depend on every input.
void jitter(PriorModel& m, uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> g(0.0f, 0.3f);
  for (const auto& name : m.params().names())
    for (auto& v : m.params().get(name).data()) v += g(rng);
}

}  // namespace

TEST_CASE("initial loss is ln K") {
  PriorModel m(Level::kTop, small(), 6, 4, 5, 1);
  Rng rng(2);
  auto idx = random_grid(2 * 24, 16, rng);
  auto cond = random_cond(10, rng);
  CHECK(m.loss(idx, cond, 2).item() == doctest::Approx(std::log(16.0)).epsilon(0.05));
  Tensor lg = m.logits(idx, cond, 2);
  CHECK(lg.shape() == ad::Shape{48, 16});
}

TEST_CASE("fused condition shape and determinism") {
  PriorModel m(Level::kTop, small(), 48, 8, 20, 3);
  std::vector<float> zero(20, 0.0f);
  Tensor a = m.embed_condition(zero, 1), b = m.embed_condition(zero, 1);
  CHECK(a.shape() == ad::Shape{1, 4, 48, 8});
  CHECK(a.data() == b.data());
  CHECK_THROWS_AS(m.embed_condition(std::vector<float>(19), 1), ad::ShapeError);

  PriorModel bot(Level::kBottom, small(), 12, 4, 0, 3);
  CHECK(bot.cond_dim() == 12);
  std::vector<float> top(12);
  for (int i = 0; i < 12; ++i) top[i] = static_cast<float>(i);
  Tensor c = bot.embed_condition(top, 1);
  CHECK(c.shape() == ad::Shape{1, 4, 12, 4});
  // Nearest upsampling: every 2x2 block repeats its source cell.
  const auto& d = c.data();
  for (int ch = 0; ch < 4; ++ch)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 4; ++x) CHECK(d[(ch * 12 + y) * 4 + x] == d[(ch * 12 + (y / 2) * 2) * 4 + (x / 2) * 2]);
  top[0] = 16.0f;
  CHECK_THROWS_AS(bot.embed_condition(top, 1), Error);
  CHECK_THROWS_AS(PriorModel(Level::kBottom, small(), 5, 4, 0, 0), std::invalid_argument);
}

TEST_CASE("logits are causal in raster order") {
  PriorModel m(Level::kTop, small(), 5, 4, 3, 4);
  jitter(m, 5);
  Rng rng(6);
  auto idx = random_grid(20, 16, rng);
  auto cond = random_cond(3, rng);
  const auto base = m.logits(idx, cond, 1).data();
  for (int p = 0; p < 20; ++p) {
    auto alt = idx;
    alt[p] = (alt[p] + 7) % 16;
    const auto changed = m.logits(alt, cond, 1).data();
    for (int q = 0; q <= p; ++q)
      for (int k = 0; k < 16; ++k) CHECK(changed[q * 16 + k] == base[q * 16 + k]);
    bool later = false;
    for (size_t i = (p + 1) * 16; i < changed.size(); ++i) later |= changed[i] != base[i];
    if (p < 19) CHECK(later);
  }
}

TEST_CASE("incremental sampling matches teacher forcing") {
  for (Level lv : {Level::kTop, Level::kBottom}) {
    PriorModel m(lv, small(), 8, 4, 6, 7);
    jitter(m, 8);
    Rng rng(9);
    std::vector<float> cond;
    if (lv == Level::kTop) {
      cond = random_cond(6, rng);
    } else {
      for (int32_t v : random_grid(8, 16, rng)) cond.push_back(static_cast<float>(v));
    }
    Rng s(10);
    std::vector<float> inc;
    auto idx = m.sample(cond, 1.0, s, &inc);
    const auto tf = m.logits(idx, cond, 1).data();
    REQUIRE(inc.size() == tf.size());
    double worst = 0;
    for (size_t i = 0; i < tf.size(); ++i) worst = std::max(worst, std::abs(double(inc[i]) - tf[i]));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("greedy decoding is deterministic and seeds differ") {
  PriorModel m(Level::kTop, small(), 8, 8, 4, 11);
  jitter(m, 12);
  std::vector<float> cond(4, 0.5f);
  Rng a(1), b(2);
  CHECK(m.sample(cond, 0.0, a) == m.sample(cond, -1.0, b));
  Rng c(3), d(4);
  auto x = m.sample(cond, 1.0, c), y = m.sample(cond, 1.0, d);
  int ham = 0;
  for (size_t i = 0; i < x.size(); ++i) ham += x[i] != y[i];
  CHECK(ham > 0);
  Rng e(3);
  CHECK(m.sample(cond, 1.0, e) == x);
  CHECK_THROWS_AS(m.sample(std::vector<float>(3), 1.0, e), ad::ShapeError);
}

TEST_CASE("condition FC receives gradients") {
  PriorModel m(Level::kTop, small(), 4, 4, 3, 13);
  jitter(m, 14);
  Rng rng(15);
  auto idx = random_grid(16, 16, rng);
  ad::backward(m.loss(idx, random_cond(3, rng), 1));
  for (const char* name : {"cond.fc0.weight", "cond.fc2.weight", "embed", "head2.weight"}) {
    REQUIRE(m.params().has(name));
    double s = 0;
    for (float g : m.params().get(name).grad()) s += std::abs(g);
    CHECK_MESSAGE(s > 0, name);
  }
}

TEST_CASE("training fits a constant grid and sampling reproduces it") {
  PriorModel m(Level::kTop, small(), 6, 4, 2, 16);
  std::vector<PriorSample> data(4);
  for (auto& s : data) {
    s.indices.assign(24, 5);
    s.cond = {0.1f, -0.2f};
  }
  PriorTrainOptions opt;
  opt.iterations = 2000;
  opt.batch = 4;
  opt.lr = 2e-3;
  opt.stop_loss = 0.05;
  auto rep = train_prior(m, data, opt);
  double last = 0;
  const size_t n = std::min<size_t>(50, rep.loss.size());
  for (size_t i = rep.loss.size() - n; i < rep.loss.size(); ++i) last += rep.loss[i];
  CHECK(last / n < 0.1);
  Rng rng(17);
  auto s = m.sample(data[0].cond, 0.5, rng);
  int hits = 0;
  for (int32_t v : s) hits += v == 5;
  CHECK(hits >= 0.95 * s.size());

  data[1].indices[3] = 16;
  CHECK_THROWS_AS(train_prior(m, data, opt), Error);
  CHECK_THROWS_AS(train_prior(m, {}, opt), Error);
}

TEST_CASE("seeded training is bit-identical and checkpoints round trip") {
  auto run = [] {
    PriorModel m(Level::kBottom, small(), 8, 4, 0, 18);
    std::vector<PriorSample> data;
    Rng rng(19);
    for (int i = 0; i < 3; ++i) {
      PriorSample s;
      s.indices = random_grid(32, 16, rng);
      for (int32_t v : random_grid(8, 16, rng)) s.cond.push_back(static_cast<float>(v));
      data.push_back(s);
    }
    PriorTrainOptions opt;
    opt.iterations = 5;
    opt.batch = 2;
    opt.seed = 3;
    train_prior(m, data, opt);
    return std::make_pair(m, data);
  };
  auto [a, da] = run();
  auto [b, db] = run();
  CHECK(a.logits(da[0].indices, da[0].cond, 1).data() == b.logits(db[0].indices, db[0].cond, 1).data());

  ad::Checkpoint ck;
  a.save(ck, "prior.bottom");
  PriorModel back = PriorModel::load(ck, "prior.bottom");
  CHECK(back.level() == Level::kBottom);
  CHECK(back.logits(da[0].indices, da[0].cond, 1).data() == a.logits(da[0].indices, da[0].cond, 1).data());
  CHECK_THROWS_AS(PriorModel::load(ck, "prior.top.seat"), Error);
}

TEST_CASE("seed feature and raw condition") {
  tvae::TextureVAE vae(tvae::TextureVAEConfig::desk(), 1);
  IndexMatrices im;
  im.top_grid = 2;
  im.top.assign(24, 3);
  CHECK_THROWS_WITH_AS(seed_feature(vae, im), doctest::Contains("untrained"), Error);
  vae.trained = true;
  auto f = seed_feature(vae, im);
  REQUIRE(f.size() == static_cast<size_t>(vae.top_codebook.d));
  for (int j = 0; j < vae.top_codebook.d; ++j) CHECK(f[j] == vae.top_codebook.entries[3 * vae.top_codebook.d + j]);
  im.top[0] = 4;
  auto g = seed_feature(vae, im);
  CHECK(g != f);
  CHECK(seed_feature(vae, im) == g);
  CHECK_THROWS_AS(seed_feature(vae, IndexMatrices{}), Error);

  std::vector<float> z = {1, 2};
  CHECK(raw_condition(z) == z);
  CHECK(raw_condition(z, std::vector<float>{3}) == std::vector<float>{1, 2, 3});
}

TEST_CASE("seed feature separates solid red from solid blue") {
  auto solid = [](float r, float g, float b) {
    atlas::AtlasImage img = atlas::blank_atlas(64);
    for (int i = 0; i < img.pixels.width * img.pixels.height; ++i) {
      float* p = img.pixels.data.data() + 4 * i;
      p[0] = r;
      p[1] = g;
      p[2] = b;
      p[3] = 1;
    }
    return img;
  };
  auto lay = atlas::build_layout(64, 4);
  auto red = solid(1, 0, 0), blue = solid(0, 0, 1);
  tvae::PatchDataset data;
  data.add_atlas(red, lay);
  data.add_atlas(blue, lay);
  tvae::TextureVAE vae(tvae::TextureVAEConfig::desk(), 2);
  tvae::TrainOptions opt;
  opt.iterations = 60;
  opt.batch = 4;
  tvae::train_texturevae(vae, data, opt);
  REQUIRE(vae.trained);
  auto fr = seed_feature(vae, red, lay), fb = seed_feature(vae, blue, lay);
  CHECK(seed_feature(vae, red, lay) == fr);
  double d2 = 0;
  for (size_t j = 0; j < fr.size(); ++j) d2 += (fr[j] - fb[j]) * (fr[j] - fb[j]);
  CHECK(std::sqrt(d2) > 0);
}
