#include <cmath>
#include <set>

#include "doctest.h"
#include "partex/geom_vae.hpp"
#include "support/fixtures.hpp"

using namespace partex;
using namespace partex::gvae;
using ad::Tensor;

namespace {

std::vector<float> random_gv(int grid_n, Rng& rng, double amp) {
  auto box = geom::template_box(grid_n);
  geom::DeformedBox db = geom::undeformed(box);
  std::uniform_real_distribution<double> u(-1, 1);
  const double a = u(rng), b = u(rng), c = u(rng);
  for (size_t i = 0; i < db.displacements.size(); ++i) {
    const Vec3& p = box->vertices[i];
    db.displacements[i] = amp * Vec3(a * p.y() * p.y(), b * p.x() * p.z(), c * p.x());
  }
  auto gv = geom::geometry_vector(db);
  return {gv.values.begin(), gv.values.end()};
}

// Chairs built from `labels`, with slot boxes jittered per shape.
std::vector<ShapeSample> chair_set(const std::vector<std::string>& labels, int count, uint64_t seed) {
  const Category& cat = category("chair");
  Rng rng(seed);
  std::uniform_real_distribution<double> jit(-0.02, 0.02);
  std::vector<ShapeSample> out;
  for (int s = 0; s < count; ++s) {
    ShapeSample sh;
    std::vector<Aabb> boxes;
    for (const auto& l : labels) {
      const int slot = cat.slot_index(l);
      Aabb b;
      const Vec3 c(0.1 * slot + jit(rng), 0.05 * slot, jit(rng));
      b.expand(c - Vec3(0.1, 0.2, 0.1));
      b.expand(c + Vec3(0.1, 0.2, 0.1));
      boxes.push_back(b);
      sh.parts.push_back({l, random_gv(4, rng, 0.1)});
      sh.bounds.expand(b);
    }
    sh.structure = structure_code(cat, labels, boxes);
    out.push_back(sh);
  }
  return out;
}

bool watertight(const geom::PartMesh& m) {
  std::map<std::pair<int, int>, int> edges;
  for (const auto& f : m.faces)
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      edges[{std::min(a, b), std::max(a, b)}]++;
    }
  for (const auto& [e, n] : edges)
    if (n != 2) return false;
  return true;
}

const std::vector<std::string> kSixParts = {"back", "seat", "leg_front_left", "leg_front_right", "leg_back_left",
                                            "leg_back_right"};

}  // namespace

TEST_CASE("KL of the standard normal is zero") {
  Tensor m = Tensor::zeros({3, 4}), lv = Tensor::zeros({3, 4});
  CHECK(kl_divergence(m, lv).item() == 0.0f);
  Tensor m2 = Tensor::from({1, 1}, {1.0f}), lv2 = Tensor::from({1, 1}, {0.0f});
  CHECK(kl_divergence(m2, lv2).item() == doctest::Approx(0.5));
  CHECK_THROWS_AS(kl_divergence(m, Tensor::zeros({3, 5})), ad::ShapeError);
}

TEST_CASE("KL gradient matches finite differences") {
  using D = ad::BasicTensor<double>;
  Rng rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> mv(6), lv(6);
  for (auto& v : mv) v = u(rng);
  for (auto& v : lv) v = u(rng);
  auto value = [](const std::vector<double>& m, const std::vector<double>& l) {
    double s = 0;
    for (size_t i = 0; i < m.size(); ++i) s += 0.5 * (m[i] * m[i] + std::exp(l[i]) - 1 - l[i]);
    return s / 2;  // two rows
  };
  D m = D::from({2, 3}, mv, true), l = D::from({2, 3}, lv, true);
  ad::backward(kl_divergence(m, l));
  const double h = 1e-3;
  for (int i = 0; i < 6; ++i) {
    auto mp = mv, mm = mv, lp = lv, lm = lv;
    mp[i] += h;
    mm[i] -= h;
    lp[i] += h;
    lm[i] -= h;
    const double fm = (value(mp, lv) - value(mm, lv)) / (2 * h);
    const double fl = (value(mv, lp) - value(mv, lm)) / (2 * h);
    CHECK(std::abs(m.grad()[i] - fm) / (std::abs(fm) + 1e-6) < 1e-3);
    CHECK(std::abs(l.grad()[i] - fl) / (std::abs(fl) + 1e-6) < 1e-3);
  }
}

TEST_CASE("PartVAE encode contracts") {
  FcVAE vae(294, 64, 16, 3);
  std::vector<float> zero(294, 0.0f);
  GeomLatent a = vae.encode(zero);
  CHECK(a.mean.size() == 16);
  for (float v : a.mean) CHECK(std::isfinite(v));
  CHECK(a.sample == a.mean);
  Rng r1(9), r2(9);
  GeomLatent b = vae.encode(zero, &r1), c = vae.encode(zero, &r2);
  CHECK(b.sample == c.sample);
  CHECK(b.eps == c.eps);
  for (int j = 0; j < 16; ++j) CHECK(b.sample[j] == b.mean[j] + std::exp(0.5f * b.logvar[j]) * b.eps[j]);
  CHECK(vae.decode(a.mean) == vae.decode(a.mean));
  CHECK(vae.decode(a.mean).size() == 294);
  CHECK_THROWS_AS(vae.encode(std::vector<float>(293)), ad::ShapeError);
  CHECK_THROWS_AS(vae.decode(std::vector<float>(15)), ad::ShapeError);
}

TEST_CASE("PartVAE overfits 8 parts") {
  Rng rng(2);
  std::vector<std::vector<float>> data;
  for (int i = 0; i < 8; ++i) data.push_back(random_gv(4, rng, 0.15));
  FcVAE vae(294, 64, 16, 4);
  VaeTrainOptions opt;
  opt.iterations = 1500;
  opt.batch = 8;
  opt.lr = 2e-3;
  auto rep = train_vae(vae, data, opt);
  double first = 0, last = 0;
  for (int i = 0; i < 50; ++i) {
    first += rep.loss[i];
    last += rep.loss[rep.loss.size() - 1 - i];
  }
  CHECK(last < first);
  double worst = 0;
  for (const auto& gv : data) {
    auto rec = vae.decode(vae.encode(gv).mean);
    double s = 0;
    for (size_t j = 0; j < gv.size(); ++j) s += (rec[j] - gv[j]) * (rec[j] - gv[j]);
    worst = std::max(worst, std::sqrt(s / gv.size()));
  }
  CHECK(worst < 0.05);
  CHECK_THROWS_AS(train_vae(vae, {}, opt), Error);
}

TEST_CASE("loss moving average decreases over 1k iterations") {
  Rng rng(5);
  std::vector<std::vector<float>> data;
  for (int i = 0; i < 32; ++i) data.push_back(random_gv(4, rng, 0.15));
  FcVAE vae(294, 64, 16, 6);
  VaeTrainOptions opt;
  opt.iterations = 1000;
  auto rep = train_vae(vae, data, opt);
  std::vector<double> avg;
  for (int w = 0; w < 4; ++w) {
    double s = 0;
    for (int i = 250 * w; i < 250 * (w + 1); ++i) s += rep.loss[i];
    avg.push_back(s / 250);
  }
  for (int w = 1; w < 4; ++w) CHECK(avg[w] < avg[w - 1]);
}

TEST_CASE("SP-VAE requires PartVAEs") {
  GeomModels m(category("chair"));
  auto shapes = chair_set(kSixParts, 4, 1);
  CHECK_THROWS_WITH_AS(train_spvae(m, shapes, {}), doctest::Contains("stage 1"), Error);
  Rng rng(0);
  CHECK_THROWS_AS(m.sample_shape(rng), Error);
}

TEST_CASE("SP-VAE round trip, sampling and interpolation endpoints") {
  const Category& cat = category("chair");
  GeomModels m(cat);
  auto six = chair_set(kSixParts, 8, 2);
  VaeTrainOptions popt;
  popt.iterations = 600;
  popt.batch = 8;
  popt.lr = 2e-3;
  train_partvaes(m, six, popt);
  CHECK(m.part_vaes.size() == 6);
  VaeTrainOptions sopt = popt;
  sopt.iterations = 1500;
  train_spvae(m, six, sopt);
  CHECK(m.spvae.latent_dim() == 32);
  CHECK(m.shape_input_dim() == 8 * (16 + 7));

  for (const auto& s : six) {
    std::map<std::string, std::vector<float>> lat;
    for (const auto& p : s.parts) lat[p.label] = m.partvae_encode(p.label, p.geometry).mean;
    auto dec = m.spvae_decode(m.spvae_encode(lat, s.structure).mean);
    for (size_t k = 0; k < cat.slots.size(); ++k) CHECK(dec.structure.slots[k].exists == s.structure.slots[k].exists);
  }

  Rng a(77), b(77);
  auto s1 = m.sample_shape(a), s2 = m.sample_shape(b);
  CHECK(s1.spec.parts == s2.spec.parts);
  CHECK(s1.z == s2.z);
  CHECK(s1.spec.parts.size() == 6);
  for (size_t i = 0; i < s1.boxes.size(); ++i) {
    CHECK(s1.boxes[i].positions() == s2.boxes[i].positions());
    CHECK(watertight(s1.boxes[i].to_mesh()));
  }

  // Latent lerp endpoints decode to the endpoints exactly.
  Rng c(3);
  auto z0 = m.sample_shape(c).z, z1 = m.sample_shape(c).z;
  for (float t : {0.0f, 1.0f}) {
    std::vector<float> zt(z0.size());
    for (size_t i = 0; i < zt.size(); ++i) zt[i] = (1 - t) * z0[i] + t * z1[i];
    CHECK(m.spvae.decode(zt) == m.spvae.decode(t == 0 ? z0 : z1));
  }

  ad::Checkpoint ck;
  m.save(ck);
  GeomModels back = GeomModels::load(ck);
  CHECK(back.part_vaes.size() == 6);
  Rng d(77);
  CHECK(back.sample_shape(d).spec.parts == s1.spec.parts);
  CHECK_THROWS_AS(m.shape_input({}, StructureCode{}), Error);
  CHECK_THROWS_AS(m.shape_input({{"wing", std::vector<float>(16)}}, six[0].structure), Error);
}

TEST_CASE("SP-VAE learns an all-absent structure") {
  const Category& cat = category("chair");
  GeomModels m(cat);
  auto six = chair_set(kSixParts, 6, 4);
  VaeTrainOptions opt;
  opt.iterations = 300;
  opt.batch = 8;
  opt.lr = 2e-3;
  train_partvaes(m, six, opt);
  std::vector<ShapeSample> data = six;
  ShapeSample empty;
  empty.structure.slots.resize(cat.slots.size());
  empty.bounds = six[0].bounds;
  data.push_back(empty);
  opt.iterations = 1500;
  train_spvae(m, data, opt);
  auto dec = m.spvae_decode(m.spvae_encode({}, empty.structure).mean);
  for (const auto& s : dec.structure.slots) CHECK(s.exists == 0.0f);
  CHECK(dec.part_latents.empty());
}
