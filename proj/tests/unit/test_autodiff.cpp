#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "partex/autodiff/checkpoint.hpp"
#include "partex/autodiff/gradcheck.hpp"
#include "partex/autodiff/optim.hpp"
#include "support/fixtures.hpp"

using namespace partex;
using namespace partex::ad;

TEST_CASE("sum has unit gradient") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(x));
  for (float g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("stop_gradient blocks its input") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tensor y = Tensor::from({3}, {4, 5, 6}, true);
  backward(sum(mul(stop_gradient(x), y)));
  CHECK(x.grad().empty());
  CHECK(y.grad() == std::vector<float>{1, 2, 3});
}

TEST_CASE("every op passes the finite-difference check") {
  Rng rng(2024);
  for (const auto& op : gradcheck_ops()) {
    CAPTURE(op);
    CHECK(grad_check(op, {}, rng) < 1e-3);
  }
}

TEST_CASE("conv2d on 1x4x8x8 with a 3x3 kernel") {
  Rng rng(1);
  CHECK(grad_check("conv2d", {{1, 4, 8, 8}, {3, 4, 3, 3}, {3}}, rng) < 1e-3);
}

TEST_CASE("leaky relu away from the kink") {
  Rng rng(2);
  CHECK(grad_check("leaky_relu", {{6, 7}}, rng) < 1e-4);
}

TEST_CASE("grad_check rejects unknown ops") {
  Rng rng(0);
  CHECK_THROWS_AS(grad_check("no_such_op", {}, rng), Error);
}

TEST_CASE("masked conv type A gives masked weights exactly zero gradient") {
  Rng rng(3);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> xv(2 * 3 * 6 * 6), wv(4 * 3 * 5 * 5);
  for (auto& v : xv) v = u(rng);
  for (auto& v : wv) v = u(rng);
  for (MaskType type : {MaskType::kA, MaskType::kB}) {
    Tensor x = Tensor::from({2, 3, 6, 6}, xv, true);
    Tensor w = Tensor::from({4, 3, 5, 5}, wv, true);
    backward(sum(masked_conv2d(x, w, Tensor(), type)));
    const auto mask = causal_mask(5, 5, type);
    CHECK(mask[12] == (type == MaskType::kB));
    for (size_t i = 0; i < w.grad().size(); ++i) {
      if (!mask[i % 25]) CHECK(w.grad()[i] == 0.0f);
    }
  }
}

TEST_CASE("masked conv is causal in raster order") {
  const int h = 5, w = 6;
  Rng rng(4);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> wv(2 * 2 * 3 * 3), xv(2 * h * w);
  for (auto& v : wv) v = u(rng);
  for (auto& v : xv) v = u(rng);
  Tensor wt = Tensor::from({2, 2, 3, 3}, wv);
  for (MaskType type : {MaskType::kA, MaskType::kB}) {
    NoGradGuard ng;
    Tensor base = masked_conv2d(Tensor::from({1, 2, h, w}, xv), wt, Tensor(), type);
    for (int j = 0; j < h * w; ++j) {
      auto xp = xv;
      xp[j] += 1.0f;
      xp[h * w + j] -= 0.5f;
      Tensor pert = masked_conv2d(Tensor::from({1, 2, h, w}, xp), wt, Tensor(), type);
      for (int o = 0; o < 2; ++o)
        for (int i = 0; i < h * w; ++i) {
          const bool may_change = type == MaskType::kA ? i > j : i >= j;
          if (!may_change) CHECK(pert.data()[o * h * w + i] == base.data()[o * h * w + i]);
        }
    }
  }
}

TEST_CASE("shape errors name the op and shapes") {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({3, 2});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add: shape mismatch [2, 3] vs [3, 2]"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, a), doctest::Contains("matmul"), ShapeError);
  CHECK_THROWS_AS(backward(a), ShapeError);
}

TEST_CASE("conv output shapes") {
  NoGradGuard ng;
  Tensor x = Tensor::zeros({2, 4, 64, 64});
  Rng rng(0);
  ParamStore ps;
  Conv2d down(ps, "d", 4, 8, 4, 2, 1, rng);
  ConvTranspose2d up(ps, "u", 8, 4, 4, 2, 1, rng);
  Tensor y = down(x);
  CHECK(y.shape() == Shape{2, 8, 32, 32});
  CHECK(up(y).shape() == Shape{2, 4, 64, 64});
}

TEST_CASE("xavier init bounds and zero biases") {
  Rng rng(5);
  ParamStore ps;
  Linear fc(ps, "fc", 30, 20, rng);
  const float a = std::sqrt(6.0f / 50.0f);
  for (float v : fc.weight.data()) CHECK(std::abs(v) <= a);
  for (float v : fc.bias.data()) CHECK(v == 0.0f);
  CHECK(ps.size() == 2);
  CHECK(ps.total_numel() == 620);
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  ParamStore ps;
  Tensor& p = ps.add("p", Tensor::from({3}, {1, -2, 3}));
  p.mutable_grad().assign(3, 0.0f);
  AdamState st;
  adam_step(ps, st, {});
  CHECK(p.data() == std::vector<float>{1, -2, 3});
}

TEST_CASE("adam minimizes a 1-D quadratic") {
  ParamStore ps;
  Tensor& x = ps.add("x", Tensor::from({1}, {0.0f}));
  AdamState st;
  AdamOptions opt;
  opt.lr = 0.1;
  for (int i = 0; i < 500; ++i) {
    Tensor d = shift(x, -3.0f);
    backward(sum(mul(d, d)));
    adam_step(ps, st, opt);
  }
  CHECK(std::abs(x.data()[0] - 3.0f) < 1e-2);
}

namespace {

std::vector<float> train_tiny(uint64_t seed) {
  Rng rng(seed);
  ParamStore ps;
  Linear a(ps, "a", 4, 8, rng), b(ps, "b", 8, 1, rng);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> xv(16 * 4), yv(16);
  for (auto& v : xv) v = u(rng);
  for (auto& v : yv) v = u(rng);
  Tensor x = Tensor::from({16, 4}, xv), y = Tensor::from({16, 1}, yv);
  AdamState st;
  for (int i = 0; i < 50; ++i) {
    backward(mse_loss(b(leaky_relu(a(x))), y));
    adam_step(ps, st, {});
  }
  std::vector<float> out;
  for (const auto& n : ps.names()) out.insert(out.end(), ps.get(n).data().begin(), ps.get(n).data().end());
  return out;
}

}  // namespace

TEST_CASE("training is bit-identical under equal seeds") {
  CHECK(train_tiny(77) == train_tiny(77));
  CHECK(train_tiny(77) != train_tiny(78));
}

TEST_CASE("checkpoint round trip") {
  auto dir = fixtures::temp_dir("ckpt");
  Rng rng(6);
  ParamStore ps;
  Conv2d c(ps, "conv", 3, 5, 3, 1, 1, rng);
  Checkpoint ck;
  ck.meta["profile"] = "desk";
  ck.put_params(ps, "tvae.");
  ck.put("top.codebook", {2, 3}, {1, 2, 3, 4, 5, 6});
  ck.save((dir / "a.ckpt").string());
  Checkpoint back = Checkpoint::load((dir / "a.ckpt").string());
  CHECK(back.meta["profile"] == "desk");
  CHECK(back.at("top.codebook").data == std::vector<float>{1, 2, 3, 4, 5, 6});
  ParamStore other;
  Rng rng2(99);
  Conv2d c2(other, "conv", 3, 5, 3, 1, 1, rng2);
  back.get_params(other, "tvae.");
  CHECK(other.get("conv.weight").data() == ps.get("conv.weight").data());
  CHECK_THROWS_AS(Checkpoint::load((dir / "missing.ckpt").string()), Error);
  ParamStore wrong;
  Conv2d c3(wrong, "conv", 3, 4, 3, 1, 1, rng2);
  CHECK_THROWS_AS(back.get_params(wrong, "tvae."), ShapeError);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard ng;
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->inputs.empty());
}
