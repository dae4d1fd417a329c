#include "partex/autodiff/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>

namespace partex::ad {

namespace {

using D = BasicTensor<double>;
using Fn = std::function<D(const std::vector<D>&)>;

struct Case {
  std::vector<Shape> default_shapes;
  std::vector<bool> differentiable;  // per input; missing entries count as true
  Fn fn;
  double min_abs = 0.0;              // inputs resampled until |x| >= min_abs
  bool separated_pair = false;       // first two inputs kept >= 0.05 apart (kinks of l1)
};

std::vector<int32_t> random_ints(size_t n, int32_t k, Rng& rng) {
  std::uniform_int_distribution<int32_t> u(0, k - 1);
  std::vector<int32_t> out(n);
  for (auto& v : out) v = u(rng);
  return out;
}

// Integer side inputs are drawn once per check so every forward sees the same values.
std::map<std::string, Case> make_cases(Rng& rng) {
  std::map<std::string, Case> c;
  c["add"] = {{{3, 4}, {3, 4}}, {}, [](const std::vector<D>& x) { return add(x[0], x[1]); }};
  c["sub"] = {{{3, 4}, {3, 4}}, {}, [](const std::vector<D>& x) { return sub(x[0], x[1]); }};
  c["mul"] = {{{3, 4}, {3, 4}}, {}, [](const std::vector<D>& x) { return mul(x[0], x[1]); }};
  c["scale"] = {{{3, 5}}, {}, [](const std::vector<D>& x) { return scale(x[0], 1.7); }};
  c["shift"] = {{{3, 5}}, {}, [](const std::vector<D>& x) { return shift(x[0], -0.3); }};
  c["exp"] = {{{3, 5}}, {}, [](const std::vector<D>& x) { return exp(x[0]); }};
  c["leaky_relu"] = {{{4, 5}}, {}, [](const std::vector<D>& x) { return leaky_relu(x[0], 0.2); }, 0.05};
  c["sigmoid"] = {{{3, 5}}, {}, [](const std::vector<D>& x) { return sigmoid(x[0]); }};
  c["tanh"] = {{{3, 5}}, {}, [](const std::vector<D>& x) { return tanh(x[0]); }};
  c["reshape"] = {{{2, 6}}, {}, [](const std::vector<D>& x) { return reshape(x[0], {x[0].numel()}); }};
  c["permute"] = {{{2, 3, 4}}, {}, [](const std::vector<D>& x) {
                    std::vector<int> perm(x[0].rank());
                    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>((i + 1) % perm.size());
                    return permute(x[0], perm);
                  }};
  c["concat"] = {{{2, 3}, {2, 2}}, {}, [](const std::vector<D>& x) {
                   return concat(x, static_cast<int>(x[0].rank()) - 1);
                 }};
  {
    auto salt = std::make_shared<std::vector<int32_t>>(random_ints(64, 1 << 20, rng));
    c["gather"] = {{{10}}, {}, [salt](const std::vector<D>& x) {
                     std::vector<int64_t> idx;
                     for (size_t i = 0; i < static_cast<size_t>(2 * x[0].numel()); ++i)
                       idx.push_back((*salt)[i % salt->size()] % x[0].numel());
                     return gather(x[0], idx);
                   }};
  }
  c["matmul"] = {{{3, 4}, {4, 5}}, {}, [](const std::vector<D>& x) { return matmul(x[0], x[1]); }};
  c["linear"] = {{{3, 4}, {5, 4}, {5}}, {}, [](const std::vector<D>& x) {
                   return linear(x[0], x[1], x.size() > 2 ? x[2] : D());
                 }};
  c["conv2d"] = {{{1, 4, 8, 8}, {3, 4, 3, 3}, {3}}, {}, [](const std::vector<D>& x) {
                   return conv2d(x[0], x[1], x.size() > 2 ? x[2] : D(), {1, static_cast<int>(x[1].dim(2) / 2)});
                 }};
  c["conv2d_strided"] = {{{2, 3, 8, 8}, {4, 3, 4, 4}, {4}}, {}, [](const std::vector<D>& x) {
                           return conv2d(x[0], x[1], x.size() > 2 ? x[2] : D(), {2, 1});
                         }};
  c["conv_transpose2d"] = {{{2, 3, 4, 4}, {3, 2, 4, 4}, {2}}, {}, [](const std::vector<D>& x) {
                             return conv_transpose2d(x[0], x[1], x.size() > 2 ? x[2] : D(), {2, 1});
                           }};
  c["masked_conv2d_a"] = {{{1, 3, 5, 5}, {4, 3, 3, 3}, {4}}, {}, [](const std::vector<D>& x) {
                            return masked_conv2d(x[0], x[1], x.size() > 2 ? x[2] : D(), MaskType::kA);
                          }};
  c["masked_conv2d_b"] = {{{1, 3, 5, 5}, {4, 3, 3, 3}, {4}}, {}, [](const std::vector<D>& x) {
                            return masked_conv2d(x[0], x[1], x.size() > 2 ? x[2] : D(), MaskType::kB);
                          }};
  {
    auto salt = std::make_shared<std::vector<int32_t>>(random_ints(64, 1 << 20, rng));
    c["embedding"] = {{{6, 3}}, {}, [salt](const std::vector<D>& x) {
                        std::vector<int32_t> idx;
                        for (size_t i = 0; i < 8; ++i) idx.push_back((*salt)[i] % static_cast<int32_t>(x[0].dim(0)));
                        return embedding(x[0], idx);
                      }};
    c["softmax_cross_entropy"] = {{{5, 7}}, {}, [salt](const std::vector<D>& x) {
                                    std::vector<int32_t> t;
                                    for (int64_t i = 0; i < x[0].dim(0); ++i)
                                      t.push_back((*salt)[i % salt->size()] % static_cast<int32_t>(x[0].dim(1)));
                                    return softmax_cross_entropy(x[0], t);
                                  }};
  }
  c["l1_loss"] = {{{3, 4}, {3, 4}}, {}, [](const std::vector<D>& x) { return l1_loss(x[0], x[1]); }, 0.0, true};
  c["mse_loss"] = {{{3, 4}, {3, 4}}, {}, [](const std::vector<D>& x) { return mse_loss(x[0], x[1]); }};
  c["sum"] = {{{3, 4}}, {}, [](const std::vector<D>& x) { return sum(x[0]); }};
  c["mean"] = {{{3, 4}}, {}, [](const std::vector<D>& x) { return mean(x[0]); }};
  // Contract ops: input 0 is checked against the contract, input 1 by finite differences.
  c["stop_gradient"] = {{{3, 4}, {3, 4}}, {}, [](const std::vector<D>& x) { return mul(stop_gradient(x[0]), x[1]); }};
  c["straight_through"] = {{{3, 4}, {3, 4}}, {true, false},
                           [](const std::vector<D>& x) { return straight_through(x[0], x[1]); }};
  return c;
}

double loss_value(const Fn& fn, const std::vector<D>& inputs, const D& proj) {
  NoGradGuard ng;
  D out = fn(inputs);
  if (!proj.defined()) return out.item();
  double acc = 0;
  for (size_t i = 0; i < out.data().size(); ++i) acc += out.data()[i] * proj.data()[i];
  return acc;
}

}  // namespace

const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> names = [] {
    Rng r(0);
    std::vector<std::string> out;
    for (const auto& [k, v] : make_cases(r)) out.push_back(k);
    return out;
  }();
  return names;
}

double grad_check(const std::string& op_name, const std::vector<Shape>& shapes, Rng& rng) {
  auto cases = make_cases(rng);
  auto it = cases.find(op_name);
  if (it == cases.end()) throw Error("grad_check: unknown op '" + op_name + "'");
  const Case& cs = it->second;
  const auto& sh = shapes.empty() ? cs.default_shapes : shapes;

  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<D> inputs;
  for (const auto& s : sh) {
    std::vector<double> v(static_cast<size_t>(numel(s)));
    for (auto& x : v) {
      do x = u(rng);
      while (std::abs(x) < cs.min_abs);
    }
    inputs.push_back(D::from(s, std::move(v)));
  }
  if (cs.separated_pair && inputs.size() >= 2) {
    for (size_t i = 0; i < inputs[0].data().size(); ++i) {
      while (std::abs(inputs[0].data()[i] - inputs[1].data()[i]) < 0.05) inputs[1].data()[i] = u(rng);
    }
  }
  auto diff = [&](size_t k) { return k >= cs.differentiable.size() || cs.differentiable[k]; };
  for (size_t k = 0; k < inputs.size(); ++k) inputs[k].set_requires_grad(diff(k));

  D out = cs.fn(inputs);
  D proj;
  D loss = out;
  if (out.numel() != 1 || out.rank() != 0) {
    std::vector<double> w(static_cast<size_t>(out.numel()));
    for (auto& x : w) x = u(rng);
    proj = D::from(out.shape(), std::move(w));
    loss = sum(mul(out, proj));
  }
  backward(loss);

  double worst = 0.0;
  const double h = 1e-3;
  const bool contract = op_name == "stop_gradient" || op_name == "straight_through";
  for (size_t k = 0; k < inputs.size(); ++k) {
    if (!diff(k)) continue;
    std::vector<double> analytic = inputs[k].grad();
    if (analytic.empty()) analytic.assign(inputs[k].data().size(), 0.0);
    if (contract && k == 0) {
      // stop_gradient blocks, straight_through copies the output gradient.
      for (size_t i = 0; i < analytic.size(); ++i) {
        const double expect = op_name == "stop_gradient" ? 0.0 : proj.data()[i];
        if (analytic[i] != expect) return std::numeric_limits<double>::infinity();
      }
      continue;
    }
    auto& data = inputs[k].data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double fp = loss_value(cs.fn, inputs, proj);
      data[i] = orig - h;
      const double fm = loss_value(cs.fn, inputs, proj);
      data[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(analytic[i] - fd) / (std::abs(fd) + 1e-6));
    }
  }
  return worst;
}

}  // namespace partex::ad
