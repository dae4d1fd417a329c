#include "partex/autodiff/nn.hpp"

#include <cmath>
#include <random>

namespace partex::ad {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (has(name)) throw Error("ParamStore: duplicate parameter '" + name + "'");
  t.set_requires_grad(true);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(t));
  return tensors_.back();
}

Tensor& ParamStore::xavier(const std::string& name, Shape shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  std::vector<float> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<float>(u(rng));
  return add(name, Tensor::from(std::move(shape), std::move(v)));
}

Tensor& ParamStore::zeros(const std::string& name, Shape shape) { return add(name, Tensor::zeros(std::move(shape))); }

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("ParamStore: no parameter '" + name + "'");
  return tensors_[it->second];
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("ParamStore: no parameter '" + name + "'");
  return tensors_[it->second];
}

int64_t ParamStore::total_numel() const {
  int64_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

void ParamStore::set_requires_grad(bool r) {
  for (auto& t : tensors_) t.set_requires_grad(r);
}

Linear::Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng)
    : weight(ps.xavier(name + ".weight", {out, in}, in, out, rng)), bias(ps.zeros(name + ".bias", {out})) {}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int64_t in, int64_t out, int k, int stride, int pad, Rng& rng)
    : weight(ps.xavier(name + ".weight", {out, in, k, k}, in * k * k, out * k * k, rng)),
      bias(ps.zeros(name + ".bias", {out})),
      opt{stride, pad} {}

ConvTranspose2d::ConvTranspose2d(ParamStore& ps, const std::string& name, int64_t in, int64_t out, int k, int stride,
                                 int pad, Rng& rng)
    : weight(ps.xavier(name + ".weight", {in, out, k, k}, in * k * k, out * k * k, rng)),
      bias(ps.zeros(name + ".bias", {out})),
      opt{stride, pad} {}

MaskedConv2d::MaskedConv2d(ParamStore& ps, const std::string& name, int64_t in, int64_t out, int k, MaskType t,
                           Rng& rng)
    : weight(ps.xavier(name + ".weight", {out, in, k, k}, in * k * k, out * k * k, rng)),
      bias(ps.zeros(name + ".bias", {out})),
      type(t) {}

}  // namespace partex::ad
