#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "partex/autodiff/ops.hpp"

namespace partex::ad {

/// Named float parameters in insertion order.
class ParamStore {
 public:
  /// Uniform in +-sqrt(6 / (fan_in + fan_out)).
  Tensor& xavier(const std::string& name, Shape shape, int64_t fan_in, int64_t fan_out, Rng& rng);
  Tensor& zeros(const std::string& name, Shape shape);
  Tensor& add(const std::string& name, Tensor t);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  size_t size() const { return names_.size(); }
  int64_t total_numel() const;
  void zero_grad();
  void set_requires_grad(bool r);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

struct Linear {
  Tensor weight, bias;
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct Conv2d {
  Tensor weight, bias;
  Conv2dOptions opt;
  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int64_t in, int64_t out, int k, int stride, int pad, Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, opt); }
};

struct ConvTranspose2d {
  Tensor weight, bias;
  Conv2dOptions opt;
  ConvTranspose2d() = default;
  ConvTranspose2d(ParamStore& ps, const std::string& name, int64_t in, int64_t out, int k, int stride, int pad,
                  Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv_transpose2d(x, weight, bias, opt); }
};

struct MaskedConv2d {
  Tensor weight, bias;
  MaskType type = MaskType::kB;
  MaskedConv2d() = default;
  MaskedConv2d(ParamStore& ps, const std::string& name, int64_t in, int64_t out, int k, MaskType type, Rng& rng);
  Tensor operator()(const Tensor& x) const { return masked_conv2d(x, weight, bias, type); }
};

}  // namespace partex::ad
