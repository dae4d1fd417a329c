#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "partex/autodiff/nn.hpp"

namespace partex::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<float> m, v;
};

struct AdamState {
  int64_t step = 0;
  std::unordered_map<std::string, AdamMoments> moments;
};

/// One bias-corrected Adam update of a flat parameter buffer. `step` is the
/// 1-based step count used for bias correction.
void adam_update(std::span<float> param, std::span<const float> grad, AdamMoments& mom, int64_t step,
                 const AdamOptions& opt);

/// Applies one step to every parameter in the store and clears their grads.
/// Parameters without a gradient are left untouched.
void adam_step(ParamStore& params, AdamState& state, const AdamOptions& opt);

}  // namespace partex::ad
