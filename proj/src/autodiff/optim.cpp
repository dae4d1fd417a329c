#include "partex/autodiff/optim.hpp"

#include <cmath>

namespace partex::ad {

void adam_update(std::span<float> param, std::span<const float> grad, AdamMoments& mom, int64_t step,
                 const AdamOptions& opt) {
  if (grad.size() != param.size()) throw ShapeError("adam_update: gradient size mismatch");
  if (mom.m.size() != param.size()) {
    mom.m.assign(param.size(), 0.0f);
    mom.v.assign(param.size(), 0.0f);
  }
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  const float b1 = static_cast<float>(opt.beta1), b2 = static_cast<float>(opt.beta2);
  const float lr_t = static_cast<float>(opt.lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(opt.eps);
  for (size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    mom.m[i] = b1 * mom.m[i] + (1.0f - b1) * g;
    mom.v[i] = b2 * mom.v[i] + (1.0f - b2) * g * g;
    param[i] -= lr_t * mom.m[i] / (std::sqrt(mom.v[i] * inv_bc2) + eps);
  }
}

void adam_step(ParamStore& params, AdamState& state, const AdamOptions& opt) {
  ++state.step;
  for (const auto& name : params.names()) {
    Tensor& p = params.get(name);
    if (p.grad().empty()) continue;
    adam_update(p.data(), p.grad(), state.moments[name], state.step, opt);
    p.zero_grad();
  }
}

}  // namespace partex::ad
