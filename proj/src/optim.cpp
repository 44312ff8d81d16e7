#include "kbae/optim.hpp"

#include <cmath>
#include <numbers>

#include "kbae/errors.hpp"

namespace kbae {

void adam_step(Parameter& param, AdamState& state, double lr) {
  const Dims& dims = param.value.dims();
  require_same_dims(param.grad.dims(), dims, "adam gradient");
  if (state.t == 0 && state.m.size() == 0) state = AdamState(dims);
  require_same_dims(state.m.dims(), dims, "adam first moment");
  require_same_dims(state.v.dims(), dims, "adam second moment");
  if (!param.grad.all_finite()) {
    throw NumericError("non-finite gradient for parameter " + param.name);
  }

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < param.value.size(); ++i) {
    const double g = param.grad[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    param.value[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

double cosine_lr(std::uint64_t epoch, const CosineSchedule& s) {
  if (s.t_max < 1) throw ConfigError("cosine schedule needs T_max >= 1");
  if (s.eta_max < s.eta_min) throw ConfigError("cosine schedule needs eta_max >= eta_min");
  const std::uint64_t t_cur = s.cyclic ? epoch % s.t_max : epoch;
  double angle = static_cast<double>(t_cur) / static_cast<double>(s.t_max);
  if (s.include_pi) angle *= std::numbers::pi;
  return s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + std::cos(angle));
}

}  // namespace kbae
