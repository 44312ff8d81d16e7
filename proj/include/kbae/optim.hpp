#pragma once

#include <cstdint>

#include "kbae/tape.hpp"

namespace kbae {

struct AdamState {
  Tensor4 m;
  Tensor4 v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(const Dims& dims) : m(dims), v(dims) {}
};

// One bias-corrected Adam update of `param` from `param.grad`. Throws
// NumericError naming the parameter when its gradient is not finite.
void adam_step(Parameter& param, AdamState& state, double lr);

struct CosineSchedule {
  double eta_max = 0.002;
  double eta_min = 0.0;
  std::uint64_t t_max = 20;
  // cos(pi * t / T_max); off gives the bare cos(t / T_max) form.
  bool include_pi = true;
  // Restart every T_max epochs (t mod T_max).
  bool cyclic = true;
};

double cosine_lr(std::uint64_t epoch, const CosineSchedule& schedule);

}  // namespace kbae
