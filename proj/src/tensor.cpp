#include "kbae/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "kbae/errors.hpp"

namespace kbae {

std::string Dims::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w);
}

Tensor4::Tensor4(Dims dims, double fill) : dims_(dims), values_(dims.size(), fill) {}

Tensor4::Tensor4(Dims dims, std::vector<double> values) : dims_(dims), values_(std::move(values)) {
  if (values_.size() != dims_.size()) {
    throw ShapeError("tensor of dims " + dims_.str() + " given " + std::to_string(values_.size()) +
                     " values");
  }
}

Tensor4 Tensor4::reshaped(Dims dims) const {
  if (dims.size() != dims_.size()) {
    throw ShapeError("cannot reshape " + dims_.str() + " to " + dims.str());
  }
  return Tensor4(dims, values_);
}

void Tensor4::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor4::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

}  // namespace kbae
