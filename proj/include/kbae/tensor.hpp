#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace kbae {

struct Dims {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;

  std::string str() const;
};

// Dense 4-D array of doubles, row-major in n -> c -> h -> w order.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Dims dims, double fill = 0.0);
  Tensor4(Dims dims, std::vector<double> values);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return values_[((n * dims_.c + c) * dims_.h + h) * dims_.w + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return values_[((n * dims_.c + c) * dims_.h + h) * dims_.w + w];
  }

  // Same values, new dims. Throws ShapeError when the element counts differ.
  Tensor4 reshaped(Dims dims) const;

  void fill(double v);
  bool all_finite() const noexcept;

 private:
  Dims dims_{};
  std::vector<double> values_;
};

// Throws ShapeError naming both shapes when they differ.
void require_same_dims(const Dims& a, const Dims& b, const char* what);

}  // namespace kbae
