#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace kbae {

using cdouble = std::complex<double>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum class PhaseDomain { raw, normalized };

// M x M RIS phase profile stored row-major. Raw values live in [0, 2pi),
// normalized values in [0, 1).
class PhaseShiftMatrix {
 public:
  PhaseShiftMatrix() = default;
  PhaseShiftMatrix(std::size_t side, std::vector<double> values, PhaseDomain domain);

  std::size_t side() const noexcept { return side_; }
  std::size_t size() const noexcept { return values_.size(); }
  PhaseDomain domain() const noexcept { return domain_; }
  std::span<const double> values() const noexcept { return values_; }
  double at(std::size_t row, std::size_t col) const { return values_[row * side_ + col]; }

 private:
  std::size_t side_ = 0;
  std::vector<double> values_;
  PhaseDomain domain_ = PhaseDomain::raw;
};

// raw / 2pi; DomainError when already normalized.
PhaseShiftMatrix normalize(const PhaseShiftMatrix& raw);
// normalized * 2pi; DomainError when already raw.
PhaseShiftMatrix denormalize(const PhaseShiftMatrix& normalized);

struct ChannelRealization {
  std::vector<cdouble> h_sr;  // UE -> RIS
  std::vector<cdouble> h_rd;  // RIS -> BS
};

// Parameters of the clustered geometric channel used in place of a full
// mmWave simulator. Each link is
//   h = sum_{l<L} g_l * a(az_l, el_l),   g_l ~ CN(0, gain_variance / L)
// with a() the unit-norm steering vector of an M x M uniform planar array:
//   a[p*M + q] = exp(j*2pi*d*(q*sin(az)*cos(el) + p*sin(el))) / M
// Angles are drawn uniformly from the configured ranges.
struct ChannelConfig {
  std::size_t side = 32;
  std::size_t paths_sr = 3;
  std::size_t paths_rd = 2;
  double gain_variance = 1.0;
  double azimuth_min = -std::numbers::pi / 2.0;
  double azimuth_max = std::numbers::pi / 2.0;
  double elevation_min = -std::numbers::pi / 4.0;
  double elevation_max = std::numbers::pi / 4.0;
  double spacing = 0.5;  // wavelengths
  std::uint64_t seed = 0;

  void validate() const;
};

// Deterministic in (config.seed, index).
ChannelRealization gen_channel(const ChannelConfig& config, std::uint64_t index);

std::vector<cdouble> upa_steering(std::size_t side, double spacing, double azimuth,
                                  double elevation);

enum class PhaseSign {
  co_phase,  // theta_i = -arg(h_sr,i * h_rd,i), aligns every cascaded term
  literal,   // theta_i = +arg(h_sr,i * h_rd,i)
};

// Per-element capacity-optimal phases reshaped to M x M. Elements whose
// cascaded product is exactly zero get phase 0.
PhaseShiftMatrix optimal_phase(std::span<const cdouble> h_sr, std::span<const cdouble> h_rd,
                               PhaseSign sign = PhaseSign::co_phase);

// sum_i h_rd,i * exp(j*theta_i) * h_sr,i with unit reflection amplitude.
cdouble cascaded_gain(std::span<const cdouble> h_sr, std::span<const cdouble> h_rd,
                      const PhaseShiftMatrix& phases);

// gen_channel -> optimal_phase -> normalize for samples [first, first + count).
std::vector<PhaseShiftMatrix> generate_phase_dataset(const ChannelConfig& config,
                                                     std::uint64_t first, std::size_t count);

}  // namespace kbae
