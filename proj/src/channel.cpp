#include "kbae/channel.hpp"

#include <cmath>
#include <random>
#include <string>

#include "kbae/errors.hpp"

namespace kbae {

PhaseShiftMatrix::PhaseShiftMatrix(std::size_t side, std::vector<double> values,
                                   PhaseDomain domain)
    : side_(side), values_(std::move(values)), domain_(domain) {
  if (values_.size() != side_ * side_) {
    throw ShapeError("phase matrix of side " + std::to_string(side_) + " given " +
                     std::to_string(values_.size()) + " values");
  }
  const double upper = domain_ == PhaseDomain::raw ? kTwoPi : 1.0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!(values_[i] >= 0.0 && values_[i] < upper)) {
      throw DomainError("phase value " + std::to_string(values_[i]) + " at element " +
                        std::to_string(i) + " outside [0, " +
                        (domain_ == PhaseDomain::raw ? std::string("2pi") : std::string("1")) +
                        ")");
    }
  }
}

PhaseShiftMatrix normalize(const PhaseShiftMatrix& raw) {
  if (raw.domain() != PhaseDomain::raw) throw DomainError("matrix is already normalized");
  std::vector<double> out(raw.values().begin(), raw.values().end());
  const double below_one = std::nextafter(1.0, 0.0);
  for (double& v : out) v = std::min(v / kTwoPi, below_one);
  return PhaseShiftMatrix(raw.side(), std::move(out), PhaseDomain::normalized);
}

PhaseShiftMatrix denormalize(const PhaseShiftMatrix& normalized) {
  if (normalized.domain() != PhaseDomain::normalized) throw DomainError("matrix is already raw");
  std::vector<double> out(normalized.values().begin(), normalized.values().end());
  const double below_two_pi = std::nextafter(kTwoPi, 0.0);
  for (double& v : out) v = std::min(v * kTwoPi, below_two_pi);
  return PhaseShiftMatrix(normalized.side(), std::move(out), PhaseDomain::raw);
}

void ChannelConfig::validate() const {
  if (side < 1) throw ConfigError("channel side M must be positive");
  if (paths_sr < 1 || paths_rd < 1) throw ConfigError("path counts must be >= 1");
  if (!(gain_variance > 0.0)) throw ConfigError("gain variance must be positive");
  if (!(spacing > 0.0)) throw ConfigError("element spacing must be positive");
  if (azimuth_min > azimuth_max || elevation_min > elevation_max) {
    throw ConfigError("angle ranges must satisfy min <= max");
  }
}

std::vector<cdouble> upa_steering(std::size_t side, double spacing, double azimuth,
                                  double elevation) {
  std::vector<cdouble> a(side * side);
  const double u = kTwoPi * spacing * std::sin(azimuth) * std::cos(elevation);
  const double v = kTwoPi * spacing * std::sin(elevation);
  const double scale = 1.0 / static_cast<double>(side);
  for (std::size_t p = 0; p < side; ++p) {
    for (std::size_t q = 0; q < side; ++q) {
      a[p * side + q] = std::polar(scale, static_cast<double>(q) * u + static_cast<double>(p) * v);
    }
  }
  return a;
}

namespace {

std::vector<cdouble> draw_link(const ChannelConfig& cfg, std::size_t paths, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(cfg.gain_variance / (2.0 * paths)));
  std::uniform_real_distribution<double> az(cfg.azimuth_min, cfg.azimuth_max);
  std::uniform_real_distribution<double> el(cfg.elevation_min, cfg.elevation_max);
  std::vector<cdouble> h(cfg.side * cfg.side);
  for (std::size_t l = 0; l < paths; ++l) {
    const double re = normal(rng);
    const double im = normal(rng);
    const cdouble gain(re, im);
    const double azimuth = az(rng);
    const double elevation = el(rng);
    const auto a = upa_steering(cfg.side, cfg.spacing, azimuth, elevation);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += gain * a[i];
  }
  return h;
}

}  // namespace

ChannelRealization gen_channel(const ChannelConfig& config, std::uint64_t index) {
  config.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                    static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  ChannelRealization ch;
  ch.h_sr = draw_link(config, config.paths_sr, rng);
  ch.h_rd = draw_link(config, config.paths_rd, rng);
  return ch;
}

PhaseShiftMatrix optimal_phase(std::span<const cdouble> h_sr, std::span<const cdouble> h_rd,
                               PhaseSign sign) {
  if (h_sr.size() != h_rd.size()) {
    throw ShapeError("channel lengths differ: " + std::to_string(h_sr.size()) + " vs " +
                     std::to_string(h_rd.size()));
  }
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(h_sr.size()))));
  if (side * side != h_sr.size() || side == 0) {
    throw ShapeError("channel length " + std::to_string(h_sr.size()) + " is not a square M^2");
  }
  std::vector<double> theta(h_sr.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const cdouble product = h_sr[i] * h_rd[i];
    if (product == cdouble(0.0, 0.0)) {
      theta[i] = 0.0;
      continue;
    }
    double t = std::arg(product);
    if (sign == PhaseSign::co_phase) t = -t;
    if (t < 0.0) t += kTwoPi;
    // arg tiny negative wraps to 2pi exactly in floating point.
    if (t >= kTwoPi) t = 0.0;
    theta[i] = t;
  }
  return PhaseShiftMatrix(side, std::move(theta), PhaseDomain::raw);
}

cdouble cascaded_gain(std::span<const cdouble> h_sr, std::span<const cdouble> h_rd,
                      const PhaseShiftMatrix& phases) {
  if (phases.domain() != PhaseDomain::raw) {
    throw DomainError("cascaded_gain needs raw phases in [0, 2pi)");
  }
  if (h_sr.size() != h_rd.size() || h_sr.size() != phases.size()) {
    throw ShapeError("cascaded_gain length mismatch: " + std::to_string(h_sr.size()) + ", " +
                     std::to_string(h_rd.size()) + ", " + std::to_string(phases.size()));
  }
  cdouble sum(0.0, 0.0);
  const auto theta = phases.values();
  for (std::size_t i = 0; i < h_sr.size(); ++i) {
    sum += h_rd[i] * std::polar(1.0, theta[i]) * h_sr[i];
  }
  return sum;
}

std::vector<PhaseShiftMatrix> generate_phase_dataset(const ChannelConfig& config,
                                                     std::uint64_t first, std::size_t count) {
  std::vector<PhaseShiftMatrix> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const ChannelRealization ch = gen_channel(config, first + i);
    out.push_back(normalize(optimal_phase(ch.h_sr, ch.h_rd)));
  }
  return out;
}

}  // namespace kbae
