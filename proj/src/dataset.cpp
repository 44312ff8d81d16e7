#include "kbae/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kbae/binary_io.hpp"
#include "kbae/errors.hpp"

namespace kbae {

std::vector<std::uint8_t> encode_dataset(std::span<const PhaseShiftMatrix> samples) {
  const std::size_t side = samples.empty() ? 0 : samples.front().side();
  ByteWriter w;
  w.tag("KBPS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(side));
  w.u64(samples.size());
  w.u8(4);
  const float below_one = std::nextafter(1.0f, 0.0f);
  for (const auto& s : samples) {
    if (s.domain() != PhaseDomain::normalized) {
      throw DomainError("datasets store normalized phase matrices only");
    }
    if (s.side() != side) {
      throw ShapeError("dataset mixes sides " + std::to_string(side) + " and " +
                       std::to_string(s.side()));
    }
    for (double v : s.values()) w.f32(std::min(static_cast<float>(v), below_one));
  }
  return w.take();
}

std::vector<PhaseShiftMatrix> decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("KBPS", "dataset");
  const std::size_t version_at = r.offset();
  if (r.u32() != kDatasetVersion) throw FormatError("unsupported dataset version", version_at);
  const std::uint32_t side = r.u32();
  const std::size_t count_at = r.offset();
  const std::uint64_t count = r.u64();
  const std::size_t width_at = r.offset();
  if (r.u8() != 4) throw FormatError("unsupported numeric width", width_at);
  const std::uint64_t per_sample = std::uint64_t{side} * side;
  if (per_sample != 0 && count > r.remaining() / (per_sample * 4)) {
    throw FormatError("payload holds fewer than " + std::to_string(count) + " samples", count_at);
  }
  if (r.remaining() != count * per_sample * 4) {
    throw FormatError("payload length " + std::to_string(r.remaining()) + " does not match " +
                          std::to_string(count) + " samples of side " + std::to_string(side),
                      r.offset());
  }
  std::vector<PhaseShiftMatrix> out;
  out.reserve(count);
  for (std::uint64_t s = 0; s < count; ++s) {
    const std::size_t at = r.offset();
    std::vector<double> values(per_sample);
    for (auto& v : values) v = r.f32();
    try {
      out.emplace_back(side, std::move(values), PhaseDomain::normalized);
    } catch (const DomainError& e) {
      throw FormatError(std::string("sample out of range: ") + e.what(), at);
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const PhaseShiftMatrix> samples) {
  const auto bytes = encode_dataset(samples);
  write_file_atomic(path, bytes);
}

std::vector<PhaseShiftMatrix> read_dataset(const std::filesystem::path& path) {
  return decode_dataset(read_file(path));
}

std::array<std::size_t, 3> split_counts(std::size_t total, std::array<double, 3> weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(sum > 0.0) || std::any_of(weights.begin(), weights.end(), [](double w) { return w < 0.0; })) {
    throw ConfigError("split weights must be non-negative with a positive sum");
  }
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % 3]];
  return counts;
}

std::array<std::size_t, 3> split_dataset(std::span<const PhaseShiftMatrix> samples,
                                         std::array<double, 3> weights,
                                         const std::array<std::filesystem::path, 3>& paths) {
  const auto counts = split_counts(samples.size(), weights);
  std::size_t start = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    write_dataset(paths[i], samples.subspan(start, counts[i]));
    start += counts[i];
  }
  return counts;
}

}  // namespace kbae
