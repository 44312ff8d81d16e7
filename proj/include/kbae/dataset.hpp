#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "kbae/channel.hpp"

namespace kbae {

// Layout: "KBPS" | u32 version=1 | u32 M | u64 count | u8 width=4 |
//         count*M*M little-endian float32, row-major, values in [0, 1).
inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(std::span<const PhaseShiftMatrix> samples);
std::vector<PhaseShiftMatrix> decode_dataset(std::span<const std::uint8_t> bytes);

void write_dataset(const std::filesystem::path& path, std::span<const PhaseShiftMatrix> samples);
std::vector<PhaseShiftMatrix> read_dataset(const std::filesystem::path& path);

// Part sizes for `total` items under the given weights, largest-remainder
// rounding, ties to the earlier part.
std::array<std::size_t, 3> split_counts(std::size_t total, std::array<double, 3> weights);

// Consecutive, order-preserving partition written as train / validation / test.
std::array<std::size_t, 3> split_dataset(std::span<const PhaseShiftMatrix> samples,
                                         std::array<double, 3> weights,
                                         const std::array<std::filesystem::path, 3>& paths);

}  // namespace kbae
