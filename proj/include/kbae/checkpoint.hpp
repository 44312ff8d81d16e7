#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kbae/models.hpp"

namespace kbae {

// Layout: "KBCK" | u32 version=1 |
//   config: u32 variant, u32 M, u32 C, u32 K, u32 Z, u32 k0, u32 flags |
//   u32 tensor count | per tensor: u32 name length, name bytes, u32 dims[4],
//   float32 values (little-endian).
// flags bit 0: PSFNet-H decoder keeps its second GARB.
std::vector<std::uint8_t> serialize_checkpoint(const ModelBundle& model);
ModelBundle parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& model);
ModelBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace kbae
