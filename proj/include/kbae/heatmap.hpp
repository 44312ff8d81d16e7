#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "kbae/channel.hpp"

namespace kbae {

// 8-bit grayscale image, written as binary PGM (P5).
struct HeatmapImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// pixel = floor(normalized * 256) clamped to [0, 255]; raw input is normalized first.
HeatmapImage heatmap(const PhaseShiftMatrix& m);
// Left and right images separated by a 2-pixel white divider.
HeatmapImage heatmap_pair(const PhaseShiftMatrix& left, const PhaseShiftMatrix& right);

std::vector<std::uint8_t> encode_pgm(const HeatmapImage& img);
void write_heatmap(const std::filesystem::path& path, const HeatmapImage& img);

}  // namespace kbae
