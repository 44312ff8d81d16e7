#include "kbae/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kbae/binary_io.hpp"
#include "kbae/errors.hpp"

namespace kbae {

HeatmapImage heatmap(const PhaseShiftMatrix& m) {
  const PhaseShiftMatrix n = m.domain() == PhaseDomain::raw ? normalize(m) : m;
  HeatmapImage img{n.side(), n.side(), {}};
  img.pixels.reserve(n.size());
  for (double v : n.values()) {
    const double level = std::clamp(std::floor(v * 256.0), 0.0, 255.0);
    img.pixels.push_back(static_cast<std::uint8_t>(level));
  }
  return img;
}

HeatmapImage heatmap_pair(const PhaseShiftMatrix& left, const PhaseShiftMatrix& right) {
  const HeatmapImage a = heatmap(left);
  const HeatmapImage b = heatmap(right);
  if (a.height != b.height) {
    throw ShapeError("paired heatmaps need equal heights, got " + std::to_string(a.height) +
                     " and " + std::to_string(b.height));
  }
  constexpr std::size_t kDivider = 2;
  HeatmapImage img{a.width + kDivider + b.width, a.height, {}};
  img.pixels.reserve(img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    img.pixels.insert(img.pixels.end(), a.pixels.begin() + y * a.width,
                      a.pixels.begin() + (y + 1) * a.width);
    img.pixels.insert(img.pixels.end(), kDivider, 255);
    img.pixels.insert(img.pixels.end(), b.pixels.begin() + y * b.width,
                      b.pixels.begin() + (y + 1) * b.width);
  }
  return img;
}

std::vector<std::uint8_t> encode_pgm(const HeatmapImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

void write_heatmap(const std::filesystem::path& path, const HeatmapImage& img) {
  write_file_atomic(path, encode_pgm(img));
}

}  // namespace kbae
