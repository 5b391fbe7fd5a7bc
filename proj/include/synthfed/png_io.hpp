#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace synthfed::png {

/// Decoded PNG samples, channel-interleaved. Alpha is stripped, palettes
/// expanded; `max_value` is 255 or 65535.
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;

  std::uint32_t max_value() const { return bit_depth == 16 ? 65535u : 255u; }
};

Raster read(const std::filesystem::path& path);

/// channels must be 1 or 3; bit_depth 8 or 16.
void write(const std::filesystem::path& path, const Raster& raster);

}  // namespace synthfed::png
