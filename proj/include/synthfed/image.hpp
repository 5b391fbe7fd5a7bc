#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace synthfed {

struct Spacing {
  double row_mm = 1.0;
  double col_mm = 1.0;

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

struct Extent {
  int rows = 0;
  int cols = 0;

  friend bool operator==(const Extent&, const Extent&) = default;
};

/// Row-major, channel-interleaved intensity grid with values in [0, 1].
class Image2D {
 public:
  Image2D(int height, int width, int channels, std::vector<float> pixels, Spacing spacing = {});

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  Extent extent() const noexcept { return {height_, width_}; }
  const Spacing& spacing() const noexcept { return spacing_; }
  std::span<const float> pixels() const noexcept { return pixels_; }

  float at(int row, int col, int channel = 0) const noexcept {
    return pixels_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + channel];
  }
  /// Channel mean at (row, col).
  float intensity(int row, int col) const noexcept;

  /// Single-channel copy (channel mean).
  Image2D grayscale() const;

  friend bool operator==(const Image2D&, const Image2D&) = default;

 private:
  int height_;
  int width_;
  int channels_;
  Spacing spacing_;
  std::vector<float> pixels_;
};

/// Integer label grid; 0 is background, 1..num_classes are foreground classes.
class SegMask {
 public:
  SegMask(int height, int width, int num_classes, std::vector<std::uint8_t> labels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int num_classes() const noexcept { return num_classes_; }
  Extent extent() const noexcept { return {height_, width_}; }
  std::span<const std::uint8_t> labels() const noexcept { return labels_; }
  std::uint8_t at(int row, int col) const noexcept { return labels_[static_cast<std::size_t>(row) * width_ + col]; }

  friend bool operator==(const SegMask&, const SegMask&) = default;

 private:
  int height_;
  int width_;
  int num_classes_;
  std::vector<std::uint8_t> labels_;
};

/// Bilinear resample (pixel-center aligned) of every channel.
Image2D resize_bilinear(const Image2D& image, Extent target);

/// Nearest-neighbour resample of a label grid.
SegMask resize_nearest(const SegMask& mask, Extent target);

/// Min-max rescale of all channels into [0, 1]. A constant image is left as is.
std::vector<float> minmax_normalize(std::span<const float> values);

/// Load-time intensity mapping: samples / max_value, then min-max.
std::vector<float> normalize_samples(std::span<const std::uint16_t> samples, std::uint32_t max_value);

std::uint16_t to_u16(float v);
float from_u16(std::uint16_t q);

/// Snaps intensities to the 16-bit grid used on disk, so an image written
/// and read back compares equal.
Image2D quantize16(const Image2D& image);

}  // namespace synthfed
