#include "synthfed/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "synthfed/error.hpp"

namespace synthfed {

Image2D::Image2D(int height, int width, int channels, std::vector<float> pixels, Spacing spacing)
    : height_(height), width_(width), channels_(channels), spacing_(spacing), pixels_(std::move(pixels)) {
  if (height < 1 || width < 1) throw DataError("image: empty extent");
  if (channels != 1 && channels != 3) throw DataError("image: channels must be 1 or 3");
  if (pixels_.size() != static_cast<std::size_t>(height) * width * channels)
    throw DataError("image: pixel count does not match extent");
  if (!(spacing.row_mm > 0.0) || !(spacing.col_mm > 0.0)) throw DataError("image: spacing must be positive");
  for (float v : pixels_)
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("image: intensity outside [0,1]");
}

float Image2D::intensity(int row, int col) const noexcept {
  if (channels_ == 1) return at(row, col);
  return (at(row, col, 0) + at(row, col, 1) + at(row, col, 2)) / 3.0f;
}

Image2D Image2D::grayscale() const {
  if (channels_ == 1) return *this;
  std::vector<float> out(static_cast<std::size_t>(height_) * width_);
  for (int r = 0; r < height_; ++r)
    for (int c = 0; c < width_; ++c) out[static_cast<std::size_t>(r) * width_ + c] = intensity(r, c);
  return Image2D(height_, width_, 1, std::move(out), spacing_);
}

SegMask::SegMask(int height, int width, int num_classes, std::vector<std::uint8_t> labels)
    : height_(height), width_(width), num_classes_(num_classes), labels_(std::move(labels)) {
  if (height < 1 || width < 1) throw DataError("mask: empty extent");
  if (num_classes < 1 || num_classes > 254) throw DataError("mask: class count out of range");
  if (labels_.size() != static_cast<std::size_t>(height) * width)
    throw DataError("mask: label count does not match extent");
  for (auto v : labels_)
    if (v > num_classes)
      throw DataError("mask: label value " + std::to_string(v) + " exceeds class count " + std::to_string(num_classes));
}

Image2D resize_bilinear(const Image2D& image, Extent target) {
  if (image.extent() == target) return image;
  const int ch = image.channels();
  std::vector<float> out(static_cast<std::size_t>(target.rows) * target.cols * ch);
  const double sy = static_cast<double>(image.height()) / target.rows;
  const double sx = static_cast<double>(image.width()) / target.cols;
  for (int r = 0; r < target.rows; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - y0;
    for (int c = 0; c < target.cols; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - x0;
      for (int k = 0; k < ch; ++k) {
        const double top = image.at(y0, x0, k) * (1 - wx) + image.at(y0, x1, k) * wx;
        const double bottom = image.at(y1, x0, k) * (1 - wx) + image.at(y1, x1, k) * wx;
        const double v = top * (1 - wy) + bottom * wy;
        out[(static_cast<std::size_t>(r) * target.cols + c) * ch + k] = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
      }
    }
  }
  return Image2D(target.rows, target.cols, ch, std::move(out), image.spacing());
}

SegMask resize_nearest(const SegMask& mask, Extent target) {
  if (mask.extent() == target) return mask;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(target.rows) * target.cols);
  for (int r = 0; r < target.rows; ++r) {
    const int y = std::min(mask.height() - 1, static_cast<int>((r + 0.5) * mask.height() / target.rows));
    for (int c = 0; c < target.cols; ++c) {
      const int x = std::min(mask.width() - 1, static_cast<int>((c + 0.5) * mask.width() / target.cols));
      out[static_cast<std::size_t>(r) * target.cols + c] = mask.at(y, x);
    }
  }
  return SegMask(target.rows, target.cols, mask.num_classes(), std::move(out));
}

std::vector<float> minmax_normalize(std::span<const float> values) {
  std::vector<float> out(values.begin(), values.end());
  if (out.empty()) return out;
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const float min = *lo;
  const float range = *hi - min;
  if (!(range > 0.0f)) return out;
  for (float& v : out) v = std::clamp((v - min) / range, 0.0f, 1.0f);
  return out;
}

std::vector<float> normalize_samples(std::span<const std::uint16_t> samples, std::uint32_t max_value) {
  std::vector<float> values(samples.size());
  const float scale = 1.0f / static_cast<float>(max_value);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(samples[i]) * scale;
  return minmax_normalize(values);
}

std::uint16_t to_u16(float v) { return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f)); }

float from_u16(std::uint16_t q) { return std::min(1.0f, static_cast<float>(q) * (1.0f / 65535.0f)); }

Image2D quantize16(const Image2D& image) {
  std::vector<float> out(image.pixels().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = from_u16(to_u16(image.pixels()[i]));
  return Image2D(image.height(), image.width(), image.channels(), std::move(out), image.spacing());
}

}  // namespace synthfed
