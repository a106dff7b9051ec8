// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace gazenet {

struct ImageSize {
  int width = 0;
  int height = 0;
  bool operator==(const ImageSize&) const = default;
};

/// Interleaved (HWC) image. Float images hold intensities in [0, 1].
template <typename T>
class BasicImage {
 public:
  BasicImage() = default;
  BasicImage(int width, int height, int channels = 3, T fill = T{})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels <= 0) {
      throw std::invalid_argument("image dimensions must be non-negative");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  ImageSize size() const { return {width_, height_}; }
  bool empty() const { return data_.empty(); }

  T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  T* row(int y) { return data_.data() + static_cast<std::size_t>(y) * width_ * channels_; }
  const T* row(int y) const {
    return data_.data() + static_cast<std::size_t>(y) * width_ * channels_;
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool operator==(const BasicImage&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 3;
  std::vector<T> data_;
};

using Image = BasicImage<float>;
using ImageU8 = BasicImage<std::uint8_t>;

Image to_float(const ImageU8& image);
/// Rounds and clamps to [0, 255].
ImageU8 to_u8(const Image& image);

template <typename T>
BasicImage<T> crop(const BasicImage<T>& image, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || width <= 0 || height <= 0 || x0 + width > image.width() ||
      y0 + height > image.height()) {
    throw std::out_of_range("crop window outside image");
  }
  BasicImage<T> out(width, height, image.channels());
  const int c = image.channels();
  for (int y = 0; y < height; ++y) {
    const T* src = image.row(y0 + y) + static_cast<std::size_t>(x0) * c;
    std::copy(src, src + static_cast<std::size_t>(width) * c, out.row(y));
  }
  return out;
}

template <typename T>
BasicImage<T> flip_horizontal(const BasicImage<T>& image) {
  BasicImage<T> out(image.width(), image.height(), image.channels());
  const int w = image.width();
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < image.channels(); ++c) {
        out.at(w - 1 - x, y, c) = image.at(x, y, c);
      }
    }
  }
  return out;
}

template <typename T>
BasicImage<T> hconcat(const BasicImage<T>& left, const BasicImage<T>& right) {
  if (left.height() != right.height() || left.channels() != right.channels()) {
    throw std::invalid_argument("hconcat: height/channel mismatch");
  }
  BasicImage<T> out(left.width() + right.width(), left.height(), left.channels());
  const std::size_t lw = static_cast<std::size_t>(left.width()) * left.channels();
  const std::size_t rw = static_cast<std::size_t>(right.width()) * right.channels();
  for (int y = 0; y < left.height(); ++y) {
    std::copy(left.row(y), left.row(y) + lw, out.row(y));
    std::copy(right.row(y), right.row(y) + rw, out.row(y) + lw);
  }
  return out;
}

/// Bilinear resize with pixel centers aligned (corner-to-corner scaling).
Image resize_bilinear(const Image& image, int width, int height);

/// Bilinear sample at (x, y) in pixel-center coordinates; neighbours outside
/// the image contribute black.
template <typename T>
double sample_bilinear(const BasicImage<T>& image, double x, double y, int c);

ImageU8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& image);

}  // namespace gazenet
