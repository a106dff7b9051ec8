// SPDX-License-Identifier: Apache-2.0
#include "gazenet/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "gazenet/errors.hpp"

namespace gazenet {

Image to_float(const ImageU8& image) {
  Image out(image.width(), image.height(), image.channels());
  auto src = image.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<float>(src[i]) / 255.0f;
  }
  return out;
}

ImageU8 to_u8(const Image& image) {
  ImageU8 out(image.width(), image.height(), image.channels());
  auto src = image.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const float v = std::clamp(src[i], 0.0f, 1.0f) * 255.0f;
    dst[i] = static_cast<std::uint8_t>(std::lround(v));
  }
  return out;
}

template <typename T>
double sample_bilinear(const BasicImage<T>& image, double x, double y, int c) {
  const int w = image.width();
  const int h = image.height();
  if (!(x > -1.0 && y > -1.0 && x < w && y < h)) return 0.0;
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  auto px = [&](int xi, int yi) -> double {
    if (xi < 0 || yi < 0 || xi >= w || yi >= h) return 0.0;
    return static_cast<double>(image.at(xi, yi, c));
  };
  return px(x0, y0) * (1.0 - fx) * (1.0 - fy) + px(x0 + 1, y0) * fx * (1.0 - fy) +
         px(x0, y0 + 1) * (1.0 - fx) * fy + px(x0 + 1, y0 + 1) * fx * fy;
}

template double sample_bilinear<float>(const Image&, double, double, int);
template double sample_bilinear<std::uint8_t>(const ImageU8&, double, double, int);

Image resize_bilinear(const Image& image, int width, int height) {
  if (image.empty() || width <= 0 || height <= 0) {
    throw std::invalid_argument("resize_bilinear: empty input or output");
  }
  if (width == image.width() && height == image.height()) return image;
  Image out(width, height, image.channels());
  const double sx = width > 1 ? double(image.width() - 1) / (width - 1) : 0.0;
  const double sy = height > 1 ? double(image.height() - 1) / (height - 1) : 0.0;
  for (int y = 0; y < height; ++y) {
    const double v = y * sy;
    for (int x = 0; x < width; ++x) {
      const double u = x * sx;
      for (int c = 0; c < image.channels(); ++c) {
        out.at(x, y, c) = static_cast<float>(sample_bilinear(image, u, v, c));
      }
    }
  }
  return out;
}

ImageU8 read_png(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image: " + path.string());
  ImageU8 out(bgr.cols, bgr.rows, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* src = bgr.ptr<cv::Vec3b>(y);
    std::uint8_t* dst = out.row(y);
    for (int x = 0; x < bgr.cols; ++x) {
      dst[3 * x + 0] = src[x][2];
      dst[3 * x + 1] = src[x][1];
      dst[3 * x + 2] = src[x][0];
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const ImageU8& image) {
  if (image.channels() != 3 && image.channels() != 1) {
    throw std::invalid_argument("write_png: expected 1 or 3 channels");
  }
  const int type = image.channels() == 3 ? CV_8UC3 : CV_8UC1;
  cv::Mat mat(image.height(), image.width(), type);
  for (int y = 0; y < image.height(); ++y) {
    const std::uint8_t* src = image.row(y);
    auto* dst = mat.ptr<std::uint8_t>(y);
    if (image.channels() == 1) {
      std::copy(src, src + image.width(), dst);
      continue;
    }
    for (int x = 0; x < image.width(); ++x) {
      dst[3 * x + 0] = src[3 * x + 2];
      dst[3 * x + 1] = src[3 * x + 1];
      dst[3 * x + 2] = src[3 * x + 0];
    }
  }
  if (!cv::imwrite(path.string(), mat, {cv::IMWRITE_PNG_COMPRESSION, 1})) {
    throw IoError("cannot write image: " + path.string());
  }
}

}  // namespace gazenet
