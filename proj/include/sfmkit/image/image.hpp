#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "sfmkit/core/error.hpp"

namespace sfm {

// Grayscale image with intensities in [0, 1], row-major.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, double fill = 0.0)
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {
    if (width < 1 || height < 1) Fail(ErrorCode::kZeroDimension, "image dimensions must be >= 1");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  // Edge-replicating access.
  double clamped(int x, int y) const {
    x = std::clamp(x, 0, width_ - 1);
    y = std::clamp(y, 0, height_ - 1);
    return at(x, y);
  }

  // Bilinear sample with edge replication.
  double sample(double x, double y) const {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    return (1 - fy) * ((1 - fx) * clamped(x0, y0) + fx * clamped(x0 + 1, y0)) +
           fy * ((1 - fx) * clamped(x0, y0 + 1) + fx * clamped(x0 + 1, y0 + 1));
  }

  double* row(int y) { return data_.data() + static_cast<std::size_t>(y) * width_; }
  const double* row(int y) const { return data_.data() + static_cast<std::size_t>(y) * width_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline GrayImage ParsePgm(const std::vector<unsigned char>& bytes, const std::string& path) {
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos]))
      Fail(ErrorCode::kCorruptFile, "truncated PGM header: " + path);
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1L << 30)) Fail(ErrorCode::kCorruptFile, "PGM header value too large: " + path);
      ++pos;
    }
    return v;
  };
  const long width = next_token();
  const long height = next_token();
  const long maxval = next_token();
  // Exactly one whitespace byte separates the header from the raster.
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    Fail(ErrorCode::kCorruptFile, "truncated PGM header: " + path);
  ++pos;
  if (width == 0 || height == 0) Fail(ErrorCode::kZeroDimension, "PGM has zero dimension: " + path);
  if (maxval < 1 || maxval > 255)
    Fail(ErrorCode::kUnsupportedFormat, "only 8-bit PGM is supported: " + path);
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() - pos < count) Fail(ErrorCode::kCorruptFile, "truncated PGM raster: " + path);
  GrayImage img(static_cast<int>(width), static_cast<int>(height));
  for (std::size_t i = 0; i < count; ++i)
    img.data()[i] = static_cast<double>(bytes[pos + i]) / static_cast<double>(maxval);
  return img;
}

inline GrayImage ReadPng(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    Fail(ErrorCode::kCorruptFile, "cannot decode PNG " + path + ": " + image.message);
  if (image.width == 0 || image.height == 0) {
    png_image_free(&image);
    Fail(ErrorCode::kZeroDimension, "PNG has zero dimension: " + path);
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    Fail(ErrorCode::kUnsupportedFormat, "16-bit PNG is not supported: " + path);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    Fail(ErrorCode::kCorruptFile, "cannot decode PNG " + path + ": " + msg);
  }
  GrayImage img(static_cast<int>(image.width), static_cast<int>(image.height));
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    const unsigned char* px = &buffer[3 * i];
    img.data()[i] = (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) / 255.0;
  }
  return img;
}

}  // namespace detail

// Reads binary PGM (P5, maxval <= 255) or 8-bit PNG, converting RGB to luma.
inline GrayImage LoadImage(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCode::kIoError, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return detail::ParsePgm(bytes, path);
  static constexpr unsigned char kPngMagic[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, bytes.begin()))
    return detail::ReadPng(path);
  Fail(ErrorCode::kUnsupportedFormat, "not a P5 PGM or PNG file: " + path);
}

// Debug dump; intensities are rounded to 8 bits.
inline void WritePgm(const GrayImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorCode::kIoError, "cannot write " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> raster(img.data().size());
  for (std::size_t i = 0; i < raster.size(); ++i)
    raster[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data()[i], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!out) Fail(ErrorCode::kIoError, "short write to " + path);
}

// Normalized 1-D Gaussian kernel of radius ceil(4 sigma).
inline std::vector<double> GaussianKernel(double sigma) {
  if (!(sigma > 0.0)) Fail(ErrorCode::kNonPositiveSigma, "sigma must be positive");
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian convolution with edge replication.
inline GrayImage GaussianBlur(const GrayImage& img, double sigma) {
  const std::vector<double> k = GaussianKernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int w = img.width(), h = img.height();

  GrayImage tmp(w, h);
  std::vector<double> line(w + 2 * radius);
  for (int y = 0; y < h; ++y) {
    const double* src = img.row(y);
    for (int i = 0; i < w + 2 * radius; ++i) line[i] = src[std::clamp(i - radius, 0, w - 1)];
    double* dst = tmp.row(y);
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::size_t j = 0; j < k.size(); ++j) s += k[j] * line[x + j];
      dst[x] = s;
    }
  }

  GrayImage out(w, h);
  std::vector<double> acc(w);
  for (int y = 0; y < h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int j = -radius; j <= radius; ++j) {
      const double kv = k[j + radius];
      const double* src = tmp.row(std::clamp(y + j, 0, h - 1));
      for (int x = 0; x < w; ++x) acc[x] += kv * src[x];
    }
    std::copy(acc.begin(), acc.end(), out.row(y));
  }
  return out;
}

// Nearest-neighbor decimation: out(x, y) = in(2x, 2y).
inline GrayImage HalfSample(const GrayImage& img) {
  if (img.width() < 2 || img.height() < 2) Fail(ErrorCode::kImageTooSmall, "half_sample needs >= 2x2");
  GrayImage out(img.width() / 2, img.height() / 2);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out.at(x, y) = img.at(2 * x, 2 * y);
  return out;
}

}  // namespace sfm
