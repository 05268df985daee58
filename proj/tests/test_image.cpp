#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <png.h>

#include "sfmkit/image/image.hpp"
#include "support/expect_error.hpp"

namespace {

using namespace sfm;

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() /
            ("sfmkit_image_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

void WriteBytes(const std::string& path, const std::string& header, const std::vector<unsigned char>& raster) {
  std::ofstream out(path, std::ios::binary);
  out << header;
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
}

double AnalyticGaussian(double x, double sigma) {
  return std::exp(-0.5 * x * x / (sigma * sigma)) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

TEST(LoadImage, TwoByTwoPgm) {
  TempDir dir;
  WriteBytes(dir.file("a.pgm"), "P5\n2 2\n255\n", {0, 128, 255, 64});
  const GrayImage img = LoadImage(dir.file("a.pgm"));
  ASSERT_EQ(img.width(), 2);
  ASSERT_EQ(img.height(), 2);
  EXPECT_EQ(img.at(0, 0), 0.0);
  EXPECT_EQ(img.at(1, 0), 128.0 / 255.0);
  EXPECT_EQ(img.at(0, 1), 1.0);
  EXPECT_EQ(img.at(1, 1), 64.0 / 255.0);
}

TEST(LoadImage, SinglePixel) {
  TempDir dir;
  WriteBytes(dir.file("a.pgm"), "P5 1 1 255\n", {255});
  const GrayImage img = LoadImage(dir.file("a.pgm"));
  ASSERT_EQ(img.width(), 1);
  EXPECT_EQ(img.at(0, 0), 1.0);
}

TEST(LoadImage, CommentInHeader) {
  TempDir dir;
  WriteBytes(dir.file("a.pgm"), "P5\n# made by hand\n1 2\n255\n", {10, 20});
  const GrayImage img = LoadImage(dir.file("a.pgm"));
  EXPECT_EQ(img.height(), 2);
  EXPECT_EQ(img.at(0, 1), 20.0 / 255.0);
}

TEST(LoadImage, TruncatedHeader) {
  TempDir dir;
  WriteBytes(dir.file("a.pgm"), "P5\n2 ", {});
  EXPECT_SFM_ERROR(LoadImage(dir.file("a.pgm")), ErrorCode::kCorruptFile);
}

TEST(LoadImage, TruncatedRaster) {
  TempDir dir;
  WriteBytes(dir.file("a.pgm"), "P5\n2 2\n255\n", {1, 2, 3});
  EXPECT_SFM_ERROR(LoadImage(dir.file("a.pgm")), ErrorCode::kCorruptFile);
}

TEST(LoadImage, ZeroDimension) {
  TempDir dir;
  WriteBytes(dir.file("a.pgm"), "P5\n0 2\n255\n", {});
  EXPECT_SFM_ERROR(LoadImage(dir.file("a.pgm")), ErrorCode::kZeroDimension);
}

TEST(LoadImage, SixteenBitPgmUnsupported) {
  TempDir dir;
  WriteBytes(dir.file("a.pgm"), "P5\n1 1\n65535\n", {0, 0});
  EXPECT_SFM_ERROR(LoadImage(dir.file("a.pgm")), ErrorCode::kUnsupportedFormat);
}

TEST(LoadImage, UnknownFormat) {
  TempDir dir;
  WriteBytes(dir.file("a.bmp"), "BM", {0, 0, 0});
  EXPECT_SFM_ERROR(LoadImage(dir.file("a.bmp")), ErrorCode::kUnsupportedFormat);
}

TEST(LoadImage, MissingFile) { EXPECT_SFM_ERROR(LoadImage("/nonexistent/x.png"), ErrorCode::kIoError); }

TEST(LoadImage, RgbPngConvertsToLuma) {
  TempDir dir;
  const std::vector<unsigned char> rgb{255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255};
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = 2;
  image.height = 2;
  image.format = PNG_FORMAT_RGB;
  ASSERT_TRUE(png_image_write_to_file(&image, dir.file("a.png").c_str(), 0, rgb.data(), 0, nullptr));
  const GrayImage img = LoadImage(dir.file("a.png"));
  ASSERT_EQ(img.width(), 2);
  EXPECT_NEAR(img.at(0, 0), 0.299, 1e-12);
  EXPECT_NEAR(img.at(1, 0), 0.587, 1e-12);
  EXPECT_NEAR(img.at(0, 1), 0.114, 1e-12);
  EXPECT_NEAR(img.at(1, 1), 1.0, 1e-12);
}

TEST(LoadImage, GrayPngRoundTrip) {
  TempDir dir;
  const std::vector<unsigned char> gray{0, 51, 102, 153, 204, 255};
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = 3;
  image.height = 2;
  image.format = PNG_FORMAT_GRAY;
  ASSERT_TRUE(png_image_write_to_file(&image, dir.file("g.png").c_str(), 0, gray.data(), 0, nullptr));
  const GrayImage img = LoadImage(dir.file("g.png"));
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(img.data()[i], gray[i] / 255.0, 1e-12);
}

TEST(LoadImage, CorruptPng) {
  TempDir dir;
  WriteBytes(dir.file("a.png"), "\x89PNG\r\n\x1a\n", {0, 0, 0, 13, 'I', 'H'});
  EXPECT_SFM_ERROR(LoadImage(dir.file("a.png")), ErrorCode::kCorruptFile);
}

TEST(GaussianBlur, ImpulseMatchesAnalyticKernel) {
  const double sigma = 1.6;
  GrayImage img(21, 21);
  img.at(10, 10) = 1.0;
  const GrayImage out = GaussianBlur(img, sigma);
  for (int x = 0; x < 21; ++x)
    EXPECT_NEAR(out.at(x, 10), AnalyticGaussian(x - 10, sigma) * AnalyticGaussian(0, sigma), 1e-6) << x;
  for (int y = 0; y < 21; ++y)
    EXPECT_NEAR(out.at(13, y), AnalyticGaussian(3, sigma) * AnalyticGaussian(y - 10, sigma), 1e-6) << y;
}

TEST(GaussianBlur, ConstantPreserved) {
  for (double sigma : {0.3, 1.0, 1.6, 5.0}) {
    const GrayImage out = GaussianBlur(GrayImage(17, 9, 0.37), sigma);
    for (double v : out.data()) EXPECT_NEAR(v, 0.37, 1e-9);
  }
}

TEST(GaussianBlur, NonPositiveSigma) {
  const GrayImage img(4, 4);
  EXPECT_SFM_ERROR(GaussianBlur(img, 0.0), ErrorCode::kNonPositiveSigma);
  EXPECT_SFM_ERROR(GaussianBlur(img, -1.0), ErrorCode::kNonPositiveSigma);
}

TEST(HalfSample, ConstantImage) {
  const GrayImage out = HalfSample(GrayImage(4, 4, 0.5));
  ASSERT_EQ(out.width(), 2);
  ASSERT_EQ(out.height(), 2);
  for (double v : out.data()) EXPECT_EQ(v, 0.5);
}

TEST(HalfSample, PicksEvenPixels) {
  GrayImage img(4, 2);
  for (int i = 0; i < 8; ++i) img.data()[i] = i / 10.0;
  const GrayImage out = HalfSample(img);
  ASSERT_EQ(out.width(), 2);
  ASSERT_EQ(out.height(), 1);
  EXPECT_EQ(out.at(0, 0), 0.0);
  EXPECT_EQ(out.at(1, 0), 0.2);
}

TEST(HalfSample, TooSmall) {
  EXPECT_SFM_ERROR(HalfSample(GrayImage(1, 1)), ErrorCode::kImageTooSmall);
  EXPECT_SFM_ERROR(HalfSample(GrayImage(5, 1)), ErrorCode::kImageTooSmall);
}

TEST(GrayImage, ZeroDimension) { EXPECT_SFM_ERROR(GrayImage(0, 3), ErrorCode::kZeroDimension); }

}  // namespace
