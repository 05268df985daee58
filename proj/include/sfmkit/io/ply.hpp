#pragma once

#include <cmath>
#include <fstream>
#include <span>
#include <string>

#include <fmt/format.h>

#include "sfmkit/core/error.hpp"
#include "sfmkit/core/matrix.hpp"

namespace sfm {

struct CloudPoint {
  Vec3 position;
  double intensity = 0.0;  // mean gray value in [0, 1]
};

inline int IntensityToByte(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<int>(v * 255.0);
}

inline std::string FormatPly(std::span<const CloudPoint> cloud) {
  if (cloud.empty()) Fail(ErrorCode::kEmptyCloud, "point cloud is empty");
  std::string out = fmt::format(
      "ply\nformat ascii 1.0\nelement vertex {}\n"
      "property float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
      cloud.size());
  for (const CloudPoint& p : cloud) {
    const int c = IntensityToByte(p.intensity);
    // float shortest round-trip; +0.0f folds negative zero.
    fmt::format_to(std::back_inserter(out), "{} {} {} {} {} {}\n", static_cast<float>(p.position[0]) + 0.0f,
                   static_cast<float>(p.position[1]) + 0.0f, static_cast<float>(p.position[2]) + 0.0f, c, c, c);
  }
  return out;
}

inline void WriteTextFile(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) Fail(ErrorCode::kIoError, "cannot open " + path + " for writing");
  f << content;
  if (!f) Fail(ErrorCode::kIoError, "failed writing " + path);
}

inline void WritePly(const std::string& path, std::span<const CloudPoint> cloud) {
  WriteTextFile(path, FormatPly(cloud));
}

}  // namespace sfm
