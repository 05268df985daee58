#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "sfmkit/core/error.hpp"
#include "sfmkit/geometry/camera.hpp"

namespace sfm {

// {"fx": .., "fy": .., "cx": .., "cy": .., "skew": ..}; skew defaults to 0.
inline CameraIntrinsics IntrinsicsFromJson(const nlohmann::json& j) {
  CameraIntrinsics k;
  try {
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.skew = j.value("skew", 0.0);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kInvalidArgument, std::string("intrinsics: ") + e.what());
  }
  if (!k.valid()) Fail(ErrorCode::kInvalidArgument, "intrinsics: focal lengths must be positive and finite");
  return k;
}

inline nlohmann::json IntrinsicsToJson(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"skew", k.skew}};
}

inline nlohmann::json ReadJsonFile(const std::string& path) {
  std::ifstream f(path);
  if (!f) Fail(ErrorCode::kIoError, "cannot open " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    Fail(ErrorCode::kCorruptFile, path + ": " + e.what());
  }
}

inline CameraIntrinsics LoadIntrinsics(const std::string& path) { return IntrinsicsFromJson(ReadJsonFile(path)); }

}  // namespace sfm
