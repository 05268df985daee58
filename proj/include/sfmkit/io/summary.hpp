#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "json.hpp"

#include "sfmkit/core/error.hpp"
#include "sfmkit/io/intrinsics.hpp"
#include "sfmkit/io/ply.hpp"
#include "sfmkit/sfm/pipeline.hpp"

namespace sfm {

struct PairStat {
  int i = 0;
  int j = 0;
  int putative = 0;
  int inliers = 0;
};

struct ViewRecord {
  int image = 0;
  CameraPose pose;
  double mean_reproj_px = 0.0;  // over the view's triangulated observations at exit
  double before_px = 0.0;       // final bundle adjustment, per-view mean error before
  double after_px = 0.0;        // and after
};

// Everything the export and report stages need, detached from the
// in-memory pipeline state.
struct ReconstructionSummary {
  std::vector<std::string> image_names;
  CameraIntrinsics intrinsics;
  std::vector<int> keypoint_counts;
  std::vector<PairStat> pairs;
  std::vector<ViewRecord> views;  // sorted by image index
  std::vector<int> failed;
  std::vector<CloudPoint> cloud;
};

inline ReconstructionSummary Summarize(const SfmResult& result, std::vector<std::string> names) {
  const ReconstructionState& s = result.state;
  if (names.size() != s.keypoints.size()) Fail(ErrorCode::kInvalidArgument, "one name per image is required");
  ReconstructionSummary out;
  out.image_names = std::move(names);
  out.intrinsics = s.intrinsics;
  for (const auto& kp : s.keypoints) out.keypoint_counts.push_back(static_cast<int>(kp.size()));
  for (const PairMatches& p : s.pairs) out.pairs.push_back({p.i, p.j, p.putative, static_cast<int>(p.inliers.size())});

  const BundleAdjustmentRun* final_run = result.ba_runs.empty() ? nullptr : &result.ba_runs.back();
  for (const auto& [image, pose] : s.poses) {
    ViewRecord v{image, pose, MeanViewError(s, image), NAN, NAN};
    if (final_run) {
      const auto it = std::find(final_run->images.begin(), final_run->images.end(), image);
      if (it != final_run->images.end()) {
        const auto k = static_cast<std::size_t>(it - final_run->images.begin());
        v.before_px = final_run->report.per_view_before[k];
        v.after_px = final_run->report.per_view_after[k];
      }
    }
    out.views.push_back(v);
  }
  out.failed = s.failed;
  std::sort(out.failed.begin(), out.failed.end());

  for (const Track& t : s.tracks) {
    if (t.status != TrackStatus::kTriangulated) continue;
    double sum = 0.0;
    int n = 0;
    for (const auto& o : t.observations) {
      if (!s.is_registered(o.image) || s.intensities.empty()) continue;
      sum += s.intensities[o.image][o.keypoint];
      ++n;
    }
    out.cloud.push_back({t.point, n ? sum / n : 0.5});
  }
  return out;
}

namespace detail {

// Folds -0.0 so serialized output does not depend on the sign of zero.
inline double Clean(double v) { return v + 0.0; }

template <int R, int C>
nlohmann::json VecJson(const Matrix<R, C>& m) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < R * C; ++i) a.push_back(Clean(m[i]));
  return a;
}

inline nlohmann::json NumberOrNull(double v) { return std::isfinite(v) ? nlohmann::json(Clean(v)) : nlohmann::json(); }

inline double NumberOrNan(const nlohmann::json& j) { return j.is_null() ? NAN : j.get<double>(); }

template <int N>
Matrix<N, 1> VecFrom(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != N) Fail(ErrorCode::kCorruptFile, "expected an array of " + std::to_string(N));
  Matrix<N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = j[i].get<double>();
  return v;
}

}  // namespace detail

// Pose records ordered by image name.
inline nlohmann::json PosesJson(const ReconstructionSummary& s) {
  std::vector<const ViewRecord*> views;
  for (const auto& v : s.views) views.push_back(&v);
  std::stable_sort(views.begin(), views.end(), [&](const ViewRecord* a, const ViewRecord* b) {
    return s.image_names[a->image] < s.image_names[b->image];
  });
  nlohmann::json out = nlohmann::json::array();
  for (const ViewRecord* v : views) {
    const Vec3 c = v->pose.center();
    out.push_back({{"image", s.image_names[v->image]},
                   {"rotation", detail::VecJson(v->pose.rotation)},
                   {"translation", detail::VecJson(v->pose.translation)},
                   {"center", detail::VecJson(c)},
                   {"mean_reproj_px", detail::NumberOrNull(v->mean_reproj_px)}});
  }
  return out;
}

inline nlohmann::json SummaryToJson(const ReconstructionSummary& s) {
  nlohmann::json j;
  j["images"] = s.image_names;
  j["intrinsics"] = IntrinsicsToJson(s.intrinsics);
  j["keypoint_counts"] = s.keypoint_counts;
  j["pairs"] = nlohmann::json::array();
  for (const PairStat& p : s.pairs) j["pairs"].push_back({p.i, p.j, p.putative, p.inliers});
  j["views"] = nlohmann::json::array();
  for (const ViewRecord& v : s.views)
    j["views"].push_back({{"image", v.image},
                          {"rotation", detail::VecJson(v.pose.rotation)},
                          {"translation", detail::VecJson(v.pose.translation)},
                          {"mean_reproj_px", detail::NumberOrNull(v.mean_reproj_px)},
                          {"before_px", detail::NumberOrNull(v.before_px)},
                          {"after_px", detail::NumberOrNull(v.after_px)}});
  j["failed"] = s.failed;
  j["cloud"] = nlohmann::json::array();
  for (const CloudPoint& p : s.cloud)
    j["cloud"].push_back({detail::Clean(p.position[0]), detail::Clean(p.position[1]), detail::Clean(p.position[2]),
                          detail::Clean(p.intensity)});
  return j;
}

inline ReconstructionSummary SummaryFromJson(const nlohmann::json& j) {
  ReconstructionSummary s;
  try {
    s.image_names = j.at("images").get<std::vector<std::string>>();
    s.intrinsics = IntrinsicsFromJson(j.at("intrinsics"));
    s.keypoint_counts = j.at("keypoint_counts").get<std::vector<int>>();
    for (const auto& p : j.at("pairs")) s.pairs.push_back({p.at(0), p.at(1), p.at(2), p.at(3)});
    for (const auto& v : j.at("views")) {
      ViewRecord r;
      r.image = v.at("image").get<int>();
      const auto rot = detail::VecFrom<9>(v.at("rotation"));
      for (int k = 0; k < 9; ++k) r.pose.rotation[k] = rot[k];
      r.pose.translation = detail::VecFrom<3>(v.at("translation"));
      r.mean_reproj_px = detail::NumberOrNan(v.at("mean_reproj_px"));
      r.before_px = detail::NumberOrNan(v.at("before_px"));
      r.after_px = detail::NumberOrNan(v.at("after_px"));
      if (r.image < 0 || r.image >= static_cast<int>(s.image_names.size()))
        Fail(ErrorCode::kCorruptFile, "view references an unknown image");
      s.views.push_back(r);
    }
    s.failed = j.at("failed").get<std::vector<int>>();
    for (const auto& p : j.at("cloud")) {
      const auto v = detail::VecFrom<4>(p);
      s.cloud.push_back({{v[0], v[1], v[2]}, v[3]});
    }
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kCorruptFile, std::string("reconstruction summary: ") + e.what());
  }
  return s;
}

inline std::string KeypointsCsv(const ReconstructionSummary& s) {
  std::string out = "image,count\n";
  for (std::size_t i = 0; i < s.keypoint_counts.size(); ++i)
    out += fmt::format("{},{}\n", s.image_names[i], s.keypoint_counts[i]);
  return out;
}

inline std::string MatchesCsv(std::span<const PairStat> pairs) {
  std::string out = "i,j,putative,inliers\n";
  for (const PairStat& p : pairs) out += fmt::format("{},{},{},{}\n", p.i, p.j, p.putative, p.inliers);
  return out;
}

inline std::string ReprojErrorCsv(const ReconstructionSummary& s) {
  std::string out = "image,before_px,after_px\n";
  for (const ViewRecord& v : s.views) {
    if (!std::isfinite(v.before_px) || !std::isfinite(v.after_px)) continue;
    out += fmt::format("{},{},{}\n", s.image_names[v.image], detail::Clean(v.before_px), detail::Clean(v.after_px));
  }
  return out;
}

inline void WriteJsonFile(const std::string& path, const nlohmann::json& j) { WriteTextFile(path, j.dump(2) + "\n"); }

inline void ExportCloudAndPoses(const ReconstructionSummary& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  WritePly((dir / "cloud.ply").string(), s.cloud);
  WriteJsonFile((dir / "poses.json").string(), PosesJson(s));
}

inline void ExportReport(const ReconstructionSummary& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  WriteTextFile((dir / "keypoints_per_image.csv").string(), KeypointsCsv(s));
  WriteTextFile((dir / "matches.csv").string(), MatchesCsv(s.pairs));
  WriteTextFile((dir / "reproj_error.csv").string(), ReprojErrorCsv(s));
}

}  // namespace sfm
