// sfmkit command-line driver: detect | match | reconstruct | export | report.

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "sfmkit/image/image.hpp"
#include "sfmkit/io/intrinsics.hpp"
#include "sfmkit/io/stage_files.hpp"
#include "sfmkit/io/summary.hpp"
#include "sfmkit/sfm/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;
constexpr int kExitUsage = 2;

struct Options {
  std::string images;
  std::string intrinsics;
  std::string out = "out";
  std::string config;
  bool resume = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<double> ratio;
  std::optional<double> ransac_thresh_px;
  std::optional<double> min_tri_angle_deg;
  std::optional<double> max_reproj_px;
  std::optional<int> local_ba_interval;
};

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

void ConfigureLogging() {
  auto logger = spdlog::stderr_color_mt("sfmkit");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("SFMKIT_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only honour a real match.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

// Keys mirror the long flag names with '-' replaced by '_'. Flags win.
sfm::PipelineConfig BuildConfig(const Options& o) {
  sfm::PipelineConfig cfg;
  if (!o.config.empty()) {
    nlohmann::json j;
    try {
      j = sfm::ReadJsonFile(o.config);
    } catch (const sfm::Error& e) {
      throw UsageError(e.what());
    }
    try {
      cfg.ransac.rng_seed = j.value("seed", cfg.ransac.rng_seed);
      cfg.threads = j.value("threads", cfg.threads);
      cfg.ratio = j.value("ratio", cfg.ratio);
      cfg.ransac.inlier_threshold_px = j.value("ransac_thresh_px", cfg.ransac.inlier_threshold_px);
      cfg.ransac.max_iterations = j.value("ransac_max_iterations", cfg.ransac.max_iterations);
      cfg.min_triangulation_angle_deg = j.value("min_tri_angle_deg", cfg.min_triangulation_angle_deg);
      cfg.max_reproj_px = j.value("max_reproj_px", cfg.max_reproj_px);
      cfg.local_ba_interval = j.value("local_ba_interval", cfg.local_ba_interval);
      cfg.min_init_inliers = j.value("min_init_inliers", cfg.min_init_inliers);
      cfg.min_pnp_correspondences = j.value("min_pnp_correspondences", cfg.min_pnp_correspondences);
      if (j.contains("sift")) {
        const auto& s = j.at("sift");
        cfg.sift.layers_per_octave = s.value("layers_per_octave", cfg.sift.layers_per_octave);
        cfg.sift.contrast_threshold = s.value("contrast_threshold", cfg.sift.contrast_threshold);
        cfg.sift.edge_threshold = s.value("edge_threshold", cfg.sift.edge_threshold);
        cfg.sift.base_sigma = s.value("base_sigma", cfg.sift.base_sigma);
        cfg.sift.max_octaves = s.value("max_octaves", cfg.sift.max_octaves);
      }
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
  }
  if (o.seed) cfg.ransac.rng_seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.ratio) cfg.ratio = *o.ratio;
  if (o.ransac_thresh_px) cfg.ransac.inlier_threshold_px = *o.ransac_thresh_px;
  if (o.min_tri_angle_deg) cfg.min_triangulation_angle_deg = *o.min_tri_angle_deg;
  if (o.max_reproj_px) cfg.max_reproj_px = *o.max_reproj_px;
  if (o.local_ba_interval) cfg.local_ba_interval = *o.local_ba_interval;
  try {
    sfm::ValidateConfig(cfg);
  } catch (const sfm::Error& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

std::vector<fs::path> ListImages(const std::string& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".pgm") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  if (out.size() < 2) throw UsageError("need at least two .png/.pgm images in " + dir);
  return out;
}

sfm::FeatureFile Detect(const Options& o, const sfm::PipelineConfig& cfg) {
  const auto paths = ListImages(o.images);
  std::vector<sfm::GrayImage> images(paths.size());
  sfm::ParallelFor(paths.size(), cfg.threads, [&](std::size_t i) { images[i] = sfm::LoadImage(paths[i].string()); });
  sfm::FeatureRun run = sfm::DetectAll(images, cfg);
  sfm::FeatureFile f;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    f.image_names.push_back(paths[i].filename().string());
    spdlog::debug("{}: {} keypoints", f.image_names.back(), run.features[i].keypoints.size());
  }
  f.features = std::move(run.features);
  f.intensities = std::move(run.intensities);
  spdlog::info("detected features in {} images", f.features.size());
  return f;
}

sfm::MatchFile Match(const sfm::FeatureFile& f, const sfm::PipelineConfig& cfg) {
  sfm::MatchFile m;
  m.num_images = static_cast<int>(f.features.size());
  m.pairs = sfm::MatchAllPairs(f.features, cfg);
  int verified = 0;
  for (const auto& p : m.pairs) verified += p.inliers.empty() ? 0 : 1;
  spdlog::info("matched {} pairs, {} geometrically verified", m.pairs.size(), verified);
  return m;
}

void Reconstruct(const Options& o, const sfm::PipelineConfig& cfg, const sfm::CameraIntrinsics& k) {
  const fs::path out(o.out);
  fs::create_directories(out);
  sfm::FeatureFile features;
  sfm::MatchFile matches;
  if (o.resume) {
    features = sfm::ReadFeatureFile((out / "features.bin").string());
    matches = sfm::ReadMatchFile((out / "matches.bin").string());
    if (matches.num_images != static_cast<int>(features.features.size()))
      sfm::Fail(sfm::ErrorCode::kCorruptFile, "features.bin and matches.bin disagree on the image count");
  } else {
    features = Detect(o, cfg);
    sfm::WriteFeatureFile((out / "features.bin").string(), features);
    matches = Match(features, cfg);
    sfm::WriteMatchFile((out / "matches.bin").string(), matches);
  }
  std::vector<std::vector<sfm::Vec2>> positions;
  for (const auto& f : features.features) positions.push_back(sfm::KeypointPositions(f));
  sfm::ReconstructionState state = sfm::MakeState(k, std::move(positions), std::move(matches.pairs));
  state.intensities = std::move(features.intensities);
  const sfm::SfmResult result =
      sfm::Reconstruct(std::move(state), cfg, [](const sfm::ViewProgress& p) { spdlog::info(sfm::FormatProgress(p)); });
  const sfm::ReconstructionSummary summary = sfm::Summarize(result, features.image_names);
  spdlog::info("registered {} of {} views, {} points", summary.views.size(), summary.image_names.size(),
               summary.cloud.size());
  sfm::WriteJsonFile((out / "reconstruction.json").string(), sfm::SummaryToJson(summary));
  sfm::ExportCloudAndPoses(summary, out);
  sfm::ExportReport(summary, out);
}

sfm::ReconstructionSummary LoadSummary(const Options& o) {
  return sfm::SummaryFromJson(sfm::ReadJsonFile((fs::path(o.out) / "reconstruction.json").string()));
}

void AddPipelineFlags(CLI::App* cmd, Options& o) {
  cmd->add_option("--seed", o.seed, "RANSAC seed");
  cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--ratio", o.ratio, "descriptor ratio-test threshold");
  cmd->add_option("--ransac-thresh-px", o.ransac_thresh_px, "Sampson inlier threshold in pixels");
  cmd->add_option("--min-tri-angle-deg", o.min_tri_angle_deg, "minimum triangulation angle in degrees");
  cmd->add_option("--max-reproj-px", o.max_reproj_px, "maximum reprojection error in pixels");
  cmd->add_option("--local-ba-interval", o.local_ba_interval, "registered views between bundle adjustments");
  cmd->add_option("--config", o.config, "JSON configuration file");
}

}  // namespace

int main(int argc, char** argv) {
  ConfigureLogging();
  Options o;
  CLI::App app{"Incremental structure-from-motion toolkit"};
  app.require_subcommand(1);

  auto* detect = app.add_subcommand("detect", "detect SIFT features, write <out>/features.bin");
  detect->add_option("--images", o.images, "directory of .png/.pgm images")->required()->check(CLI::ExistingDirectory);
  detect->add_option("--out", o.out, "output directory");
  AddPipelineFlags(detect, o);

  auto* match = app.add_subcommand("match", "match <out>/features.bin pairwise, write <out>/matches.bin");
  match->add_option("--out", o.out, "working directory");
  AddPipelineFlags(match, o);

  auto* reconstruct = app.add_subcommand("reconstruct", "run the pipeline and write every artifact");
  reconstruct->add_option("--images", o.images, "directory of .png/.pgm images")->check(CLI::ExistingDirectory);
  reconstruct->add_option("--intrinsics", o.intrinsics, "intrinsics JSON {fx, fy, cx, cy, skew}")
      ->required()
      ->check(CLI::ExistingFile);
  reconstruct->add_option("--out", o.out, "output directory");
  reconstruct->add_flag("--resume", o.resume, "reuse <out>/features.bin and <out>/matches.bin");
  AddPipelineFlags(reconstruct, o);

  auto* exporter = app.add_subcommand("export", "write cloud.ply and poses.json from <out>/reconstruction.json");
  exporter->add_option("--out", o.out, "working directory");

  auto* report = app.add_subcommand("report", "write the CSV reports from <out>/reconstruction.json");
  report->add_option("--out", o.out, "working directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*detect) {
      const auto cfg = BuildConfig(o);
      fs::create_directories(o.out);
      sfm::WriteFeatureFile((fs::path(o.out) / "features.bin").string(), Detect(o, cfg));
    } else if (*match) {
      const auto cfg = BuildConfig(o);
      const auto features = sfm::ReadFeatureFile((fs::path(o.out) / "features.bin").string());
      sfm::WriteMatchFile((fs::path(o.out) / "matches.bin").string(), Match(features, cfg));
    } else if (*reconstruct) {
      if (!o.resume && o.images.empty()) throw UsageError("--images is required unless --resume is given");
      const auto cfg = BuildConfig(o);
      sfm::CameraIntrinsics k;
      try {
        k = sfm::LoadIntrinsics(o.intrinsics);
      } catch (const sfm::Error& e) {
        throw UsageError(e.what());
      }
      Reconstruct(o, cfg, k);
    } else if (*exporter) {
      sfm::ExportCloudAndPoses(LoadSummary(o), o.out);
    } else if (*report) {
      sfm::ExportReport(LoadSummary(o), o.out);
    }
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    std::fputs(app.help().c_str(), stderr);
    return kExitUsage;
  } catch (const sfm::Error& e) {
    spdlog::error("{}: {}", sfm::ErrorCodeName(e.code()), e.what());
    return kExitFatal;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFatal;
  }
  return kExitOk;
}
