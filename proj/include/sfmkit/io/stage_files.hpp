#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "sfmkit/core/error.hpp"
#include "sfmkit/features/sift.hpp"
#include "sfmkit/sfm/tracks.hpp"

// Intermediate files for staged runs. Layout: 8 magic bytes, u32 version,
// then length-prefixed records in host byte order (little-endian targets).

namespace sfm {

inline constexpr std::array<char, 8> kFeatureMagic{'S', 'F', 'M', 'K', 'F', 'E', 'A', 'T'};
inline constexpr std::array<char, 8> kMatchMagic{'S', 'F', 'M', 'K', 'M', 'T', 'C', 'H'};
inline constexpr std::uint32_t kStageFileVersion = 1;

struct FeatureFile {
  std::vector<std::string> image_names;
  std::vector<ImageFeatures> features;
  std::vector<std::vector<float>> intensities;  // per keypoint
};

struct MatchFile {
  int num_images = 0;
  std::vector<PairMatches> pairs;
};

namespace detail {

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) Fail(ErrorCode::kIoError, "cannot open " + path + " for writing");
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void put(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void put_bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }

  void put_string(const std::string& s) {
    put(static_cast<std::uint64_t>(s.size()));
    put_bytes(s.data(), s.size());
  }

  void finish() {
    out_.flush();
    if (!out_) Fail(ErrorCode::kIoError, "failed writing " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) Fail(ErrorCode::kIoError, "cannot open " + path);
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }

  void get_bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) Fail(ErrorCode::kCorruptFile, path_ + ": truncated");
  }

  std::uint64_t get_count(std::uint64_t limit = 1ull << 32) {
    const auto n = get<std::uint64_t>();
    if (n > limit) Fail(ErrorCode::kCorruptFile, path_ + ": implausible record count");
    return n;
  }

  std::string get_string() {
    std::string s(get_count(1 << 20), '\0');
    get_bytes(s.data(), s.size());
    return s;
  }

  void expect_header(const std::array<char, 8>& magic) {
    std::array<char, 8> m{};
    get_bytes(m.data(), m.size());
    if (m != magic) Fail(ErrorCode::kUnsupportedFormat, path_ + ": wrong magic bytes");
    if (get<std::uint32_t>() != kStageFileVersion) Fail(ErrorCode::kUnsupportedFormat, path_ + ": unsupported version");
  }

  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) Fail(ErrorCode::kCorruptFile, path_ + ": trailing bytes");
  }

 private:
  std::string path_;
  std::ifstream in_;
};

}  // namespace detail

inline void WriteFeatureFile(const std::string& path, const FeatureFile& f) {
  detail::BinaryWriter w(path);
  w.put_bytes(kFeatureMagic.data(), kFeatureMagic.size());
  w.put(kStageFileVersion);
  w.put(static_cast<std::uint64_t>(f.features.size()));
  for (std::size_t i = 0; i < f.features.size(); ++i) {
    const ImageFeatures& img = f.features[i];
    w.put_string(i < f.image_names.size() ? f.image_names[i] : std::string{});
    w.put(static_cast<std::uint64_t>(img.keypoints.size()));
    for (std::size_t k = 0; k < img.keypoints.size(); ++k) {
      const Keypoint& kp = img.keypoints[k];
      w.put(kp.x);
      w.put(kp.y);
      w.put(kp.sigma);
      w.put(static_cast<std::int32_t>(kp.octave));
      w.put(static_cast<std::int32_t>(kp.layer));
      w.put(kp.orientation);
      w.put(kp.response);
      w.put(kp.layer_offset);
      w.put_bytes(img.descriptors[k].values.data(), sizeof(float) * 128);
      const float intensity = i < f.intensities.size() && k < f.intensities[i].size() ? f.intensities[i][k] : 0.0f;
      w.put(intensity);
    }
  }
  w.finish();
}

inline FeatureFile ReadFeatureFile(const std::string& path) {
  detail::BinaryReader r(path);
  r.expect_header(kFeatureMagic);
  FeatureFile f;
  const auto n = r.get_count(1 << 20);
  for (std::uint64_t i = 0; i < n; ++i) {
    f.image_names.push_back(r.get_string());
    ImageFeatures img;
    std::vector<float> intensity;
    const auto m = r.get_count(1 << 26);
    for (std::uint64_t k = 0; k < m; ++k) {
      Keypoint kp;
      kp.x = r.get<double>();
      kp.y = r.get<double>();
      kp.sigma = r.get<double>();
      kp.octave = r.get<std::int32_t>();
      kp.layer = r.get<std::int32_t>();
      kp.orientation = r.get<double>();
      kp.response = r.get<double>();
      kp.layer_offset = r.get<double>();
      Descriptor d;
      r.get_bytes(d.values.data(), sizeof(float) * 128);
      img.keypoints.push_back(kp);
      img.descriptors.push_back(d);
      intensity.push_back(r.get<float>());
    }
    f.features.push_back(std::move(img));
    f.intensities.push_back(std::move(intensity));
  }
  r.expect_end();
  return f;
}

inline void WriteMatchFile(const std::string& path, const MatchFile& m) {
  detail::BinaryWriter w(path);
  w.put_bytes(kMatchMagic.data(), kMatchMagic.size());
  w.put(kStageFileVersion);
  w.put(static_cast<std::uint64_t>(m.num_images));
  w.put(static_cast<std::uint64_t>(m.pairs.size()));
  for (const PairMatches& p : m.pairs) {
    w.put(static_cast<std::int32_t>(p.i));
    w.put(static_cast<std::int32_t>(p.j));
    w.put(static_cast<std::int32_t>(p.putative));
    for (int k = 0; k < 9; ++k) w.put(p.f[k]);
    w.put(static_cast<std::uint64_t>(p.inliers.size()));
    for (const Match& mt : p.inliers) {
      w.put(static_cast<std::int32_t>(mt.idx_left));
      w.put(static_cast<std::int32_t>(mt.idx_right));
      w.put(mt.distance);
    }
  }
  w.finish();
}

inline MatchFile ReadMatchFile(const std::string& path) {
  detail::BinaryReader r(path);
  r.expect_header(kMatchMagic);
  MatchFile m;
  m.num_images = static_cast<int>(r.get_count(1 << 20));
  const auto n = r.get_count(1ull << 40);
  for (std::uint64_t p = 0; p < n; ++p) {
    PairMatches pm;
    pm.i = r.get<std::int32_t>();
    pm.j = r.get<std::int32_t>();
    pm.putative = r.get<std::int32_t>();
    for (int k = 0; k < 9; ++k) pm.f[k] = r.get<double>();
    const auto count = r.get_count(1 << 26);
    for (std::uint64_t k = 0; k < count; ++k) {
      Match mt;
      mt.idx_left = r.get<std::int32_t>();
      mt.idx_right = r.get<std::int32_t>();
      mt.distance = r.get<double>();
      pm.inliers.push_back(mt);
    }
    m.pairs.push_back(std::move(pm));
  }
  r.expect_end();
  return m;
}

}  // namespace sfm
