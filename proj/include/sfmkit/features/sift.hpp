#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "sfmkit/core/error.hpp"
#include "sfmkit/image/image.hpp"

namespace sfm {

struct SiftParams {
  int layers_per_octave = 3;
  double contrast_threshold = 0.04;
  double edge_threshold = 10.0;
  double base_sigma = 1.6;
  // <= 0 means floor(log2(min(w, h))) - 2.
  int max_octaves = 0;
  // Blur already present in the input image.
  double assumed_blur = 0.5;
  // Pre-filter on |DoG| applied before the 26-neighbor test, as a fraction of
  // contrast_threshold / layers_per_octave. Zero disables it.
  double detection_threshold_ratio = 0.5;
  int max_refine_iterations = 5;
  int image_border = 5;
};

struct Octave {
  std::vector<GrayImage> gaussians;
  std::vector<GrayImage> dogs;
};

struct ScaleSpace {
  std::vector<Octave> octaves;
  double base_sigma = 1.6;
  int layers_per_octave = 3;
  double k = 0.0;
};

struct ExtremumCandidate {
  int octave = 0;
  int layer = 0;  // DoG index
  int x = 0;
  int y = 0;
};

struct Keypoint {
  double x = 0.0;  // original-image frame
  double y = 0.0;
  double sigma = 0.0;
  int octave = 0;
  int layer = 0;
  double orientation = 0.0;  // radians in [0, 2pi), gradient angle in image coordinates
  double response = 0.0;     // interpolated DoG value
  double layer_offset = 0.0; // sub-layer offset from the quadratic fit
};

struct Descriptor {
  std::array<float, 128> values{};
};

struct DescriptorResult {
  Descriptor descriptor;
  bool truncated = false;   // window left the image
  bool degenerate = false;  // zero gradient energy
};

struct RefineStats {
  int candidates = 0;
  int unstable = 0;
  int low_contrast = 0;
  int edge = 0;
  int kept = 0;
};

inline int OctaveCount(int width, int height, const SiftParams& params) {
  const int min_dim = std::min(width, height);
  int n = static_cast<int>(std::floor(std::log2(static_cast<double>(min_dim)))) - 2;
  if (params.max_octaves > 0) n = std::min(n, params.max_octaves);
  return n;
}

inline double OctaveSigma(const ScaleSpace& ss, double layer) {
  return ss.base_sigma * std::pow(2.0, layer / ss.layers_per_octave);
}

inline ScaleSpace BuildScaleSpace(const GrayImage& img, const SiftParams& params) {
  if (params.layers_per_octave < 1 || !(params.base_sigma > 0) || !(params.contrast_threshold > 0) ||
      !(params.edge_threshold > 0))
    Fail(ErrorCode::kInvalidArgument, "invalid SIFT parameters");
  const int num_octaves = OctaveCount(img.width(), img.height(), params);
  if (num_octaves < 1) Fail(ErrorCode::kImageTooSmall, "image too small for one octave");

  ScaleSpace ss;
  ss.base_sigma = params.base_sigma;
  ss.layers_per_octave = params.layers_per_octave;
  ss.k = std::pow(2.0, 1.0 / params.layers_per_octave);
  const int num_gaussians = params.layers_per_octave + 3;

  // Incremental blur between consecutive Gaussian levels.
  std::vector<double> increments(num_gaussians, 0.0);
  for (int i = 1; i < num_gaussians; ++i) {
    const double prev = params.base_sigma * std::pow(ss.k, i - 1);
    const double cur = prev * ss.k;
    increments[i] = std::sqrt(cur * cur - prev * prev);
  }

  const double initial = params.base_sigma * params.base_sigma - params.assumed_blur * params.assumed_blur;
  GrayImage base = initial > 1e-6 ? GaussianBlur(img, std::sqrt(initial)) : img;

  ss.octaves.resize(num_octaves);
  for (int o = 0; o < num_octaves; ++o) {
    Octave& oct = ss.octaves[o];
    oct.gaussians.reserve(num_gaussians);
    if (o == 0) {
      oct.gaussians.push_back(std::move(base));
    } else {
      oct.gaussians.push_back(HalfSample(ss.octaves[o - 1].gaussians[params.layers_per_octave]));
    }
    for (int i = 1; i < num_gaussians; ++i)
      oct.gaussians.push_back(GaussianBlur(oct.gaussians[i - 1], increments[i]));
    for (int i = 0; i + 1 < num_gaussians; ++i) {
      const GrayImage& a = oct.gaussians[i];
      const GrayImage& b = oct.gaussians[i + 1];
      GrayImage d(a.width(), a.height());
      for (std::size_t p = 0; p < d.data().size(); ++p) d.data()[p] = b.data()[p] - a.data()[p];
      oct.dogs.push_back(std::move(d));
    }
  }
  return ss;
}

// Strict 26-neighbor extrema on interior DoG layers. `threshold` discards
// candidates with |D| <= threshold before the neighbor test.
inline std::vector<ExtremumCandidate> DetectExtrema(const ScaleSpace& ss, double threshold = 0.0,
                                                    int border = 1) {
  std::vector<ExtremumCandidate> out;
  border = std::max(border, 1);
  for (int o = 0; o < static_cast<int>(ss.octaves.size()); ++o) {
    const auto& dogs = ss.octaves[o].dogs;
    if (dogs.size() < 3) Fail(ErrorCode::kInvalidArgument, "need >= 3 DoG layers per octave");
    for (int l = 1; l + 1 < static_cast<int>(dogs.size()); ++l) {
      const GrayImage& prev = dogs[l - 1];
      const GrayImage& cur = dogs[l];
      const GrayImage& next = dogs[l + 1];
      for (int y = border; y < cur.height() - border; ++y) {
        for (int x = border; x < cur.width() - border; ++x) {
          const double v = cur.at(x, y);
          if (std::abs(v) <= threshold) continue;
          bool is_max = true, is_min = true;
          for (int dy = -1; dy <= 1 && (is_max || is_min); ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const double a = prev.at(x + dx, y + dy);
              const double b = cur.at(x + dx, y + dy);
              const double c = next.at(x + dx, y + dy);
              if (!(v > a && v > c && (v > b || (dx == 0 && dy == 0)))) is_max = false;
              if (!(v < a && v < c && (v < b || (dx == 0 && dy == 0)))) is_min = false;
            }
          }
          if (is_max || is_min) out.push_back({o, l, x, y});
        }
      }
    }
  }
  return out;
}

namespace detail {

struct DogDerivatives {
  std::array<double, 3> g;     // dx, dy, ds
  std::array<double, 9> h;     // row-major Hessian over (x, y, s)
};

inline DogDerivatives DogDerivativesAt(const std::vector<GrayImage>& dogs, int l, int x, int y) {
  const GrayImage& p = dogs[l - 1];
  const GrayImage& c = dogs[l];
  const GrayImage& n = dogs[l + 1];
  const double v2 = 2.0 * c.at(x, y);
  DogDerivatives d;
  d.g = {0.5 * (c.at(x + 1, y) - c.at(x - 1, y)), 0.5 * (c.at(x, y + 1) - c.at(x, y - 1)),
         0.5 * (n.at(x, y) - p.at(x, y))};
  const double dxx = c.at(x + 1, y) + c.at(x - 1, y) - v2;
  const double dyy = c.at(x, y + 1) + c.at(x, y - 1) - v2;
  const double dss = n.at(x, y) + p.at(x, y) - v2;
  const double dxy = 0.25 * (c.at(x + 1, y + 1) - c.at(x - 1, y + 1) - c.at(x + 1, y - 1) + c.at(x - 1, y - 1));
  const double dxs = 0.25 * (n.at(x + 1, y) - n.at(x - 1, y) - p.at(x + 1, y) + p.at(x - 1, y));
  const double dys = 0.25 * (n.at(x, y + 1) - n.at(x, y - 1) - p.at(x, y + 1) + p.at(x, y - 1));
  d.h = {dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss};
  return d;
}

// Solves H x = -g for a 3x3 system by Cramer's rule; false when singular.
inline bool SolveOffset(const DogDerivatives& d, std::array<double, 3>& x) {
  const auto& h = d.h;
  const double det = h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6]) +
                     h[2] * (h[3] * h[7] - h[4] * h[6]);
  if (std::abs(det) < 1e-30) return false;
  const std::array<double, 3> b = {-d.g[0], -d.g[1], -d.g[2]};
  auto det_with = [&](int col) {
    std::array<double, 9> m = h;
    for (int r = 0; r < 3; ++r) m[r * 3 + col] = b[r];
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  };
  for (int i = 0; i < 3; ++i) x[i] = det_with(i) / det;
  return std::isfinite(x[0]) && std::isfinite(x[1]) && std::isfinite(x[2]);
}

}  // namespace detail

// Quadratic sub-pixel/sub-scale refinement with contrast and edge rejection.
inline std::vector<Keypoint> RefineAndFilter(const std::vector<ExtremumCandidate>& candidates,
                                             const ScaleSpace& ss, const SiftParams& params,
                                             RefineStats* stats = nullptr) {
  RefineStats local;
  local.candidates = static_cast<int>(candidates.size());
  std::vector<Keypoint> out;
  const int s = ss.layers_per_octave;
  const int border = std::max(params.image_border, 1);
  const double r = params.edge_threshold;

  for (const ExtremumCandidate& cand : candidates) {
    const auto& dogs = ss.octaves[cand.octave].dogs;
    const int w = dogs[0].width(), h = dogs[0].height();
    int x = cand.x, y = cand.y, l = cand.layer;
    std::array<double, 3> offset{};
    detail::DogDerivatives d;
    bool converged = false;
    for (int it = 0; it < params.max_refine_iterations; ++it) {
      d = detail::DogDerivativesAt(dogs, l, x, y);
      // A singular Hessian (e.g. a straight edge) leaves the discrete sample
      // in place; the contrast and edge tests below then decide.
      if (!detail::SolveOffset(d, offset)) {
        offset = {0.0, 0.0, 0.0};
        converged = true;
        break;
      }
      if (std::abs(offset[0]) < 0.5 && std::abs(offset[1]) < 0.5 && std::abs(offset[2]) < 0.5) {
        converged = true;
        break;
      }
      if (std::abs(offset[0]) > 1e6 || std::abs(offset[1]) > 1e6 || std::abs(offset[2]) > 1e6) break;
      x += static_cast<int>(std::lround(offset[0]));
      y += static_cast<int>(std::lround(offset[1]));
      l += static_cast<int>(std::lround(offset[2]));
      if (l < 1 || l > s || x < border || x >= w - border || y < border || y >= h - border) break;
    }
    if (!converged) {
      ++local.unstable;
      continue;
    }
    const double value = dogs[l].at(x, y) + 0.5 * (d.g[0] * offset[0] + d.g[1] * offset[1] + d.g[2] * offset[2]);
    if (std::abs(value) * s < params.contrast_threshold) {
      ++local.low_contrast;
      continue;
    }
    const double dxx = d.h[0], dxy = d.h[1], dyy = d.h[4];
    const double tr = dxx + dyy;
    const double det = dxx * dyy - dxy * dxy;
    if (det <= 0 || tr * tr * r >= (r + 1) * (r + 1) * det) {
      ++local.edge;
      continue;
    }
    Keypoint kp;
    const double scale = std::ldexp(1.0, cand.octave);
    kp.x = (x + offset[0]) * scale;
    kp.y = (y + offset[1]) * scale;
    kp.octave = cand.octave;
    kp.layer = l;
    kp.layer_offset = offset[2];
    kp.sigma = OctaveSigma(ss, l + offset[2]) * scale;
    kp.response = value;
    out.push_back(kp);
  }
  local.kept = static_cast<int>(out.size());
  if (stats) *stats = local;
  return out;
}

namespace detail {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Sobel gradient normalized to unit pixel spacing.
inline void SobelGradient(const GrayImage& img, int x, int y, double& gx, double& gy) {
  gx = (img.at(x + 1, y - 1) + 2.0 * img.at(x + 1, y) + img.at(x + 1, y + 1) - img.at(x - 1, y - 1) -
        2.0 * img.at(x - 1, y) - img.at(x - 1, y + 1)) / 8.0;
  gy = (img.at(x - 1, y + 1) + 2.0 * img.at(x, y + 1) + img.at(x + 1, y + 1) - img.at(x - 1, y - 1) -
        2.0 * img.at(x, y - 1) - img.at(x + 1, y - 1)) / 8.0;
}

inline double WrapAngle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;
  return a;
}

}  // namespace detail

struct OrientationParams {
  int bins = 36;
  double peak_ratio = 0.8;
  double window_factor = 1.5;  // Gaussian sigma as a multiple of the keypoint scale
  double radius_factor = 3.0;  // window radius in multiples of that sigma
};

// Dominant gradient orientations; one output keypoint per histogram peak
// within peak_ratio of the maximum.
inline std::vector<Keypoint> AssignOrientations(const std::vector<Keypoint>& keypoints, const ScaleSpace& ss,
                                                const OrientationParams& params = {}) {
  std::vector<Keypoint> out;
  out.reserve(keypoints.size());
  const int nbins = params.bins;
  std::vector<double> hist(nbins), smooth(nbins);
  for (const Keypoint& kp : keypoints) {
    const GrayImage& img = ss.octaves[kp.octave].gaussians[kp.layer];
    const double scale = std::ldexp(1.0, kp.octave);
    const double ox = kp.x / scale, oy = kp.y / scale;
    const double sigma = params.window_factor * kp.sigma / scale;
    const int radius = static_cast<int>(std::lround(params.radius_factor * sigma));
    const int cx = static_cast<int>(std::lround(ox)), cy = static_cast<int>(std::lround(oy));
    const double inv_two_sigma2 = -1.0 / (2.0 * sigma * sigma);

    std::fill(hist.begin(), hist.end(), 0.0);
    for (int dy = -radius; dy <= radius; ++dy) {
      const int y = cy + dy;
      if (y <= 0 || y >= img.height() - 1) continue;
      for (int dx = -radius; dx <= radius; ++dx) {
        const int x = cx + dx;
        if (x <= 0 || x >= img.width() - 1) continue;
        if (dx * dx + dy * dy > radius * radius) continue;
        double gx, gy;
        detail::SobelGradient(img, x, y, gx, gy);
        const double mag = std::sqrt(gx * gx + gy * gy);
        if (mag == 0.0) continue;
        const double angle = detail::WrapAngle(std::atan2(gy, gx));
        int bin = static_cast<int>(std::lround(angle * nbins / detail::kTwoPi));
        if (bin >= nbins) bin -= nbins;
        hist[bin] += std::exp((dx * dx + dy * dy) * inv_two_sigma2) * mag;
      }
    }
    for (int i = 0; i < nbins; ++i) {
      auto h = [&](int j) { return hist[(j + nbins) % nbins]; };
      smooth[i] = (h(i - 2) + h(i + 2)) * (1.0 / 16) + (h(i - 1) + h(i + 1)) * (4.0 / 16) + h(i) * (6.0 / 16);
    }
    const double max_value = *std::max_element(smooth.begin(), smooth.end());
    if (!(max_value > 0.0)) continue;
    for (int i = 0; i < nbins; ++i) {
      const double l = smooth[(i - 1 + nbins) % nbins];
      const double c = smooth[i];
      const double rr = smooth[(i + 1) % nbins];
      if (c > l && c > rr && c >= params.peak_ratio * max_value) {
        const double denom = l - 2.0 * c + rr;
        const double shift = denom != 0.0 ? 0.5 * (l - rr) / denom : 0.0;
        Keypoint oriented = kp;
        oriented.orientation = detail::WrapAngle((i + shift) * detail::kTwoPi / nbins);
        out.push_back(oriented);
      }
    }
  }
  return out;
}

struct DescriptorParams {
  int width = 4;             // spatial cells per side
  int bins = 8;              // orientation bins per cell
  double cell_scale = 3.0;   // cell size in multiples of the keypoint scale
  double clamp = 0.2;
};

// 4x4x8 gradient-orientation histogram in a window rotated to the keypoint
// orientation, trilinearly binned, normalized, clamped and renormalized.
inline DescriptorResult ComputeDescriptor(const Keypoint& kp, const ScaleSpace& ss,
                                          const DescriptorParams& params = {}) {
  const int d = params.width, n = params.bins;
  DescriptorResult result;
  const GrayImage& img = ss.octaves[kp.octave].gaussians[kp.layer];
  const double scale = std::ldexp(1.0, kp.octave);
  const double ox = kp.x / scale, oy = kp.y / scale;
  const double cell = params.cell_scale * kp.sigma / scale;
  const int radius = static_cast<int>(std::lround(cell * std::sqrt(2.0) * (d + 1) * 0.5));
  const double cos_t = std::cos(kp.orientation) / cell;
  const double sin_t = std::sin(kp.orientation) / cell;
  const double bins_per_rad = n / detail::kTwoPi;
  const double weight_scale = -1.0 / (0.5 * d * d);
  const int cx = static_cast<int>(std::lround(ox)), cy = static_cast<int>(std::lround(oy));

  std::vector<double> hist((d + 2) * (d + 2) * (n + 2), 0.0);
  auto at = [&](int r, int c, int o) -> double& { return hist[((r + 1) * (d + 2) + (c + 1)) * (n + 2) + o]; };

  for (int i = -radius; i <= radius; ++i) {
    for (int j = -radius; j <= radius; ++j) {
      // Offset in keypoint frame, in cell units.
      const double x_rot = j * cos_t + i * sin_t;
      const double y_rot = -j * sin_t + i * cos_t;
      const double rbin = y_rot + d / 2.0 - 0.5;
      const double cbin = x_rot + d / 2.0 - 0.5;
      if (rbin <= -1 || rbin >= d || cbin <= -1 || cbin >= d) continue;
      const int x = cx + j, y = cy + i;
      if (x <= 0 || x >= img.width() - 1 || y <= 0 || y >= img.height() - 1) {
        result.truncated = true;
        continue;
      }
      double gx, gy;
      detail::SobelGradient(img, x, y, gx, gy);
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag == 0.0) continue;
      const double weight = std::exp((x_rot * x_rot + y_rot * y_rot) * weight_scale);
      double obin = detail::WrapAngle(std::atan2(gy, gx) - kp.orientation) * bins_per_rad;
      const double v = mag * weight;

      const int r0 = static_cast<int>(std::floor(rbin));
      const int c0 = static_cast<int>(std::floor(cbin));
      int o0 = static_cast<int>(std::floor(obin));
      const double dr = rbin - r0, dc = cbin - c0, dor = obin - o0;
      if (o0 >= n) o0 -= n;
      for (int a = 0; a <= 1; ++a) {
        const double va = v * (a ? dr : 1 - dr);
        for (int b = 0; b <= 1; ++b) {
          const double vb = va * (b ? dc : 1 - dc);
          at(r0 + a, c0 + b, o0) += vb * (1 - dor);
          at(r0 + a, c0 + b, o0 + 1) += vb * dor;
        }
      }
    }
  }

  std::array<double, 128> raw{};
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) {
      at(r, c, 0) += at(r, c, n);  // wrap the orientation overflow bin
      for (int o = 0; o < n; ++o) raw[(r * d + c) * n + o] = at(r, c, o);
    }

  double norm = 0.0;
  for (double v : raw) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 1e-12)) {
    result.degenerate = true;
    return result;
  }
  double norm2 = 0.0;
  for (double& v : raw) {
    v = std::min(v / norm, params.clamp);
    norm2 += v * v;
  }
  norm2 = std::sqrt(norm2);
  for (int i = 0; i < 128; ++i) result.descriptor.values[i] = static_cast<float>(raw[i] / norm2);
  return result;
}

struct ImageFeatures {
  std::vector<Keypoint> keypoints;
  std::vector<Descriptor> descriptors;
  RefineStats stats;
};

inline ImageFeatures DetectFeatures(const GrayImage& img, const SiftParams& params = {}) {
  const ScaleSpace ss = BuildScaleSpace(img, params);
  const double threshold = params.detection_threshold_ratio * params.contrast_threshold / params.layers_per_octave;
  const auto candidates = DetectExtrema(ss, threshold, params.image_border);
  ImageFeatures out;
  const auto refined = RefineAndFilter(candidates, ss, params, &out.stats);
  const auto oriented = AssignOrientations(refined, ss);
  out.keypoints.reserve(oriented.size());
  out.descriptors.reserve(oriented.size());
  for (const Keypoint& kp : oriented) {
    DescriptorResult res = ComputeDescriptor(kp, ss);
    if (res.degenerate) continue;
    out.keypoints.push_back(kp);
    out.descriptors.push_back(res.descriptor);
  }
  return out;
}

}  // namespace sfm
