// Randomized invariants, 1000 cases each unless noted.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "sfmkit/ba/bundle_adjustment.hpp"
#include "sfmkit/core/numerics.hpp"
#include "sfmkit/features/sift.hpp"
#include "sfmkit/geometry/resection.hpp"
#include "sfmkit/geometry/two_view.hpp"
#include "sfmkit/image/image.hpp"
#include "sfmkit/io/ply.hpp"
#include "sfmkit/matching/matching.hpp"
#include "sfmkit/sfm/tracks.hpp"
#include "support/scene.hpp"

namespace {

using namespace sfm;

constexpr int kCases = 1000;

double Uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Vec3 RandomVec3(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  return {g(rng), g(rng), g(rng)};
}

Mat3 RandomMat3(std::mt19937_64& rng) {
  Mat3 m;
  for (int i = 0; i < 9; ++i) m[i] = Uniform(rng, -1, 1);
  return m;
}

GrayImage RandomImage(std::mt19937_64& rng, int w, int h) {
  GrayImage img(w, h);
  for (double& v : img.data()) v = Uniform(rng, 0, 1);
  return img;
}

double RotationDistance(const Mat3& a, const Mat3& b) { return RotationLog(a * b.transpose()).norm(); }

// Two cameras looking at a cloud near z = 5, first camera at the identity.
struct RandomPair {
  CameraIntrinsics k{800, 800, 320, 240, 0};
  CameraPose right;
  std::vector<Vec3> points;
  std::vector<Vec2> px_left, px_right;
};

RandomPair MakeRandomPair(std::mt19937_64& rng, int n) {
  RandomPair p;
  const Vec3 center = RandomVec3(rng, 0.7) + Vec3{0.3, 0, 0};
  p.right = CameraPose::FromCenter(sfmtest::RandomRotation(rng, 0.3), center);
  while (static_cast<int>(p.points.size()) < n) {
    const Vec3 x = sfmtest::RandomInUnitBall(rng, 1.5) + Vec3{0, 0, 5};
    if (p.right.transform(x)[2] < 1.0) continue;
    p.points.push_back(x);
    p.px_left.push_back(ProjectPoint({}, p.k, x));
    p.px_right.push_back(ProjectPoint(p.right, p.k, x));
  }
  return p;
}

// ---- core_numerics ----

TEST(CoreNumericsProperty, SkewIsExactlyAntisymmetric) {
  std::mt19937_64 rng(1);
  for (int c = 0; c < kCases; ++c) {
    const Vec3 v = RandomVec3(rng, std::pow(10.0, Uniform(rng, -5, 5)));
    const Mat3 s = Skew(v);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) ASSERT_EQ(s(i, j), -s(j, i)) << c;
    const Vec3 w = RandomVec3(rng);
    ASSERT_LT((s * w - Cross(v, w)).max_abs(), 1e-12 * std::max(1.0, v.norm()));
  }
}

TEST(CoreNumericsProperty, RqReconstruction) {
  std::mt19937_64 rng(2);
  int tested = 0;
  while (tested < kCases) {
    const Mat3 h = RandomMat3(rng);
    if (Determinant(h) < 1e-3) continue;
    const RqResult rq = RqDecompose(h);
    ASSERT_LT((h - rq.k * rq.r).norm() / h.norm(), 1e-9);
    ASSERT_TRUE(IsRotation(rq.r));
    for (int i = 0; i < 3; ++i) ASSERT_GT(rq.k(i, i), 0.0);
    ASSERT_EQ(rq.k(1, 0), 0.0);
    ASSERT_EQ(rq.k(2, 0), 0.0);
    ASSERT_EQ(rq.k(2, 1), 0.0);
    ++tested;
  }
}

TEST(CoreNumericsProperty, SmallestSingularVectorIsMinimal) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int c = 0; c < kCases; ++c) {
    const int rows = 3 + static_cast<int>(rng() % 6), cols = 2 + static_cast<int>(rng() % 5);
    Mat a(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) a(i, j) = g(rng);
    const NullVector nv = SmallestSingularVector(a);
    auto residual = [&](const std::vector<double>& v) {
      double s = 0.0;
      for (int i = 0; i < rows; ++i) {
        double r = 0.0;
        for (int j = 0; j < cols; ++j) r += a(i, j) * v[j];
        s += r * r;
      }
      return std::sqrt(s);
    };
    const double best = residual(nv.vector);
    for (int t = 0; t < 100; ++t) {
      std::vector<double> u(cols);
      double n = 0.0;
      for (double& x : u) {
        x = g(rng);
        n += x * x;
      }
      for (double& x : u) x /= std::sqrt(n);
      ASSERT_LE(best, residual(u) + 1e-12) << c;
    }
  }
}

TEST(CoreNumericsProperty, RotationExpLogRoundTrip) {
  std::mt19937_64 rng(4);
  for (int c = 0; c < kCases; ++c) {
    const Vec3 axis = RandomVec3(rng).normalized();
    const double angle = Uniform(rng, 0.0, std::numbers::pi - 1e-6);
    const Vec3 w = angle * axis;
    const Mat3 r = RotationExp(w);
    ASSERT_LT((r.transpose() * r - Mat3::Identity()).max_abs(), 1e-12);
    ASSERT_NEAR(Determinant(r), 1.0, 1e-12);
    ASSERT_LT((RotationLog(r) - w).max_abs(), 1e-9) << angle;
  }
}

// ---- image_pipeline ----

TEST(ImagePipelineProperty, BlurNeverWidensTheRange) {
  std::mt19937_64 rng(5);
  for (int c = 0; c < kCases; ++c) {
    const GrayImage img = RandomImage(rng, 4 + static_cast<int>(rng() % 20), 4 + static_cast<int>(rng() % 20));
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    const GrayImage out = GaussianBlur(img, Uniform(rng, 0.3, 4.0));
    for (double v : out.data()) {
      ASSERT_GE(v, *lo - 1e-12);
      ASSERT_LE(v, *hi + 1e-12);
    }
  }
}

TEST(ImagePipelineProperty, BlurSemigroup) {
  // Border replication does not compose, so compare away from the edges.
  std::mt19937_64 rng(6);
  for (int c = 0; c < kCases; ++c) {
    const GrayImage img = RandomImage(rng, 40, 40);
    const double s1 = Uniform(rng, 0.8, 2.5), s2 = Uniform(rng, 0.8, 2.5);
    const double s = std::hypot(s1, s2);
    const GrayImage twice = GaussianBlur(GaussianBlur(img, s1), s2);
    const GrayImage once = GaussianBlur(img, s);
    const int margin = static_cast<int>(std::ceil(4 * s));
    double sum = 0.0;
    int n = 0;
    for (int y = margin; y < 40 - margin; ++y)
      for (int x = margin; x < 40 - margin; ++x) {
        sum += std::pow(twice.at(x, y) - once.at(x, y), 2);
        ++n;
      }
    ASSERT_GT(n, 0);
    ASSERT_LT(std::sqrt(sum / n), 1e-3) << s1 << " " << s2;
  }
}

// ---- sift_features ----

TEST(SiftProperty, DescriptorsHaveUnitNorm) {
  std::mt19937_64 rng(7);
  const GrayImage img = GaussianBlur(RandomImage(rng, 96, 96), 1.0);
  const ScaleSpace ss = BuildScaleSpace(img, SiftParams{});
  int checked = 0;
  for (int c = 0; c < kCases; ++c) {
    Keypoint kp;
    kp.octave = static_cast<int>(rng() % 2);
    kp.layer = 1 + static_cast<int>(rng() % 3);
    kp.x = Uniform(rng, 0, 95);
    kp.y = Uniform(rng, 0, 95);
    kp.sigma = OctaveSigma(ss, kp.layer) * std::ldexp(1.0, kp.octave);
    kp.orientation = Uniform(rng, 0, 2 * std::numbers::pi);
    const DescriptorResult d = ComputeDescriptor(kp, ss);
    if (d.degenerate) continue;
    double n = 0.0;
    for (float v : d.descriptor.values) {
      ASSERT_GE(v, 0.0f);
      n += static_cast<double>(v) * v;
    }
    ASSERT_NEAR(std::sqrt(n), 1.0, 1e-6) << c;
    ++checked;
  }
  EXPECT_GT(checked, kCases * 9 / 10);
}

TEST(SiftProperty, DetectionIsScaleInvariant) {
  // Aggregated over enough coarse keypoints to exceed the case count.
  int coarse_total = 0, matched = 0;
  for (std::uint64_t seed = 1; coarse_total < kCases && seed < 40; ++seed) {
    const sfmtest::TexturedSphere sphere(seed, 1024, 6000);
    const GrayImage fine =
        sphere.render(sfmtest::LookAt({0, 0, -2.2}, {0, 0, 0}), CameraIntrinsics{500, 500, 160, 160, 0}, 320, 320);
    const ImageFeatures a = DetectFeatures(fine);
    const ImageFeatures b = DetectFeatures(HalfSample(fine));
    for (const Keypoint& kb : b.keypoints) {
      ++coarse_total;
      for (const Keypoint& ka : a.keypoints)
        if (std::hypot(ka.x - 2 * kb.x, ka.y - 2 * kb.y) <= 2.0) {
          ++matched;
          break;
        }
    }
  }
  ASSERT_GE(coarse_total, kCases);
  EXPECT_GE(matched, 0.6 * coarse_total) << matched << " of " << coarse_total;
}

TEST(SiftProperty, KeypointsInBoundsWithPositiveScale) {
  std::mt19937_64 rng(8);
  int total = 0;
  for (int c = 0; total < kCases && c < 500; ++c) {
    const int w = 40 + static_cast<int>(rng() % 60), h = 40 + static_cast<int>(rng() % 60);
    const ImageFeatures f = DetectFeatures(GaussianBlur(RandomImage(rng, w, h), 1.5));
    for (const Keypoint& k : f.keypoints) {
      ASSERT_GE(k.x, 0.0);
      ASSERT_GE(k.y, 0.0);
      ASSERT_LE(k.x, w - 1.0);
      ASSERT_LE(k.y, h - 1.0);
      ASSERT_GT(k.sigma, 0.0);
    }
    total += static_cast<int>(f.keypoints.size());
  }
  EXPECT_GE(total, kCases);
}

// ---- matching_epipolar ----

TEST(MatchingProperty, RatioMonotone) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int c = 0; c < kCases; ++c) {
    std::vector<Descriptor> l(8 + rng() % 8), r(8 + rng() % 8);
    for (auto* set : {&l, &r})
      for (auto& d : *set)
        for (float& v : d.values) v = u(rng);
    const double lo = Uniform(rng, 0.3, 1.0), hi = Uniform(rng, lo, 1.0);
    MatchCounts a, b;
    MatchDescriptors(l, r, lo, &a);
    MatchDescriptors(l, r, hi, &b);
    ASSERT_LE(a.ratio_passed, b.ratio_passed);
    ASSERT_LE(a.mutual, b.mutual);
  }
}

TEST(MatchingProperty, EightPointIsExactAndRankTwo) {
  std::mt19937_64 rng(10);
  for (int c = 0; c < kCases; ++c) {
    const RandomPair p = MakeRandomPair(rng, 8 + static_cast<int>(rng() % 20));
    const Mat3 f = EstimateFundamental8pt(p.px_left, p.px_right);
    for (std::size_t i = 0; i < p.points.size(); ++i)
      ASSERT_LT(std::abs(Dot(Homogeneous(p.px_right[i]), f * Homogeneous(p.px_left[i]))), 1e-9) << c;
    const Svd3 d = ComputeSvd(f);
    ASSERT_LT(d.s[2] / d.s[0], 1e-12);
  }
}

TEST(MatchingProperty, NoisyFitsAreRankTwo) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int c = 0; c < kCases; ++c) {
    RandomPair p = MakeRandomPair(rng, 20);
    for (Vec2& x : p.px_right) x += Vec2{g(rng), g(rng)};
    const Svd3 d = ComputeSvd(EstimateFundamental8pt(p.px_left, p.px_right));
    ASSERT_LT(d.s[2] / d.s[0], 1e-12);
  }
}

TEST(MatchingProperty, NormalizationInvariance) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 0.5);
  for (int c = 0; c < kCases; ++c) {
    RandomPair p = MakeRandomPair(rng, 16);
    for (Vec2& x : p.px_right) x += Vec2{g(rng), g(rng)};
    std::vector<Vec2> bl, br;
    for (const Vec2& x : p.px_left) bl.push_back(1000.0 * x);
    for (const Vec2& x : p.px_right) br.push_back(1000.0 * x);
    const Mat3 f = EstimateFundamental8pt(p.px_left, p.px_right);
    const Mat3 fb = EstimateFundamental8pt(bl, br);
    // x_big = D x with D = diag(1000, 1000, 1), so F_big ~ D^-1 F D^-1.
    Mat3 expected = f;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) expected(i, j) /= (i < 2 ? 1000.0 : 1.0) * (j < 2 ? 1000.0 : 1.0);
    expected = expected / expected.norm();
    ASSERT_LT(std::min((fb - expected).max_abs(), (fb + expected).max_abs()), 1e-6) << c;
  }
}

TEST(MatchingProperty, RansacDeterministic) {
  std::mt19937_64 rng(13);
  for (int c = 0; c < kCases; ++c) {
    RandomPair p = MakeRandomPair(rng, 30);
    for (int i = 0; i < 10; ++i) {
      p.px_left.push_back({Uniform(rng, 0, 640), Uniform(rng, 0, 480)});
      p.px_right.push_back({Uniform(rng, 0, 640), Uniform(rng, 0, 480)});
    }
    RansacConfig cfg;
    cfg.rng_seed = rng();
    cfg.max_iterations = 40;
    // A capped run may fail to find consensus; the failure must repeat too.
    auto run = [&]() -> std::pair<std::vector<int>, std::string> {
      try {
        const auto r = RansacFundamental(p.px_left, p.px_right, cfg);
        std::string bits(reinterpret_cast<const char*>(&r.f), sizeof(r.f));
        return {r.inliers, bits};
      } catch (const std::exception& e) {
        return {{}, e.what()};
      }
    };
    ASSERT_EQ(run(), run()) << c;
  }
}

TEST(MatchingProperty, NormalizedPointsAreCenteredAtRootTwo) {
  std::mt19937_64 rng(14);
  for (int c = 0; c < kCases; ++c) {
    std::vector<Vec2> pts(2 + rng() % 30);
    const double spread = std::pow(10.0, Uniform(rng, -2, 3));
    for (Vec2& x : pts) x = {Uniform(rng, -1, 1) * spread + 500, Uniform(rng, -1, 1) * spread - 20};
    const NormalizationTransform t = ComputeNormalization(pts);
    Vec2 mean;
    double dist = 0.0;
    for (const Vec2& x : pts) {
      const Vec2 y = t.apply(x);
      mean += y;
      dist += y.norm();
    }
    ASSERT_LT((mean / static_cast<double>(pts.size())).max_abs(), 1e-9);
    ASSERT_NEAR(dist / static_cast<double>(pts.size()), std::sqrt(2.0), 1e-9);
  }
}

// ---- two_view_geometry ----

TEST(TwoViewProperty, CheiralityPicksTheTruePose) {
  std::mt19937_64 rng(15);
  for (int c = 0; c < kCases; ++c) {
    const RandomPair p = MakeRandomPair(rng, 12);
    const Mat3 e = Skew(p.right.translation) * p.right.rotation;
    std::vector<Vec2> l, r;
    for (std::size_t i = 0; i < p.points.size(); ++i) {
      l.push_back(p.k.normalize(p.px_left[i]));
      r.push_back(p.k.normalize(p.px_right[i]));
    }
    const auto candidates = DecomposeEssential(e / e.norm());
    for (const PoseCandidate& cand : candidates) ASSERT_NEAR(cand.translation.norm(), 1.0, 1e-12);
    const CheiralityResult res = SelectPoseCheirality(candidates, l, r);
    ASSERT_LT(RotationDistance(res.pose.rotation, p.right.rotation), 1e-9) << c;
    ASSERT_LT((res.pose.translation - p.right.translation.normalized()).max_abs(), 1e-9) << c;
    const Mat3 chosen = Skew(res.pose.translation) * res.pose.rotation;
    for (std::size_t i = 0; i < l.size(); ++i)
      ASSERT_LT(std::abs(Dot(Homogeneous(r[i]), chosen * Homogeneous(l[i]))), 1e-6);
  }
}

TEST(TwoViewProperty, TriangulationIsExact) {
  std::mt19937_64 rng(16);
  for (int c = 0; c < kCases; ++c) {
    const RandomPair p = MakeRandomPair(rng, 1);
    const Vec3 x = TriangulateDlt(p.px_left[0], p.px_right[0], ProjectionMatrix(p.k, {}),
                                  ProjectionMatrix(p.k, p.right));
    ASSERT_GT(x[2], 0.0);
    ASSERT_GT(p.right.transform(x)[2], 0.0);
    ASSERT_LT((ProjectPoint({}, p.k, x) - p.px_left[0]).norm(), 1e-9);
    ASSERT_LT((ProjectPoint(p.right, p.k, x) - p.px_right[0]).norm(), 1e-9);
  }
}

// ---- resection ----

TEST(ResectionProperty, DecomposeRoundTrip) {
  std::mt19937_64 rng(17);
  for (int c = 0; c < kCases; ++c) {
    const Mat3 k{Uniform(rng, 200, 2000), Uniform(rng, -5, 5), Uniform(rng, 100, 500), 0, Uniform(rng, 200, 2000),
                 Uniform(rng, 100, 500), 0, 0, 1};
    const CameraPose pose{sfmtest::RandomRotation(rng), RandomVec3(rng, 3.0)};
    const double scale = Uniform(rng, 0.01, 100) * (rng() % 2 ? 1 : -1);
    const ProjectionDecomposition d = DecomposeProjection(scale * (k * pose.matrix()));
    ASSERT_LT((d.intrinsics.matrix() - k).max_abs() / k.max_abs(), 1e-7);
    ASSERT_LT((d.pose.rotation - pose.rotation).max_abs(), 1e-7);
    ASSERT_LT((d.pose.translation - pose.translation).max_abs() / std::max(1.0, pose.translation.max_abs()), 1e-7);
    ASSERT_TRUE(IsRotation(d.pose.rotation));
  }
}

TEST(ResectionProperty, RefinementNeverIncreasesCost) {
  std::mt19937_64 rng(18);
  std::normal_distribution<double> g(0.0, 1.0);
  const CameraIntrinsics k{800, 800, 320, 240, 0};
  for (int c = 0; c < kCases; ++c) {
    const CameraPose truth{sfmtest::RandomRotation(rng, 0.5), Vec3{0, 0, 4} + RandomVec3(rng, 0.3)};
    std::vector<Correspondence2D3D> corrs;
    for (int i = 0; i < 12; ++i) {
      const Vec3 x = sfmtest::RandomInUnitBall(rng, 1.5);
      corrs.push_back({x, ProjectPoint(truth, k, x) + Vec2{g(rng), g(rng)}});
    }
    std::vector<int> all(corrs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const CameraPose start{RotationExp(RandomVec3(rng, 0.05)) * truth.rotation, truth.translation + RandomVec3(rng, 0.1)};
    double c0 = 0, c1 = 0;
    const CameraPose refined = RefinePose(start, k, corrs, all, 20, &c0, &c1);
    ASSERT_LE(c1, c0);
    ASSERT_TRUE(IsRotation(refined.rotation));
  }
}

// ---- bundle_adjustment ----

BAProblem RandomBAProblem(std::mt19937_64& rng, int cameras, int points, double noise) {
  const sfmtest::RingScene s = sfmtest::MakeRingScene(cameras, points, 3.0, rng());
  std::normal_distribution<double> g(0.0, 1.0);
  BAProblem p;
  p.intrinsics = s.k;
  p.poses = s.poses;
  p.points = s.points;
  for (int c = 0; c < cameras; ++c)
    for (int i = 0; i < points; ++i) p.observations.push_back({c, i, s.pixels[c][i] + noise * Vec2{g(rng), g(rng)}});
  for (std::size_t j = 1; j < p.poses.size(); ++j) {
    p.poses[j].rotation = RotationExp(0.02 * Vec3{g(rng), g(rng), g(rng)}) * p.poses[j].rotation;
    p.poses[j].translation += 0.05 * Vec3{g(rng), g(rng), g(rng)};
  }
  for (Vec3& x : p.points) x += 0.02 * Vec3{g(rng), g(rng), g(rng)};
  return p;
}

TEST(BundleAdjustmentProperty, AcceptedCostsStrictlyDecreaseAndGaugeHolds) {
  std::mt19937_64 rng(19);
  for (int c = 0; c < kCases; ++c) {
    BAProblem p = RandomBAProblem(rng, 2 + static_cast<int>(rng() % 2), 6, 0.5);
    const CameraPose anchor = p.poses[0];
    const BAReport r = Optimize(p, 20);
    for (std::size_t i = 1; i < r.cost_history.size(); ++i) ASSERT_LT(r.cost_history[i], r.cost_history[i - 1]);
    ASSERT_LE(r.final_rmse_px, r.initial_rmse_px);
    ASSERT_EQ(p.poses[0].rotation, anchor.rotation);
    ASSERT_EQ(p.poses[0].translation, anchor.translation);
  }
}

TEST(BundleAdjustmentProperty, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(20);
  for (int c = 0; c < kCases; ++c) {
    const BAProblem p = RandomBAProblem(rng, 2, 2, 0.0);
    const Linearization lin = ResidualsAndJacobian(p);
    const Mat j = DenseJacobian(p, lin);
    const std::vector<double> x = Flatten(p);
    const double h = 1e-6;
    for (int col = 0; col < static_cast<int>(x.size()); ++col) {
      std::vector<double> xp = x, xm = x;
      xp[col] += h;
      xm[col] -= h;
      const std::vector<double> rp = Residuals(Unflatten(p, xp)), rm = Residuals(Unflatten(p, xm));
      for (int row = 0; row < j.rows(); ++row) {
        const double fd = (rp[row] - rm[row]) / (2 * h);
        ASSERT_LT(std::abs(fd - j(row, col)) / std::max(1.0, std::abs(j(row, col))), 1e-5) << c;
      }
    }
  }
}

TEST(BundleAdjustmentProperty, CoScalingPreservesCost) {
  std::mt19937_64 rng(21);
  for (int c = 0; c < kCases; ++c) {
    BAProblem p = RandomBAProblem(rng, 3, 5, 0.5);
    double base = 0.0;
    for (double r : Residuals(p)) base += r * r;
    const double s = Uniform(rng, 0.1, 10);
    for (CameraPose& pose : p.poses) pose.translation *= s;
    for (Vec3& x : p.points) x *= s;
    double scaled = 0.0;
    for (double r : Residuals(p)) scaled += r * r;
    ASSERT_NEAR(scaled, base, 1e-9 * std::max(1.0, base));
  }
}

// ---- incremental_pipeline ----

TEST(TracksProperty, BuiltTracksAreValid) {
  std::mt19937_64 rng(22);
  for (int c = 0; c < kCases; ++c) {
    const int images = 2 + static_cast<int>(rng() % 5);
    std::vector<int> counts(images);
    for (int& n : counts) n = 1 + static_cast<int>(rng() % 15);
    std::vector<PairMatches> pairs;
    for (int i = 0; i < images; ++i)
      for (int j = i + 1; j < images; ++j) {
        PairMatches p;
        p.i = i;
        p.j = j;
        const int m = static_cast<int>(rng() % 10);
        for (int k = 0; k < m; ++k)
          p.inliers.push_back({static_cast<int>(rng() % counts[i]), static_cast<int>(rng() % counts[j]), 0.0});
        pairs.push_back(p);
      }
    const auto tracks = BuildTracks(pairs, counts);
    std::set<std::pair<int, int>> seen;
    for (const Track& t : tracks) {
      ASSERT_GE(t.observations.size(), 2u);
      for (std::size_t k = 0; k < t.observations.size(); ++k) {
        const auto& o = t.observations[k];
        ASSERT_TRUE(seen.insert({o.image, o.keypoint}).second) << "node in two tracks";
        if (k > 0) ASSERT_LE(t.observations[k - 1].image, o.image);
      }
      bool repeated = false;
      for (std::size_t k = 1; k < t.observations.size(); ++k)
        repeated = repeated || t.observations[k].image == t.observations[k - 1].image;
      ASSERT_EQ(repeated, t.status == TrackStatus::kRejected);
    }
    // Every matched keypoint is on some track.
    for (const PairMatches& p : pairs)
      for (const Match& m : p.inliers) {
        ASSERT_TRUE(seen.contains({p.i, m.idx_left}));
        ASSERT_TRUE(seen.contains({p.j, m.idx_right}));
      }
  }
}

// ---- cli_io ----

TEST(CliIoProperty, PlyRoundTrip) {
  std::mt19937_64 rng(23);
  for (int c = 0; c < kCases; ++c) {
    std::vector<CloudPoint> cloud(1 + rng() % 20);
    for (CloudPoint& p : cloud) p = {RandomVec3(rng, std::pow(10.0, Uniform(rng, -3, 3))), Uniform(rng, -0.2, 1.2)};
    sfmtest::PlyFile ply;
    std::string error;
    ASSERT_TRUE(sfmtest::ParsePly(FormatPly(cloud), ply, &error)) << error;
    ASSERT_EQ(ply.vertices.size(), cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto& v = ply.vertices[i];
      ASSERT_EQ(static_cast<float>(v.x), static_cast<float>(cloud[i].position[0]));
      ASSERT_EQ(static_cast<float>(v.y), static_cast<float>(cloud[i].position[1]));
      ASSERT_EQ(static_cast<float>(v.z), static_cast<float>(cloud[i].position[2]));
      ASSERT_EQ(v.r, IntensityToByte(cloud[i].intensity));
    }
  }
}

}  // namespace
