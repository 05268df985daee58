#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "sfmkit/geometry/resection.hpp"
#include "support/expect_error.hpp"
#include "support/scene.hpp"

namespace {

using namespace sfm;

const CameraIntrinsics kK{800, 800, 320, 240, 0};

double RotationDistance(const Mat3& a, const Mat3& b) { return RotationLog(a * b.transpose()).norm(); }

CameraPose TruePose() { return CameraPose{RotationExp({0.1, -0.25, 0.05}), {0.2, -0.1, 4.0}}; }

std::vector<Correspondence2D3D> Project(const CameraPose& pose, int n, std::uint64_t seed, double noise = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, noise > 0 ? noise : 1.0);
  std::vector<Correspondence2D3D> out;
  for (int i = 0; i < n; ++i) {
    const Vec3 p = sfmtest::RandomInUnitBall(rng, 1.5);
    Vec2 px = ProjectPoint(pose, kK, p);
    if (noise > 0) px += Vec2{g(rng), g(rng)};
    out.push_back({p, px});
  }
  return out;
}

Mat34 Unit(const Mat34& m) { return m / m.norm(); }

double SignAlignedDistance(const Mat34& a, const Mat34& b) {
  const Mat34 ua = Unit(a), ub = Unit(b);
  return std::min((ua - ub).norm(), (ua + ub).norm());
}

TEST(DltProjectionMatrix, NoiseFreeRecovery) {
  const CameraPose pose = TruePose();
  const auto corrs = Project(pose, 10, 1);
  const Mat34 m = DltProjectionMatrix(corrs);
  EXPECT_LT(SignAlignedDistance(m, ProjectionMatrix(kK, pose)), 1e-8);
}

TEST(DltProjectionMatrix, TooFewPoints) {
  const auto corrs = Project(TruePose(), 5, 2);
  EXPECT_SFM_ERROR(DltProjectionMatrix(corrs), ErrorCode::kInsufficientPoints);
}

TEST(DltProjectionMatrix, CoplanarPoints) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Correspondence2D3D> corrs;
  const CameraPose pose = TruePose();
  for (int i = 0; i < 8; ++i) {
    const Vec3 p{u(rng), u(rng), 0.3};
    corrs.push_back({p, ProjectPoint(pose, kK, p)});
  }
  EXPECT_SFM_ERROR(DltProjectionMatrix(corrs), ErrorCode::kCoplanarDegenerate);
}

TEST(DecomposeProjection, RoundTrip) {
  const Mat3 k0{800, 0, 320, 0, 800, 240, 0, 0, 1};
  const Mat3 r0 = RotationExp({0.1, 0.2, 0.3});
  const Vec3 t0{0.1, -0.2, 2};
  const CameraPose pose{r0, t0};
  // Arbitrary projective scale, including a negative one.
  for (double scale : {1.0, 0.003, -2.5}) {
    const ProjectionDecomposition d = DecomposeProjection(scale * (k0 * pose.matrix()));
    EXPECT_LT((d.intrinsics.matrix() - k0).max_abs(), 1e-7) << scale;
    EXPECT_LT((d.pose.rotation - r0).max_abs(), 1e-7) << scale;
    EXPECT_LT((d.pose.translation - t0).max_abs(), 1e-7) << scale;
    EXPECT_LT((d.center - pose.center()).max_abs(), 1e-7) << scale;
  }
}

TEST(DecomposeProjection, CanonicalCamera) {
  const ProjectionDecomposition d = DecomposeProjection(CameraPose{}.matrix());
  EXPECT_LT((d.intrinsics.matrix() - Mat3::Identity()).max_abs(), 1e-15);
  EXPECT_LT((d.pose.rotation - Mat3::Identity()).max_abs(), 1e-15);
  EXPECT_LT(d.center.max_abs(), 1e-15);
}

TEST(DecomposeProjection, SingularLeftBlock) {
  Mat34 m;
  m(0, 0) = 1;
  m(1, 1) = 1;
  m(0, 3) = 2;
  EXPECT_SFM_ERROR(DecomposeProjection(m), ErrorCode::kSingularMatrix);
}

TEST(PnpRansac, NoiseFree) {
  const CameraPose pose = TruePose();
  const auto corrs = Project(pose, 100, 4);
  const PnpResult r = PnpRansac(corrs, kK);
  EXPECT_EQ(r.inliers.size(), 100u);
  EXPECT_LT(RotationDistance(r.pose.rotation, pose.rotation), 1e-6);
  EXPECT_LT((r.pose.translation - pose.translation).max_abs(), 1e-8);
  EXPECT_LE(r.final_cost, r.initial_cost);
}

TEST(PnpRansac, OutliersAndNoise) {
  const CameraPose pose = TruePose();
  auto corrs = Project(pose, 60, 5, 0.5);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> ux(0, 640), uy(0, 480);
  for (int i = 0; i < 40; ++i) corrs.push_back({sfmtest::RandomInUnitBall(rng, 1.5), {ux(rng), uy(rng)}});
  PnpConfig cfg;
  cfg.ransac.rng_seed = 17;
  const PnpResult r = PnpRansac(corrs, kK, cfg);
  const auto true_in = std::count_if(r.inliers.begin(), r.inliers.end(), [](int i) { return i < 60; });
  EXPECT_GE(true_in, 55);
  EXPECT_GE(r.inliers.size(), 55u);
  EXPECT_LT(RotationDistance(r.pose.rotation, pose.rotation), 0.01);
  EXPECT_LE(r.final_cost, r.initial_cost);
}

TEST(PnpRansac, TooFewPoints) {
  const auto corrs = Project(TruePose(), 5, 7);
  EXPECT_SFM_ERROR(PnpRansac(corrs, kK), ErrorCode::kInsufficientPoints);
}

TEST(PnpRansac, NoConsensusOnRandomData) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ux(0, 640), uy(0, 480);
  std::vector<Correspondence2D3D> corrs;
  for (int i = 0; i < 40; ++i) corrs.push_back({sfmtest::RandomInUnitBall(rng, 1.5) + Vec3{0, 0, 4}, {ux(rng), uy(rng)}});
  PnpConfig cfg;
  cfg.ransac.min_inliers = 20;
  EXPECT_SFM_ERROR(PnpRansac(corrs, kK, cfg), ErrorCode::kNoConsensus);
}

TEST(PnpRansac, Deterministic) {
  auto corrs = Project(TruePose(), 50, 9, 0.5);
  PnpConfig cfg;
  cfg.ransac.rng_seed = 3;
  const PnpResult a = PnpRansac(corrs, kK, cfg);
  const PnpResult b = PnpRansac(corrs, kK, cfg);
  EXPECT_EQ(a.pose.rotation, b.pose.rotation);
  EXPECT_EQ(a.pose.translation, b.pose.translation);
  EXPECT_EQ(a.inliers, b.inliers);
}

TEST(RefinePose, ConvergesFromPerturbation) {
  const CameraPose pose = TruePose();
  const auto corrs = Project(pose, 30, 10);
  std::vector<int> all(30);
  for (int i = 0; i < 30; ++i) all[i] = i;
  const CameraPose start{RotationExp({0.12, -0.22, 0.06}), pose.translation + Vec3{0.05, -0.03, 0.1}};
  double c0 = 0, c1 = 0;
  const CameraPose refined = RefinePose(start, kK, corrs, all, 20, &c0, &c1);
  EXPECT_LT(c1, c0);
  EXPECT_LT(RotationDistance(refined.rotation, pose.rotation), 1e-8);
}

TEST(ReprojectionError, BehindCameraIsInfinite) {
  const Correspondence2D3D c{{0, 0, -1}, {320, 240}};
  EXPECT_TRUE(std::isinf(ReprojectionError(CameraPose{}, kK, c)));
  const Correspondence2D3D d{{0, 0, 1}, {323, 244}};
  EXPECT_DOUBLE_EQ(ReprojectionError(CameraPose{}, kK, d), 5.0);
}

}  // namespace
