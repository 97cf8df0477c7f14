#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ctsmooth/keyframes.hpp"

using namespace ctsmooth;

namespace {

// Cameras looking along world +z.
CameraPose cam_at(const Vec3& p, const Mat3& r = Mat3::Identity()) { return CameraPose{r, p}; }

Vec2 project(const CameraPose& c, const Vec3& x) {
  const Vec3 pc = c.r_gc.transpose() * (x - c.p_gc);
  return pc.head<2>() / pc.z();
}

Keyframe frame(int id, int tracks, double shift) {
  Keyframe f;
  f.id = id;
  f.stamp = 0.05 * id;
  for (int k = 0; k < tracks; ++k) f.obs[k] = Vec2(0.01 * k + shift, -0.005 * k);
  return f;
}

}  // namespace

TEST(Triangulation, ExactTwoViewDepth) {
  const Vec3 x(0.2, -0.1, 3.0);
  std::vector<TriangulationView> v{{cam_at(Vec3::Zero()), Vec2::Zero()}, {cam_at(Vec3(0.5, 0, 0)), Vec2::Zero()}};
  v[0].obs = project(v[0].pose, x);
  v[1].obs = project(v[1].pose, x);
  const TriangulationResult r = triangulate_landmark(v, 0);
  ASSERT_TRUE(r.ok);
  EXPECT_NEAR(r.inv_depth, 1.0 / 3.0, 1e-9);
  EXPECT_LT((r.world - x).norm(), 1e-9);
  EXPECT_LT(r.mean_reproj, 1e-12);
}

TEST(Triangulation, ZeroBaselineRejected) {
  const Vec3 x(0.2, -0.1, 3.0);
  std::vector<TriangulationView> v{{cam_at(Vec3::Zero()), Vec2::Zero()}, {cam_at(Vec3::Zero()), Vec2::Zero()}};
  v[0].obs = v[1].obs = project(v[0].pose, x);
  EXPECT_FALSE(triangulate_landmark(v, 0).ok);
}

TEST(Triangulation, PureRotationRejected) {
  const Vec3 x(0.2, -0.1, 3.0);
  const Mat3 r = exp_so3(Vec3(0.0, 0.2, 0.05)).matrix();
  std::vector<TriangulationView> v{{cam_at(Vec3::Zero()), Vec2::Zero()}, {cam_at(Vec3::Zero(), r), Vec2::Zero()}};
  v[0].obs = project(v[0].pose, x);
  v[1].obs = project(v[1].pose, x);
  EXPECT_GT((v[0].obs - v[1].obs).norm(), 0.1);
  const TriangulationResult res = triangulate_landmark(v, 0);
  EXPECT_FALSE(res.ok);
  EXPECT_LT(res.max_ray_angle, 1e-9);
}

TEST(Triangulation, NoisyDepthErrorMatchesGeometricDilution) {
  const Vec3 x(0.1, 0.05, 3.0);
  const double sigma = 1e-3, baseline = 0.5;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, sigma);
  double sq = 0.0;
  int ok = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<TriangulationView> v{{cam_at(Vec3::Zero()), Vec2::Zero()},
                                     {cam_at(Vec3(baseline, 0, 0)), Vec2::Zero()}};
    for (auto& view : v) view.obs = project(view.pose, x) + Vec2(n(rng), n(rng));
    const TriangulationResult r = triangulate_landmark(v, 0);
    if (!r.ok) continue;
    ++ok;
    sq += (r.depth - 3.0) * (r.depth - 3.0);
  }
  ASSERT_GT(ok, 1900);
  // Depth from disparity: sd(z) ~ z^2 sqrt(2) sigma / b for the two-view stereo case.
  const double predicted = 9.0 * std::sqrt(2.0) * sigma / baseline;
  const double rms = std::sqrt(sq / ok);
  EXPECT_GT(rms, 0.5 * predicted);
  EXPECT_LT(rms, 1.5 * predicted);
}

TEST(KeyframeWindow, StaticCameraDiscardsSecondNewest) {
  KeyframeWindow w;
  for (int i = 0; i < 3; ++i) w.push(frame(i, 50, 0.0));
  EXPECT_EQ(w.size(), 2);
  for (int i = 3; i < 20; ++i) {
    const SlideResult r = w.push(frame(i, 50, 0.0));
    EXPECT_EQ(r.action, SlideResult::Action::kDiscardSecondNewest);
    ASSERT_TRUE(r.removed.has_value());
    EXPECT_EQ(r.removed->id, i - 1);
    EXPECT_EQ(w.size(), 2);
    EXPECT_EQ(w.frames().back().id, i);
  }
}

TEST(KeyframeWindow, ParallaxFillsThenDropsOldest) {
  KeyframeConfig cfg;
  cfg.capacity = 10;
  KeyframeWindow w(cfg);
  for (int i = 0; i < 10; ++i) w.push(frame(i, 50, 0.03 * i));
  EXPECT_EQ(w.size(), 10);
  for (int i = 10; i < 15; ++i) {
    const SlideResult r = w.push(frame(i, 50, 0.03 * i));
    EXPECT_EQ(r.action, SlideResult::Action::kDropOldest);
    EXPECT_EQ(r.removed->id, i - 10);
    EXPECT_EQ(w.size(), 10);
    EXPECT_EQ(w.frames().back().id, i);
  }
}

TEST(KeyframeWindow, FewTracksMakesKeyframe) {
  KeyframeWindow w;
  w.push(frame(0, 20, 0.0));
  w.push(frame(1, 20, 0.0));
  const SlideResult r = w.push(frame(2, 20, 0.0));
  EXPECT_EQ(r.action, SlideResult::Action::kNone);
  EXPECT_EQ(w.size(), 3);
}

TEST(KeyframeWindow, Observers) {
  KeyframeWindow w;
  w.push(frame(0, 5, 0.0));
  w.push(frame(1, 3, 0.1));
  EXPECT_EQ(w.observers(4).size(), 1u);
  EXPECT_EQ(w.observers(1).size(), 2u);
  EXPECT_EQ(w.observers(99).size(), 0u);
  EXPECT_NE(w.find(1), nullptr);
  EXPECT_EQ(w.find(7), nullptr);
}

TEST(AnchorTransfer, PreservesWorldPoint) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const CameraPose a = cam_at(Vec3(u(rng), u(rng), u(rng)), exp_so3(0.2 * Vec3(u(rng), u(rng), u(rng))).matrix());
    const CameraPose b = cam_at(a.p_gc + 0.3 * Vec3(u(rng), u(rng), u(rng)),
                                a.r_gc * exp_so3(0.2 * Vec3(u(rng), u(rng), u(rng))).matrix());
    LandmarkInvDepth lm{trial, 0, 0.0, Vec2(0.3 * u(rng), 0.3 * u(rng)), 1.0 / (3.0 + u(rng))};
    const Vec3 before = landmark_world(lm, a);
    const auto moved = transfer_anchor(lm, a, b, 4, 0.2);
    ASSERT_TRUE(moved.has_value());
    EXPECT_EQ(moved->anchor_frame, 4);
    EXPECT_LT((landmark_world(*moved, b) - before).norm(), 1e-10);
  }
}

TEST(AnchorTransfer, BehindNewAnchorFails) {
  LandmarkInvDepth lm{1, 0, 0.0, Vec2::Zero(), 0.5};
  const CameraPose a = cam_at(Vec3::Zero());
  const CameraPose b = cam_at(Vec3(0, 0, 5));
  EXPECT_FALSE(transfer_anchor(lm, a, b, 1, 0.1).has_value());
}
