#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ctsmooth/factors.hpp"
#include "ctsmooth/verify.hpp"

namespace ctsmooth {
namespace {

EstimatorState constant_state(const Rotation& r, const Vec3& p, int n = 8, double dt = 0.1) {
  EstimatorState s(KnotGrid{0.0, dt, n}, r, p, n);
  s.biases[0] = BiasPair{};
  s.biases[1] = BiasPair{};
  return s;
}

EstimatorState linear_state(const Vec3& c, int n = 8, double dt = 0.1) {
  EstimatorState s = constant_state(Rotation::identity(), Vec3::Zero(), n, dt);
  for (int i = 0; i < n; ++i) s.pos.ctrl(i) = c * (i - 1) * dt;
  return s;
}

TEST(FactorSuite, AllTypesPassFiniteDifferences) {
  const JacobianSuiteReport report = run_jacobian_suite(1234, 100);
  ASSERT_EQ(report.per_type.size(), 6u);
  for (const auto& st : report.per_type) {
    EXPECT_EQ(st.failures, 0) << factor_type_name(st.type) << " worst " << st.worst_block << " rel "
                              << st.max_rel_err;
    EXPECT_EQ(st.unevaluated, 0) << factor_type_name(st.type);
  }
  EXPECT_TRUE(report.pass());
}

TEST(FactorSuite, CorruptedJacobianIsCaught) {
  const JacobianSuiteReport report = run_jacobian_suite(99, 5, FactorType::kLidar);
  EXPECT_FALSE(report.pass());
  for (const auto& st : report.per_type) {
    if (st.type == FactorType::kLidar) {
      EXPECT_EQ(st.failures, 5);
      EXPECT_FALSE(st.worst_block.empty());
    } else {
      EXPECT_EQ(st.failures, 0);
    }
  }
}

TEST(Lidar, SignConvention) {
  // Convention: r = n^T p - d with n = pi/|pi|, d = |pi|; the plane pi = (0,0,1) is z = +1.
  EstimatorState s = constant_state(Rotation::identity(), Vec3::Zero());
  const PlaneCP plane{Vec3(0, 0, 1)};
  FactorEval e;
  auto eval = [&](const Vec3& p) {
    LidarFactor f(LidarPointMeas{0.15, p, 0, 0}, plane, Extrinsic{}, 1.0);
    EXPECT_TRUE(f.evaluate(s, e, true));
    return e.residual[0];
  };
  EXPECT_NEAR(eval(Vec3(0, 0, 1)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(eval(Vec3(0, 0, 0))), 1.0, 1e-15);
  EXPECT_NEAR(eval(Vec3(0, 0, -1)), -2.0, 1e-15);
  EXPECT_NEAR(eval(Vec3(3, -2, 1)), 0.0, 1e-15);
  // Only control-point blocks are present.
  for (const auto& jb : e.jacobians) {
    EXPECT_TRUE(jb.key.kind == BlockKind::kRotCtrl || jb.key.kind == BlockKind::kPosCtrl);
  }
}

TEST(Lidar, OnPlaneAtTruthIsZero) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  EstimatorState s = constant_state(exp_so3(Vec3(0.2, -0.4, 1.0)), Vec3(1, 2, 3));
  for (int i = 0; i < 8; ++i) s.rot.ctrl(i) = s.rot.ctrl(i) * exp_so3(Vec3(0.1 * i, 0.0, -0.05 * i));
  const Extrinsic ext{exp_so3(Vec3(0.01, 0.02, -0.3)), Vec3(0.1, 0.0, 0.05)};
  const PlaneCP plane{Vec3(0.0, 0.0, 5.0)};
  for (int k = 0; k < 50; ++k) {
    const double t = 0.5 * (k + 0.5) / 50.0;
    const Rotation r = s.rot.rotation(t);
    const Vec3 p = s.pos.position(t);
    const Vec3 world(n(rng), n(rng), 5.0);
    const Vec3 q = r.inverse() * (world - p);
    const Vec3 pl = ext.rotation.inverse() * (q - ext.translation);
    LidarFactor f(LidarPointMeas{t, pl, 0, 0}, plane, ext, 0.01);
    FactorEval e;
    ASSERT_TRUE(f.evaluate(s, e, false));
    EXPECT_LT(std::abs(e.residual[0]), 1e-12);
  }
}

TEST(Imu, RestReadingIsMinusRtG) {
  const Rotation r = exp_so3(Vec3(0.1, -0.3, 0.7));
  EstimatorState s = constant_state(r, Vec3(1, 1, 1));
  const Vec3 am = -(r.inverse() * kGravity);
  ImuFactor f(ImuMeas{0.2, Vec3::Zero(), am}, 0, ImuNoise{});
  FactorEval e;
  ASSERT_TRUE(f.evaluate(s, e, false));
  EXPECT_LT(e.residual.norm(), 1e-12);
}

TEST(Imu, ZeroNoiseConsistencyWithBias) {
  EstimatorState s = linear_state(Vec3(1, 0, 0));
  for (int i = 0; i < 8; ++i) s.rot.ctrl(i) = exp_so3(Vec3(0.0, 0.0, 0.3 * i));
  s.biases[0] = BiasPair{Vec3(0.01, -0.02, 0.005), Vec3(0.1, 0.05, -0.2)};
  s.offsets.imu = 0.004;
  for (double tau = 0.01; tau < 0.49; tau += 0.037) {
    const RotationEval re = s.rot.evaluate(tau, false);
    const Vec3 wm = re.omega + s.biases[0].gyro;
    const Vec3 am = re.rotation.inverse() * (s.pos.acceleration(tau) - kGravity) + s.biases[0].accel;
    ImuFactor f(ImuMeas{tau - s.offsets.imu, wm, am}, 0, ImuNoise{});
    FactorEval e;
    ASSERT_TRUE(f.evaluate(s, e, false));
    EXPECT_LT(e.residual.norm(), 1e-10);
  }
}

TEST(Imu, OutOfRangeIsSkipped) {
  EstimatorState s = constant_state(Rotation::identity(), Vec3::Zero());
  ImuFactor f(ImuMeas{10.0, Vec3::Zero(), Vec3::Zero()}, 0, ImuNoise{});
  FactorEval e;
  EXPECT_FALSE(f.evaluate(s, e, true));
}

TEST(Bias, ResidualAndExactJacobian) {
  EstimatorState s = constant_state(Rotation::identity(), Vec3::Zero());
  s.biases[1].gyro = Vec3(1, 2, 3) * 1e-3;
  s.biases[1].accel = Vec3(1, 2, 3) * 1e-3;
  ImuNoise noise;
  BiasFactor f(0, 1, noise, 0.12);
  FactorEval e;
  ASSERT_TRUE(f.evaluate(s, e, true));
  Eigen::VectorXd expect(6);
  expect << 1e-3, 2e-3, 3e-3, 1e-3, 2e-3, 3e-3;
  EXPECT_LT((e.residual - expect).norm(), 1e-18);
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(6, 12);
  const Key order[4] = {gyro_bias_key(0), accel_bias_key(0), gyro_bias_key(1), accel_bias_key(1)};
  for (int k = 0; k < 4; ++k) full.middleCols(3 * k, 3) = e.find(order[k])->block;
  Eigen::MatrixXd expect_j = Eigen::MatrixXd::Zero(6, 12);
  expect_j.block(0, 0, 3, 3) = -Mat3::Identity();
  expect_j.block(3, 3, 3, 3) = -Mat3::Identity();
  expect_j.block(0, 6, 3, 3) = Mat3::Identity();
  expect_j.block(3, 9, 3, 3) = Mat3::Identity();
  EXPECT_EQ(full, expect_j);
}

TEST(Bias, WeightScalesWithWindowDuration) {
  EstimatorState s = constant_state(Rotation::identity(), Vec3::Zero());
  s.biases[1].gyro = Vec3(1, 0, 0);
  ImuNoise noise;
  FactorEval a, b;
  BiasFactor(0, 1, noise, 0.12).evaluate(s, a, false);
  BiasFactor(0, 1, noise, 0.24).evaluate(s, b, false);
  EXPECT_NEAR(b.sqrt_weight[0] / a.sqrt_weight[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(b.sqrt_weight[4] / a.sqrt_weight[4], 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Visual, StraightAheadHandProjection) {
  EstimatorState s = constant_state(Rotation::identity(), Vec3::Zero());
  LandmarkInvDepth lm;
  lm.id = 1;
  lm.anchor_stamp = 0.1;
  lm.anchor_obs = Vec2::Zero();
  lm.inv_depth = 0.5;
  s.landmarks[1] = lm;
  const Vec2 rho_b(0.01, -0.02);
  VisualFactor f(1, 0.3, rho_b, Extrinsic{}, 1e-3);
  FactorEval e;
  ASSERT_TRUE(f.evaluate(s, e, true));
  EXPECT_LT((e.residual - (Vec2::Zero() - rho_b)).norm(), 1e-15);
}

TEST(Visual, BehindCameraIsRejected) {
  EstimatorState s = constant_state(Rotation::identity(), Vec3::Zero());
  for (int i = 4; i < 8; ++i) s.pos.ctrl(i) = Vec3(0, 0, 10);
  LandmarkInvDepth lm;
  lm.id = 1;
  lm.anchor_stamp = 0.05;
  lm.inv_depth = 0.5;
  s.landmarks[1] = lm;
  VisualFactor f(1, 0.45, Vec2::Zero(), Extrinsic{}, 1e-3);
  FactorEval e;
  EXPECT_FALSE(f.evaluate(s, e, true));
}

TEST(Visual, ZeroNoiseConsistency) {
  EstimatorState s = linear_state(Vec3(0.5, 0.1, 0.0));
  for (int i = 0; i < 8; ++i) s.rot.ctrl(i) = exp_so3(Vec3(0.0, 0.05 * i, 0.1 * i));
  s.offsets.cam = -0.003;
  const Extrinsic cam{exp_so3(Vec3(0.0, 1.5707963, 0.0)), Vec3(0.1, 0.0, 0.05)};
  const Vec3 world(6.0, 0.5, -0.3);
  auto project = [&](double tau) {
    const CameraPose cp = camera_pose(s, tau, cam);
    const Vec3 pc = cp.r_gc.transpose() * (world - cp.p_gc);
    return pc;
  };
  const double ta = 0.05, tb = 0.42;
  const Vec3 pa = project(ta);
  const Vec3 pb = project(tb);
  ASSERT_GT(pa.z(), 0.5);
  ASSERT_GT(pb.z(), 0.5);
  LandmarkInvDepth lm;
  lm.id = 4;
  lm.anchor_stamp = ta - s.offsets.cam;
  lm.anchor_obs = pa.head<2>() / pa.z();
  lm.inv_depth = 1.0 / pa.z();
  s.landmarks[4] = lm;
  VisualFactor f(4, tb - s.offsets.cam, pb.head<2>() / pb.z(), cam, 1e-3);
  FactorEval e;
  ASSERT_TRUE(f.evaluate(s, e, false));
  EXPECT_LT(e.residual.norm(), 1e-12);
}

TEST(Velocity, ResidualAndJacobian) {
  EstimatorState s = linear_state(Vec3(1, 0, 0));
  VelocityFactor f(0.23, Vec3::Zero(), 0.1);
  FactorEval e;
  ASSERT_TRUE(f.evaluate(s, e, true));
  EXPECT_LT((e.residual - Eigen::Vector3d(-1, 0, 0)).norm(), 1e-12);
  for (const auto& jb : e.jacobians) EXPECT_EQ(jb.key.kind, BlockKind::kPosCtrl);
  JacobianCheckOptions opts;
  opts.rel_tol = 1e-6;
  EXPECT_TRUE(check_factor_jacobian(f, s, opts).pass);
}

TEST(Prior, ScalarHandCase) {
  EstimatorState s;
  s.aux[0] = Eigen::VectorXd::Constant(1, 2.0);
  s.prior.keys = {aux_key(0)};
  s.prior.dims = {1};
  s.prior.linearization = {Eigen::VectorXd::Constant(1, 1.0)};
  s.prior.sqrt_info = Eigen::MatrixXd::Constant(1, 1, std::sqrt(4.0));
  s.prior.r0 = Eigen::VectorXd::Zero(1);
  PriorFactor f;
  FactorEval e;
  ASSERT_TRUE(f.evaluate(s, e, true));
  EXPECT_DOUBLE_EQ(e.residual[0], 2.0);
  s.aux[0][0] = 1.0;
  ASSERT_TRUE(f.evaluate(s, e, true));
  EXPECT_DOUBLE_EQ(e.residual[0], 0.0);
}

TEST(Prior, QuadraticIdentity) {
  std::mt19937_64 rng(5);
  EstimatorState s;
  s.aux[0] = Eigen::VectorXd::Random(3);
  s.aux[1] = Eigen::VectorXd::Random(2);
  MarginalPrior& p = s.prior;
  p.keys = {aux_key(0), aux_key(1)};
  p.dims = {3, 2};
  p.linearization = {Eigen::VectorXd(Eigen::VectorXd::Random(3)), Eigen::VectorXd(Eigen::VectorXd::Random(2))};
  p.sqrt_info = Eigen::MatrixXd::Random(5, 5);
  p.r0 = Eigen::VectorXd::Random(5);
  PriorFactor f;
  FactorEval e;
  ASSERT_TRUE(f.evaluate(s, e, false));
  Eigen::VectorXd dx(5);
  dx << s.aux[0] - std::get<Eigen::VectorXd>(p.linearization[0]), s.aux[1] - std::get<Eigen::VectorXd>(p.linearization[1]);
  const Eigen::MatrixXd h = p.information();
  const double expect = dx.dot(h * dx) + 2.0 * dx.dot(p.sqrt_info.transpose() * p.r0) + p.r0.squaredNorm();
  EXPECT_NEAR(e.residual.squaredNorm(), expect, 1e-12);
}

TEST(Prior, EmptyContributesNothing) {
  EstimatorState s;
  PriorFactor f;
  FactorEval e;
  ASSERT_TRUE(f.evaluate(s, e, true));
  EXPECT_EQ(e.residual.size(), 0);
  EXPECT_TRUE(e.jacobians.empty());
}

TEST(Prior, MissingKeyIsStructuralError) {
  EstimatorState s;
  s.prior.keys = {aux_key(5)};
  s.prior.dims = {1};
  s.prior.linearization = {Eigen::VectorXd::Zero(1)};
  s.prior.sqrt_info = Eigen::MatrixXd::Ones(1, 1);
  s.prior.r0 = Eigen::VectorXd::Zero(1);
  PriorFactor f;
  FactorEval e;
  EXPECT_THROW(f.evaluate(s, e, true), std::logic_error);
}

TEST(ForwardIntegration, RestStaysAtZero) {
  const Rotation r = exp_so3(Vec3(0.2, 0.1, -0.4));
  std::vector<ImuMeas> meas;
  for (int k = 0; k <= 40; ++k) meas.push_back({0.005 * k, Vec3::Zero(), -(r.inverse() * kGravity)});
  const Vec3 v = forward_integrate_imu(meas, 0.0, 0.2, r, Vec3::Zero(), BiasPair{});
  EXPECT_LT(v.norm(), 1e-12);
  EXPECT_THROW(forward_integrate_imu(meas, 5.0, 6.0, r, Vec3::Zero(), BiasPair{}), std::invalid_argument);
}

/// Body spinning at a constant rate; world acceleration a0 + a1 * shape(t).
double integration_error(double h, double a1) {
  const Vec3 a0(0.5, -0.3, 0.2);
  const Vec3 w(0.4, -0.7, 1.1);
  const double duration = 1.0;
  auto accel = [&](double t) { return Vec3(a0 + a1 * Vec3(std::cos(2 * t), std::sin(3 * t), t * t)); };
  std::vector<ImuMeas> meas;
  const int n = static_cast<int>(std::round(duration / h));
  for (int k = 0; k <= n; ++k) {
    const double t = k * h;
    const Rotation r = exp_so3(w * t);
    meas.push_back({t, w, r.inverse() * (accel(t) - kGravity)});
  }
  const Vec3 v = forward_integrate_imu(meas, 0.0, duration, Rotation::identity(), Vec3::Zero(), BiasPair{});
  const Vec3 exact = a0 * duration +
                     a1 * Vec3(std::sin(2 * duration) / 2, (1 - std::cos(3 * duration)) / 3, duration * duration * duration / 3);
  return (v - exact).norm();
}

TEST(ForwardIntegration, ConstantAcceleration) { EXPECT_LT(integration_error(0.01, 0.0), 1e-12); }

TEST(ForwardIntegration, SecondOrderConvergence) {
  const double e1 = integration_error(0.01, 1.0);
  const double e2 = integration_error(0.005, 1.0);
  EXPECT_LT(e1, 1e-3);
  EXPECT_NEAR(e1 / e2, 4.0, 0.4);
}

}  // namespace
}  // namespace ctsmooth
