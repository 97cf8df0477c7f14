#pragma once

#include <memory>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ctsmooth/lie.hpp"
#include "ctsmooth/state.hpp"

namespace ctsmooth {

/// World gravity; accelerometers at rest read -R^T g under the model used here.
inline const Vec3 kGravity(0.0, 0.0, 9.8);

enum class FactorType : int { kImu = 0, kBias, kLidar, kVisual, kVelocity, kPrior, kLinear, kCustom };
inline constexpr int kNumFactorTypes = 8;
std::string_view factor_type_name(FactorType type);

/// Sensor-to-IMU rigid transform: x_I = rotation * x_S + translation.
struct Extrinsic {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

struct ImuMeas {
  double t = 0.0;  // raw stamp (s)
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // m/s^2
};

/// Closest-point plane parameterization pi = d * n.
struct PlaneCP {
  Vec3 pi = Vec3::UnitZ();

  Vec3 normal() const { return pi.normalized(); }
  double distance() const { return pi.norm(); }
  /// n^T p - d; zero on the plane.
  double signed_distance(const Vec3& p) const { return normal().dot(p) - distance(); }
};

struct LidarPointMeas {
  double t = 0.0;
  Vec3 point = Vec3::Zero();  // LiDAR frame (m)
  int plane_id = -1;          // simulator ground truth, diagnostics only
  int stream = 0;
};

struct VisualObs {
  double t = 0.0;  // raw camera stamp
  int track_id = -1;
  Vec2 obs = Vec2::Zero();  // normalized image plane
};

struct JacobianBlock {
  Key key;
  Eigen::MatrixXd block;
};

/// Unwhitened residual, Jacobian blocks and per-row square-root weights.
struct FactorEval {
  Eigen::VectorXd residual;
  Eigen::VectorXd sqrt_weight;
  std::vector<JacobianBlock> jacobians;

  /// Adds to an existing block with the same key, otherwise appends.
  void add(const Key& key, const Eigen::Ref<const Eigen::MatrixXd>& block);
  const JacobianBlock* find(const Key& key) const;
  void clear();
};

class Factor {
 public:
  virtual ~Factor() = default;
  virtual FactorType type() const = 0;
  virtual int residual_dim() const = 0;
  /// False when the factor cannot be evaluated (stamp out of range, depth guard).
  virtual bool evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const = 0;

  /// Huber threshold on the whitened residual norm; <= 0 disables it.
  double huber_delta = 0.0;
};

using FactorPtr = std::shared_ptr<const Factor>;

struct ImuNoise {
  double gyro = 1e-3;             // rad/s per sample
  double accel = 1e-2;            // m/s^2 per sample
  double gyro_bias_walk = 1e-4;   // rad/s/sqrt(s)
  double accel_bias_walk = 1e-3;  // m/s^2/sqrt(s)
};

class ImuFactor final : public Factor {
 public:
  ImuFactor(ImuMeas meas, int bias_index, const ImuNoise& noise, Vec3 gravity = kGravity);
  FactorType type() const override { return FactorType::kImu; }
  int residual_dim() const override { return 6; }
  bool evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const override;

  const ImuMeas& measurement() const { return meas_; }
  int bias_index() const { return bias_index_; }

 private:
  ImuMeas meas_;
  int bias_index_;
  double sigma_gyro_, sigma_accel_;
  Vec3 gravity_;
};

/// Random-walk link between the bias pairs of consecutive windows.
class BiasFactor final : public Factor {
 public:
  BiasFactor(int prev_index, int index, const ImuNoise& noise, double window_duration);
  FactorType type() const override { return FactorType::kBias; }
  int residual_dim() const override { return 6; }
  bool evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const override;

 private:
  int prev_, cur_;
  double w_gyro_, w_accel_;
};

class LidarFactor final : public Factor {
 public:
  LidarFactor(LidarPointMeas meas, PlaneCP plane, Extrinsic lidar_to_imu, double sigma);
  FactorType type() const override { return FactorType::kLidar; }
  int residual_dim() const override { return 1; }
  bool evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const override;

 private:
  LidarPointMeas meas_;
  PlaneCP plane_;
  Extrinsic ext_;
  double sigma_;
};

/// Reprojection of a landmark, stored by inverse depth in its anchor frame, into frame b.
class VisualFactor final : public Factor {
 public:
  static constexpr double kDepthMin = 1e-3;

  VisualFactor(int landmark_id, double stamp, Vec2 obs, Extrinsic cam_to_imu, double sigma);
  FactorType type() const override { return FactorType::kVisual; }
  int residual_dim() const override { return 2; }
  bool evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const override;

  int landmark_id() const { return landmark_; }
  double stamp() const { return stamp_; }

 private:
  int landmark_;
  double stamp_;
  Vec2 obs_;
  Extrinsic ext_;
  double sigma_;
};

/// r = v_hat - v(t).
class VelocityFactor final : public Factor {
 public:
  VelocityFactor(double t, Vec3 v_hat, double sigma);
  FactorType type() const override { return FactorType::kVelocity; }
  int residual_dim() const override { return 3; }
  bool evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const override;

 private:
  double t_;
  Vec3 v_hat_;
  double sigma_;
};

/// Evaluates state.prior; an empty prior yields a zero-dimensional residual.
class PriorFactor final : public Factor {
 public:
  FactorType type() const override { return FactorType::kPrior; }
  int residual_dim() const override { return -1; }
  bool evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const override;
};

/// r = sum_k A_k x_k - b over vector blocks; test and toy problems.
class LinearFactor final : public Factor {
 public:
  LinearFactor(std::vector<Key> keys, std::vector<Eigen::MatrixXd> a, Eigen::VectorXd b, Eigen::VectorXd sqrt_weight);
  FactorType type() const override { return FactorType::kLinear; }
  int residual_dim() const override { return static_cast<int>(b_.size()); }
  bool evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const override;

 private:
  std::vector<Key> keys_;
  std::vector<Eigen::MatrixXd> a_;
  Eigen::VectorXd b_;
  Eigen::VectorXd w_;
};

/// Midpoint integration of a = R (a_m - b_a) + g from t_begin to t_end (IMU clock corrected by offset).
Vec3 forward_integrate_imu(const std::vector<ImuMeas>& meas, double t_begin, double t_end,
                           const Rotation& r_begin, const Vec3& v_begin, const BiasPair& bias,
                           const Vec3& gravity = kGravity, double imu_offset = 0.0);

/// Camera pose at time tau: world point -> camera point transform parts.
struct CameraPose {
  Mat3 r_gc;
  Vec3 p_gc;
};
CameraPose camera_pose(const EstimatorState& state, double tau, const Extrinsic& cam_to_imu);

}  // namespace ctsmooth
