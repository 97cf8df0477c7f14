#pragma once

#include <compare>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "ctsmooth/lie.hpp"
#include "ctsmooth/spline.hpp"

namespace ctsmooth {

enum class BlockKind : int {
  kRotCtrl = 0,
  kPosCtrl,
  kGyroBias,
  kAccelBias,
  kInvDepth,
  kImuOffset,
  kCamOffset,
  kAux,  // free vector block, used by linear toy problems
};

/// Identifies one error-state block: (kind, index).
struct Key {
  BlockKind kind = BlockKind::kAux;
  int index = 0;

  auto operator<=>(const Key&) const = default;
};

std::string to_string(const Key& key);

inline Key rot_key(int i) { return {BlockKind::kRotCtrl, i}; }
inline Key pos_key(int i) { return {BlockKind::kPosCtrl, i}; }
inline Key gyro_bias_key(int k) { return {BlockKind::kGyroBias, k}; }
inline Key accel_bias_key(int k) { return {BlockKind::kAccelBias, k}; }
inline Key inv_depth_key(int id) { return {BlockKind::kInvDepth, id}; }
inline Key imu_offset_key() { return {BlockKind::kImuOffset, 0}; }
inline Key cam_offset_key() { return {BlockKind::kCamOffset, 0}; }
inline Key aux_key(int i) { return {BlockKind::kAux, i}; }

/// Value of one block; rotations live on SO(3), everything else is a vector.
using BlockValue = std::variant<Rotation, Eigen::VectorXd>;

struct BiasPair {
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // m/s^2
};

/// IMU and camera clock offsets w.r.t. the LiDAR clock; tau = t + offset.
struct TimeOffsets {
  double imu = 0.0;  // s
  double cam = 0.0;  // s
  bool estimate_imu = false;
  bool estimate_cam = false;
  double max_abs = 0.05;  // s
};

/// Inverse-depth landmark expressed along its anchor-keyframe observation ray.
struct LandmarkInvDepth {
  int id = -1;
  int anchor_frame = -1;
  double anchor_stamp = 0.0;    // raw camera stamp of the anchor keyframe
  Vec2 anchor_obs = Vec2::Zero();  // normalized image coordinates
  double inv_depth = 0.0;       // 1/m
};

/**
 * @brief Square-root information prior left behind by marginalization.
 *
 * residual = L * (x [-] x_lin) + r0, cost = 0.5 |residual|^2, with
 * H = L^T L and L^T r0 = b at the linearization point.
 */
struct MarginalPrior {
  std::vector<Key> keys;
  std::vector<BlockValue> linearization;
  std::vector<int> dims;
  Eigen::MatrixXd sqrt_info;  // rows x total_dim
  Eigen::VectorXd r0;

  bool empty() const { return keys.empty() || sqrt_info.rows() == 0; }
  int total_dim() const;
  /// Information matrix L^T L.
  Eigen::MatrixXd information() const;
};

/// The sliding-window estimation state.
class EstimatorState {
 public:
  EstimatorState() = default;
  EstimatorState(const KnotGrid& grid, const Rotation& rot0, const Vec3& pos0, int num_knots);

  So3Spline rot;
  R3Spline pos;
  std::map<int, BiasPair> biases;           // keyed by window index
  std::map<int, LandmarkInvDepth> landmarks;  // keyed by landmark id
  TimeOffsets offsets;
  MarginalPrior prior;
  std::map<int, Eigen::VectorXd> aux;

  /// Append one control point to both splines.
  void append_control_point(const Rotation& r, const Vec3& p);
  int num_control_points() const { return static_cast<int>(pos.ctrl().size()); }
  const KnotGrid& grid() const { return pos.grid(); }

  bool has(const Key& key) const;
  int dim(const Key& key) const;
  BlockValue value(const Key& key) const;
  void set_value(const Key& key, const BlockValue& v);
  /// x <- x [+] delta; rotations right-multiply Exp(delta), offsets are clamped.
  void retract(const Key& key, const Eigen::Ref<const Eigen::VectorXd>& delta);
  /// x [-] reference (right-minus for rotations).
  Eigen::VectorXd minus(const Key& key, const BlockValue& reference) const;

 private:
  Eigen::Vector3d& vec3_ref(const Key& key);
};

}  // namespace ctsmooth
