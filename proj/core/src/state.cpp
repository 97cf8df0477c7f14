#include "ctsmooth/state.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace ctsmooth {

std::string to_string(const Key& key) {
  switch (key.kind) {
    case BlockKind::kRotCtrl: return fmt::format("rot[{}]", key.index);
    case BlockKind::kPosCtrl: return fmt::format("pos[{}]", key.index);
    case BlockKind::kGyroBias: return fmt::format("bg[{}]", key.index);
    case BlockKind::kAccelBias: return fmt::format("ba[{}]", key.index);
    case BlockKind::kInvDepth: return fmt::format("rho[{}]", key.index);
    case BlockKind::kImuOffset: return "t_imu";
    case BlockKind::kCamOffset: return "t_cam";
    case BlockKind::kAux: return fmt::format("aux[{}]", key.index);
  }
  return "?";
}

int MarginalPrior::total_dim() const { return std::accumulate(dims.begin(), dims.end(), 0); }

Eigen::MatrixXd MarginalPrior::information() const {
  if (sqrt_info.rows() == 0) return Eigen::MatrixXd::Zero(total_dim(), total_dim());
  return sqrt_info.transpose() * sqrt_info;
}

EstimatorState::EstimatorState(const KnotGrid& grid, const Rotation& rot0, const Vec3& pos0, int num_knots) {
  KnotGrid g = grid;
  g.num_knots = num_knots;
  rot = So3Spline(g, std::vector<Rotation>(num_knots, rot0));
  pos = R3Spline(g, std::vector<Vec3>(num_knots, pos0));
}

void EstimatorState::append_control_point(const Rotation& r, const Vec3& p) {
  rot.push_back(r);
  pos.push_back(p);
}

bool EstimatorState::has(const Key& key) const {
  switch (key.kind) {
    case BlockKind::kRotCtrl:
    case BlockKind::kPosCtrl: return key.index >= 0 && key.index < num_control_points();
    case BlockKind::kGyroBias:
    case BlockKind::kAccelBias: return biases.contains(key.index);
    case BlockKind::kInvDepth: return landmarks.contains(key.index);
    case BlockKind::kImuOffset:
    case BlockKind::kCamOffset: return true;
    case BlockKind::kAux: return aux.contains(key.index);
  }
  return false;
}

int EstimatorState::dim(const Key& key) const {
  switch (key.kind) {
    case BlockKind::kRotCtrl:
    case BlockKind::kPosCtrl:
    case BlockKind::kGyroBias:
    case BlockKind::kAccelBias: return 3;
    case BlockKind::kInvDepth:
    case BlockKind::kImuOffset:
    case BlockKind::kCamOffset: return 1;
    case BlockKind::kAux: return static_cast<int>(aux.at(key.index).size());
  }
  return 0;
}

Eigen::Vector3d& EstimatorState::vec3_ref(const Key& key) {
  switch (key.kind) {
    case BlockKind::kPosCtrl: return pos.ctrl(key.index);
    case BlockKind::kGyroBias: return biases.at(key.index).gyro;
    case BlockKind::kAccelBias: return biases.at(key.index).accel;
    default: throw std::logic_error("block " + to_string(key) + " is not a 3-vector");
  }
}

BlockValue EstimatorState::value(const Key& key) const {
  if (!has(key)) throw std::out_of_range("unknown state block " + to_string(key));
  switch (key.kind) {
    case BlockKind::kRotCtrl: return rot.ctrl(key.index);
    case BlockKind::kPosCtrl: return Eigen::VectorXd(pos.ctrl(key.index));
    case BlockKind::kGyroBias: return Eigen::VectorXd(biases.at(key.index).gyro);
    case BlockKind::kAccelBias: return Eigen::VectorXd(biases.at(key.index).accel);
    case BlockKind::kInvDepth: return Eigen::VectorXd::Constant(1, landmarks.at(key.index).inv_depth);
    case BlockKind::kImuOffset: return Eigen::VectorXd::Constant(1, offsets.imu);
    case BlockKind::kCamOffset: return Eigen::VectorXd::Constant(1, offsets.cam);
    case BlockKind::kAux: return aux.at(key.index);
  }
  throw std::logic_error("unreachable");
}

void EstimatorState::set_value(const Key& key, const BlockValue& v) {
  if (!has(key)) throw std::out_of_range("unknown state block " + to_string(key));
  if (key.kind == BlockKind::kRotCtrl) {
    rot.ctrl(key.index) = std::get<Rotation>(v);
    return;
  }
  const auto& vec = std::get<Eigen::VectorXd>(v);
  switch (key.kind) {
    case BlockKind::kInvDepth: landmarks.at(key.index).inv_depth = vec[0]; break;
    case BlockKind::kImuOffset: offsets.imu = vec[0]; break;
    case BlockKind::kCamOffset: offsets.cam = vec[0]; break;
    case BlockKind::kAux: aux.at(key.index) = vec; break;
    default: vec3_ref(key) = vec; break;
  }
}

void EstimatorState::retract(const Key& key, const Eigen::Ref<const Eigen::VectorXd>& delta) {
  switch (key.kind) {
    case BlockKind::kRotCtrl: {
      Rotation& r = rot.ctrl(key.index);
      r = r * exp_so3(delta.head<3>());
      return;
    }
    case BlockKind::kInvDepth: landmarks.at(key.index).inv_depth += delta[0]; return;
    case BlockKind::kImuOffset:
      offsets.imu = std::clamp(offsets.imu + delta[0], -offsets.max_abs, offsets.max_abs);
      return;
    case BlockKind::kCamOffset:
      offsets.cam = std::clamp(offsets.cam + delta[0], -offsets.max_abs, offsets.max_abs);
      return;
    case BlockKind::kAux: aux.at(key.index) += delta; return;
    default: vec3_ref(key) += delta.head<3>(); return;
  }
}

Eigen::VectorXd EstimatorState::minus(const Key& key, const BlockValue& reference) const {
  const BlockValue cur = value(key);
  if (key.kind == BlockKind::kRotCtrl) {
    return rminus(std::get<Rotation>(cur), std::get<Rotation>(reference));
  }
  return std::get<Eigen::VectorXd>(cur) - std::get<Eigen::VectorXd>(reference);
}

}  // namespace ctsmooth
