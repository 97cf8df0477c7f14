#include "ctsmooth/factors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ctsmooth {

namespace {

constexpr int kK = kSplineOrder;

Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p) {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> j;
  j << iz, 0.0, -p.x() * iz * iz,
       0.0, iz, -p.y() * iz * iz;
  return j;
}

}  // namespace

std::string_view factor_type_name(FactorType type) {
  switch (type) {
    case FactorType::kImu: return "imu";
    case FactorType::kBias: return "bias";
    case FactorType::kLidar: return "lidar";
    case FactorType::kVisual: return "visual";
    case FactorType::kVelocity: return "velocity";
    case FactorType::kPrior: return "prior";
    case FactorType::kLinear: return "linear";
    case FactorType::kCustom: return "custom";
  }
  return "unknown";
}

void FactorEval::add(const Key& key, const Eigen::Ref<const Eigen::MatrixXd>& block) {
  for (auto& jb : jacobians) {
    if (jb.key == key) {
      jb.block += block;
      return;
    }
  }
  jacobians.push_back({key, block});
}

const JacobianBlock* FactorEval::find(const Key& key) const {
  for (const auto& jb : jacobians) {
    if (jb.key == key) return &jb;
  }
  return nullptr;
}

void FactorEval::clear() {
  residual.resize(0);
  sqrt_weight.resize(0);
  jacobians.clear();
}

// --- IMU -------------------------------------------------------------------

ImuFactor::ImuFactor(ImuMeas meas, int bias_index, const ImuNoise& noise, Vec3 gravity)
    : meas_(meas), bias_index_(bias_index), sigma_gyro_(noise.gyro), sigma_accel_(noise.accel), gravity_(gravity) {}

bool ImuFactor::evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const {
  out.clear();
  const double tau = meas_.t + state.offsets.imu;
  if (!state.grid().contains(tau)) return false;
  const auto bias_it = state.biases.find(bias_index_);
  if (bias_it == state.biases.end()) return false;

  const BasisEval basis = cumulative_basis(state.grid(), tau);
  const RotationEval re = state.rot.evaluate(basis, with_jacobians);
  const Vec3 acc = state.pos.evaluate(basis, 2);
  const Mat3 rt = re.rotation.matrix().transpose();
  const Vec3 specific = rt * (acc - gravity_);
  const BiasPair& b = bias_it->second;

  out.residual.resize(6);
  out.residual << re.omega - meas_.gyro + b.gyro, specific - meas_.accel + b.accel;
  out.sqrt_weight.resize(6);
  out.sqrt_weight << Vec3::Constant(1.0 / sigma_gyro_), Vec3::Constant(1.0 / sigma_accel_);
  if (!with_jacobians) return true;

  const int seg = basis.segment;
  const Mat3 spec_hat = hat(specific);
  const Eigen::Vector4d wp = R3Spline::weights(basis, 2);
  Eigen::Matrix<double, 6, 3> blk;
  for (int j = 0; j < kK; ++j) {
    blk.topRows<3>() = re.d_omega.block<3, 3>(0, 3 * j);
    blk.bottomRows<3>() = spec_hat * re.d_rotation.block<3, 3>(0, 3 * j);
    out.add(rot_key(seg + j), blk);
    blk.topRows<3>().setZero();
    blk.bottomRows<3>() = wp[j] * rt;
    out.add(pos_key(seg + j), blk);
  }
  blk.setZero();
  blk.topRows<3>().setIdentity();
  out.add(gyro_bias_key(bias_index_), blk);
  blk.setZero();
  blk.bottomRows<3>().setIdentity();
  out.add(accel_bias_key(bias_index_), blk);

  Eigen::Matrix<double, 6, 1> dt_col;
  dt_col << re.omega_dot, -hat(re.omega) * specific + rt * state.pos.evaluate(basis, 3);
  out.add(imu_offset_key(), dt_col);
  return true;
}

// --- Bias ------------------------------------------------------------------

BiasFactor::BiasFactor(int prev_index, int index, const ImuNoise& noise, double window_duration)
    : prev_(prev_index), cur_(index) {
  if (window_duration <= 0.0) throw std::invalid_argument("bias factor needs a positive window duration");
  const double s = std::sqrt(window_duration);
  w_gyro_ = 1.0 / (noise.gyro_bias_walk * s);
  w_accel_ = 1.0 / (noise.accel_bias_walk * s);
}

bool BiasFactor::evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const {
  out.clear();
  const auto a = state.biases.find(prev_);
  const auto b = state.biases.find(cur_);
  if (a == state.biases.end() || b == state.biases.end()) return false;
  out.residual.resize(6);
  out.residual << b->second.gyro - a->second.gyro, b->second.accel - a->second.accel;
  out.sqrt_weight.resize(6);
  out.sqrt_weight << Vec3::Constant(w_gyro_), Vec3::Constant(w_accel_);
  if (!with_jacobians) return true;
  Eigen::Matrix<double, 6, 3> blk = Eigen::Matrix<double, 6, 3>::Zero();
  blk.topRows<3>() = -Mat3::Identity();
  out.add(gyro_bias_key(prev_), blk);
  blk.topRows<3>() = Mat3::Identity();
  out.add(gyro_bias_key(cur_), blk);
  blk.setZero();
  blk.bottomRows<3>() = -Mat3::Identity();
  out.add(accel_bias_key(prev_), blk);
  blk.bottomRows<3>() = Mat3::Identity();
  out.add(accel_bias_key(cur_), blk);
  return true;
}

// --- LiDAR -----------------------------------------------------------------

LidarFactor::LidarFactor(LidarPointMeas meas, PlaneCP plane, Extrinsic lidar_to_imu, double sigma)
    : meas_(meas), plane_(plane), ext_(lidar_to_imu), sigma_(sigma) {}

bool LidarFactor::evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const {
  out.clear();
  const double tau = meas_.t;  // LiDAR clock is the time base
  if (!state.grid().contains(tau)) return false;
  const BasisEval basis = cumulative_basis(state.grid(), tau);
  const RotationEval re = state.rot.evaluate(basis, with_jacobians);
  const Vec3 q = ext_.apply(meas_.point);
  const Mat3& r = re.rotation.matrix();
  const Vec3 p_world = r * q + state.pos.evaluate(basis, 0);
  const Vec3 n = plane_.normal();

  out.residual = Eigen::VectorXd::Constant(1, n.dot(p_world) - plane_.distance());
  out.sqrt_weight = Eigen::VectorXd::Constant(1, 1.0 / sigma_);
  if (!with_jacobians) return true;

  const Eigen::RowVector3d d_rot = -n.transpose() * r * hat(q);
  const Eigen::Vector4d wp = R3Spline::weights(basis, 0);
  for (int j = 0; j < kK; ++j) {
    out.add(rot_key(basis.segment + j), d_rot * re.d_rotation.block<3, 3>(0, 3 * j));
    out.add(pos_key(basis.segment + j), wp[j] * n.transpose());
  }
  return true;
}

// --- Visual ----------------------------------------------------------------

VisualFactor::VisualFactor(int landmark_id, double stamp, Vec2 obs, Extrinsic cam_to_imu, double sigma)
    : landmark_(landmark_id), stamp_(stamp), obs_(obs), ext_(cam_to_imu), sigma_(sigma) {}

bool VisualFactor::evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const {
  out.clear();
  const auto it = state.landmarks.find(landmark_);
  if (it == state.landmarks.end()) return false;
  const LandmarkInvDepth& lm = it->second;
  if (!(lm.inv_depth > 0.0)) return false;
  const double tau_a = lm.anchor_stamp + state.offsets.cam;
  const double tau_b = stamp_ + state.offsets.cam;
  const KnotGrid& grid = state.grid();
  if (!grid.contains(tau_a) || !grid.contains(tau_b)) return false;

  const BasisEval ba = cumulative_basis(grid, tau_a);
  const BasisEval bb = cumulative_basis(grid, tau_b);
  const RotationEval ea = state.rot.evaluate(ba, with_jacobians);
  const RotationEval eb = state.rot.evaluate(bb, with_jacobians);
  const Mat3& ra = ea.rotation.matrix();
  const Mat3& rb = eb.rotation.matrix();
  const Mat3 rbt = rb.transpose();
  const Vec3 pa = state.pos.evaluate(ba, 0);
  const Vec3 pb = state.pos.evaluate(bb, 0);
  const Mat3& ric = ext_.rotation.matrix();

  const Vec3 ray(lm.anchor_obs.x(), lm.anchor_obs.y(), 1.0);
  const double inv_depth = lm.inv_depth;
  const Vec3 qa = ric * (ray / inv_depth) + ext_.translation;  // anchor IMU frame
  const Vec3 world = ra * qa + pa;
  const Vec3 w = rbt * (world - pb);                            // IMU frame of b
  const Vec3 pc = ric.transpose() * (w - ext_.translation);     // camera frame of b
  if (pc.z() < kDepthMin) return false;

  out.residual = pc.head<2>() / pc.z() - obs_;
  out.sqrt_weight = Eigen::VectorXd::Constant(2, 1.0 / sigma_);
  if (!with_jacobians) return true;

  const Eigen::Matrix<double, 2, 3> jw = projection_jacobian(pc) * ric.transpose();
  const Eigen::Matrix<double, 2, 3> jw_rbt = jw * rbt;
  const Eigen::Matrix<double, 2, 3> d_rot_a = -jw_rbt * ra * hat(qa);
  const Eigen::Matrix<double, 2, 3> d_rot_b = jw * hat(w);
  const Eigen::Vector4d wa = R3Spline::weights(ba, 0);
  const Eigen::Vector4d wb = R3Spline::weights(bb, 0);
  for (int j = 0; j < kK; ++j) {
    out.add(rot_key(ba.segment + j), d_rot_a * ea.d_rotation.block<3, 3>(0, 3 * j));
    out.add(pos_key(ba.segment + j), wa[j] * jw_rbt);
    out.add(rot_key(bb.segment + j), d_rot_b * eb.d_rotation.block<3, 3>(0, 3 * j));
    out.add(pos_key(bb.segment + j), -wb[j] * jw_rbt);
  }
  out.add(inv_depth_key(landmark_), jw_rbt * ra * ric * (-ray / (inv_depth * inv_depth)));

  const Vec3 va = state.pos.evaluate(ba, 1);
  const Vec3 vb = state.pos.evaluate(bb, 1);
  const Vec3 dw_dt = rbt * (ra * (ea.omega.cross(qa)) + va) - eb.omega.cross(w) - rbt * vb;
  out.add(cam_offset_key(), jw * dw_dt);
  return true;
}

// --- Velocity --------------------------------------------------------------

VelocityFactor::VelocityFactor(double t, Vec3 v_hat, double sigma) : t_(t), v_hat_(v_hat), sigma_(sigma) {}

bool VelocityFactor::evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const {
  out.clear();
  if (!state.grid().contains(t_)) return false;
  const BasisEval basis = cumulative_basis(state.grid(), t_);
  out.residual = v_hat_ - state.pos.evaluate(basis, 1);
  out.sqrt_weight = Eigen::VectorXd::Constant(3, 1.0 / sigma_);
  if (!with_jacobians) return true;
  const Eigen::Vector4d w = R3Spline::weights(basis, 1);
  for (int j = 0; j < kK; ++j) out.add(pos_key(basis.segment + j), -w[j] * Mat3::Identity());
  return true;
}

// --- Prior -----------------------------------------------------------------

bool PriorFactor::evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const {
  out.clear();
  const MarginalPrior& prior = state.prior;
  if (prior.empty()) return true;
  const int n = prior.total_dim();
  Eigen::VectorXd dx(n);
  int off = 0;
  for (std::size_t k = 0; k < prior.keys.size(); ++k) {
    if (!state.has(prior.keys[k])) {
      throw std::logic_error("prior references missing block " + to_string(prior.keys[k]));
    }
    dx.segment(off, prior.dims[k]) = state.minus(prior.keys[k], prior.linearization[k]);
    off += prior.dims[k];
  }
  out.residual = prior.sqrt_info * dx + prior.r0;
  out.sqrt_weight = Eigen::VectorXd::Ones(out.residual.size());
  if (!with_jacobians) return true;
  off = 0;
  for (std::size_t k = 0; k < prior.keys.size(); ++k) {
    const int d = prior.dims[k];
    if (prior.keys[k].kind == BlockKind::kRotCtrl) {
      out.add(prior.keys[k], prior.sqrt_info.middleCols(off, d) * right_jacobian_inv(dx.segment<3>(off)));
    } else {
      out.add(prior.keys[k], prior.sqrt_info.middleCols(off, d));
    }
    off += d;
  }
  return true;
}

// --- Linear ----------------------------------------------------------------

LinearFactor::LinearFactor(std::vector<Key> keys, std::vector<Eigen::MatrixXd> a, Eigen::VectorXd b,
                           Eigen::VectorXd sqrt_weight)
    : keys_(std::move(keys)), a_(std::move(a)), b_(std::move(b)), w_(std::move(sqrt_weight)) {
  if (keys_.size() != a_.size()) throw std::invalid_argument("linear factor: keys and blocks differ in count");
  for (const auto& m : a_) {
    if (m.rows() != b_.size()) throw std::invalid_argument("linear factor: block row count mismatch");
  }
  if (w_.size() == 0) w_ = Eigen::VectorXd::Ones(b_.size());
}

bool LinearFactor::evaluate(const EstimatorState& state, FactorEval& out, bool with_jacobians) const {
  out.clear();
  out.residual = -b_;
  for (std::size_t k = 0; k < keys_.size(); ++k) {
    const BlockValue v = state.value(keys_[k]);
    out.residual += a_[k] * std::get<Eigen::VectorXd>(v);
    if (with_jacobians) out.add(keys_[k], a_[k]);
  }
  out.sqrt_weight = w_;
  return true;
}

// --- Helpers ---------------------------------------------------------------

Vec3 forward_integrate_imu(const std::vector<ImuMeas>& meas, double t_begin, double t_end,
                           const Rotation& r_begin, const Vec3& v_begin, const BiasPair& bias,
                           const Vec3& gravity, double imu_offset) {
  struct Node {
    double t;
    const ImuMeas* m;
  };
  std::vector<Node> nodes;
  for (const auto& m : meas) {
    const double tau = m.t + imu_offset;
    if (tau >= t_begin && tau <= t_end) nodes.push_back({tau, &m});
  }
  if (nodes.empty()) throw std::invalid_argument("forward_integrate_imu: no measurements in interval");
  std::sort(nodes.begin(), nodes.end(), [](const Node& a, const Node& b) { return a.t < b.t; });
  // Hold the first and last readings constant to cover the interval ends.
  nodes.insert(nodes.begin(), Node{t_begin, nodes.front().m});
  nodes.push_back(Node{t_end, nodes.back().m});

  Rotation r = r_begin;
  Vec3 v = v_begin;
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const double h = nodes[k + 1].t - nodes[k].t;
    if (h <= 0.0) continue;
    const ImuMeas& m0 = *nodes[k].m;
    const ImuMeas& m1 = *nodes[k + 1].m;
    const Vec3 w_mid = 0.5 * (m0.gyro + m1.gyro) - bias.gyro;
    const Rotation r_next = r * exp_so3(w_mid * h);
    const Vec3 a0 = r * (m0.accel - bias.accel) + gravity;
    const Vec3 a1 = r_next * (m1.accel - bias.accel) + gravity;
    v += 0.5 * h * (a0 + a1);
    r = r_next;
  }
  return v;
}

CameraPose camera_pose(const EstimatorState& state, double tau, const Extrinsic& cam_to_imu) {
  const BasisEval basis = cumulative_basis(state.grid(), tau);
  const Rotation r = state.rot.evaluate(basis, false).rotation;
  const Vec3 p = state.pos.evaluate(basis, 0);
  return {r.matrix() * cam_to_imu.rotation.matrix(), r * cam_to_imu.translation + p};
}

}  // namespace ctsmooth
