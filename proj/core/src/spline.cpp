#include "ctsmooth/spline.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <fmt/format.h>

namespace ctsmooth {

SplineRangeError::SplineRangeError(double t, double lo, double hi)
    : std::out_of_range(fmt::format("time {:.9f} outside evaluable spline range [{:.9f}, {:.9f})", t, lo, hi)),
      t_(t), lo_(lo), hi_(hi) {}

const Eigen::Vector4d& BasisEval::derivative(int order) const {
  switch (order) {
    case 0: return lambda;
    case 1: return dlambda;
    case 2: return d2lambda;
    case 3: return d3lambda;
    default: throw std::invalid_argument("basis derivative order must be 0..3");
  }
}

const Eigen::Matrix4d& cumulative_blending_matrix() {
  static const Eigen::Matrix4d m = [] {
    Eigen::Matrix4d b;
    b << 6, 5, 1, 0,
         0, 3, 3, 0,
         0, -3, 3, 0,
         0, 1, -2, 1;
    return Eigen::Matrix4d(b / 6.0);
  }();
  return m;
}

BasisEval cumulative_basis(const KnotGrid& grid, double t) {
  if (grid.num_knots < kSplineOrder || !grid.contains(t)) {
    throw SplineRangeError(t, grid.min_time(), grid.max_time());
  }
  const double s = (t - grid.t0) / grid.dt;
  int i = static_cast<int>(std::floor(s));
  i = std::clamp(i, 0, grid.num_segments() - 1);
  return cumulative_basis_at(grid, i, std::clamp(s - i, 0.0, 1.0));
}

BasisEval cumulative_basis_at(const KnotGrid& grid, int segment, double u) {
  if (segment < 0 || segment >= grid.num_segments() || u < 0.0 || u > 1.0) {
    throw SplineRangeError(grid.knot_time(segment) + u * grid.dt, grid.min_time(), grid.max_time());
  }
  BasisEval out;
  out.segment = segment;
  out.u = u;
  const Eigen::Matrix4d& m = cumulative_blending_matrix();
  const double inv_dt = 1.0 / grid.dt;
  const Eigen::Vector4d p0(1.0, u, u * u, u * u * u);
  const Eigen::Vector4d p1(0.0, 1.0, 2.0 * u, 3.0 * u * u);
  const Eigen::Vector4d p2(0.0, 0.0, 2.0, 6.0 * u);
  const Eigen::Vector4d p3(0.0, 0.0, 0.0, 6.0);
  out.lambda = m.transpose() * p0;
  out.lambda[0] = 1.0;
  out.dlambda = m.transpose() * p1 * inv_dt;
  out.d2lambda = m.transpose() * p2 * (inv_dt * inv_dt);
  out.d3lambda = m.transpose() * p3 * (inv_dt * inv_dt * inv_dt);
  return out;
}

// ---------------------------------------------------------------------------
// R3Spline

R3Spline::R3Spline(KnotGrid grid, std::vector<Vec3> ctrl) : grid_(grid), ctrl_(std::move(ctrl)) {
  grid_.num_knots = static_cast<int>(ctrl_.size());
}

void R3Spline::push_back(const Vec3& p) {
  ctrl_.push_back(p);
  grid_.num_knots = static_cast<int>(ctrl_.size());
}

Eigen::Vector4d R3Spline::weights(const BasisEval& basis, int order) {
  const Eigen::Vector4d& l = basis.derivative(order);
  // lambda_0 is constant 1, so its derivatives vanish; lambda_4 == 0.
  const double l0 = order == 0 ? 1.0 : 0.0;
  return {l0 - l[1], l[1] - l[2], l[2] - l[3], l[3]};
}

Vec3 R3Spline::evaluate(double t, int order) const { return evaluate(cumulative_basis(grid_, t), order); }

Vec3 R3Spline::evaluate(const BasisEval& basis, int order) const {
  const int i = basis.segment;
  const Eigen::Vector4d& l = basis.derivative(order);
  Vec3 out = order == 0 ? ctrl_[i] : Vec3::Zero();
  for (int j = 1; j < kSplineOrder; ++j) out += l[j] * (ctrl_[i + j] - ctrl_[i + j - 1]);
  return out;
}

CtrlJacobian R3Spline::jacobian(double t, int order) const {
  const BasisEval basis = cumulative_basis(grid_, t);
  const Eigen::Vector4d w = weights(basis, order);
  CtrlJacobian jac = CtrlJacobian::Zero();
  for (int j = 0; j < kSplineOrder; ++j) jac.block<3, 3>(0, 3 * j).diagonal().setConstant(w[j]);
  return jac;
}

// ---------------------------------------------------------------------------
// So3Spline

So3Spline::So3Spline(KnotGrid grid, std::vector<Rotation> ctrl) : grid_(grid), ctrl_(std::move(ctrl)) {
  grid_.num_knots = static_cast<int>(ctrl_.size());
}

void So3Spline::push_back(const Rotation& r) {
  ctrl_.push_back(r);
  grid_.num_knots = static_cast<int>(ctrl_.size());
}

RotationEval So3Spline::evaluate(double t, bool with_jacobians) const {
  return evaluate(cumulative_basis(grid_, t), with_jacobians);
}

RotationEval So3Spline::evaluate(const BasisEval& basis, bool with_jacobians) const {
  const int i = basis.segment;
  constexpr int kD = kSplineOrder - 1;

  // Index j in 1..3 is stored at j-1.
  std::array<Vec3, kD> d;
  std::array<Mat3, kD> rel;  // Exp(d_j) = R_{i+j-1}^T R_{i+j}
  std::array<Rotation, kD> a;
  for (int j = 0; j < kD; ++j) {
    const Rotation r = ctrl_[i + j].inverse() * ctrl_[i + j + 1];
    rel[j] = r.matrix();
    d[j] = log_so3(r);
    a[j] = exp_so3(basis.lambda[j + 1] * d[j]);
  }

  RotationEval out;
  out.segment = i;
  out.rotation = ctrl_[i] * a[0] * a[1] * a[2];

  // omega^(j+1) = A_j^T omega^(j) + dlambda_j d_j, and its time derivative.
  std::array<Vec3, kD + 1> omega_partial;
  omega_partial[0].setZero();
  Vec3 omega_dot = Vec3::Zero();
  for (int j = 0; j < kD; ++j) {
    const Mat3 at = a[j].matrix().transpose();
    const Vec3 rotated = at * omega_partial[j];
    const Vec3 rate = basis.dlambda[j + 1] * d[j];
    omega_dot = at * omega_dot + basis.d2lambda[j + 1] * d[j] + rotated.cross(rate);
    omega_partial[j + 1] = rotated + rate;
  }
  out.omega = omega_partial[kD];
  out.omega_dot = omega_dot;

  if (!with_jacobians) return out;

  // post[j] = A_{j+1} ... A_3 (post[kD-1] = I) and post_all = A_1 A_2 A_3.
  std::array<Mat3, kD> post;
  post[kD - 1].setIdentity();
  for (int j = kD - 2; j >= 0; --j) post[j] = a[j + 1].matrix() * post[j + 1];
  const Mat3 post_all = a[0].matrix() * post[0];

  // Derivatives w.r.t. the difference vectors d_j.
  std::array<Mat3, kD> drot_dd;
  std::array<Mat3, kD> domega_dd;
  for (int j = 0; j < kD; ++j) {
    const double lam = basis.lambda[j + 1];
    const Mat3 jr = right_jacobian(lam * d[j]);
    const Mat3 pt = post[j].transpose();
    drot_dd[j] = lam * pt * jr;
    const Vec3 rotated = a[j].matrix().transpose() * omega_partial[j];
    domega_dd[j] = pt * (lam * hat(rotated) * jr + basis.dlambda[j + 1] * Mat3::Identity());
  }

  out.d_rotation.setZero();
  out.d_omega.setZero();
  out.d_rotation.block<3, 3>(0, 0) = post_all.transpose();
  for (int j = 0; j < kD; ++j) {
    const Mat3 jr_inv = right_jacobian_inv(d[j]);
    // d_j depends on R_{i+j} (right) and R_{i+j+1} (left) in 0-based block terms.
    const Mat3 dd_next = jr_inv;                          // w.r.t. block j+1
    const Mat3 dd_prev = -jr_inv * rel[j].transpose();    // w.r.t. block j
    out.d_rotation.block<3, 3>(0, 3 * (j + 1)) += drot_dd[j] * dd_next;
    out.d_rotation.block<3, 3>(0, 3 * j) += drot_dd[j] * dd_prev;
    out.d_omega.block<3, 3>(0, 3 * (j + 1)) += domega_dd[j] * dd_next;
    out.d_omega.block<3, 3>(0, 3 * j) += domega_dd[j] * dd_prev;
  }
  return out;
}

Mat3 So3Spline::rotation_rate(double t) const {
  const RotationEval e = evaluate(t, false);
  return e.rotation.matrix() * hat(e.omega);
}

}  // namespace ctsmooth
