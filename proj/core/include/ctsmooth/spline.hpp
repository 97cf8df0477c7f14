#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctsmooth/lie.hpp"

namespace ctsmooth {

/// Spline order (cubic).
inline constexpr int kSplineOrder = 4;

/// Jacobian of a 3-vector quantity w.r.t. the four control points of a segment.
using CtrlJacobian = Eigen::Matrix<double, 3, 3 * kSplineOrder>;

class SplineRangeError : public std::out_of_range {
 public:
  SplineRangeError(double t, double lo, double hi);
  double time() const { return t_; }
  double lower() const { return lo_; }
  double upper() const { return hi_; }

 private:
  double t_, lo_, hi_;
};

/**
 * @brief Uniform knot grid of a cumulative spline.
 *
 * Knot i sits at t0 + i * dt. Segment i covers [t_i, t_{i+1}) and is driven by
 * control points i .. i+3, so a grid with N control points is evaluable on
 * [t0, t0 + (N - 3) dt).
 */
struct KnotGrid {
  double t0 = 0.0;
  double dt = 0.1;
  int num_knots = 0;

  double knot_time(int i) const { return t0 + i * dt; }
  double min_time() const { return t0; }
  double max_time() const { return t0 + (num_knots - kSplineOrder + 1) * dt; }
  bool contains(double t) const { return t >= min_time() && t < max_time(); }
  int num_segments() const { return num_knots - kSplineOrder + 1; }
};

/// Cumulative basis values and their time derivatives at one instant.
struct BasisEval {
  int segment = 0;
  double u = 0.0;
  Eigen::Vector4d lambda;    // lambda[0] == 1
  Eigen::Vector4d dlambda;   // 1/s
  Eigen::Vector4d d2lambda;  // 1/s^2
  Eigen::Vector4d d3lambda;  // 1/s^3

  /// Derivative of the given order (0..3).
  const Eigen::Vector4d& derivative(int order) const;
};

/// Cumulative cubic blending matrix (rows index powers of u, columns index lambda_j).
const Eigen::Matrix4d& cumulative_blending_matrix();

BasisEval cumulative_basis(const KnotGrid& grid, double t);
/// Basis of a given segment at local parameter u in [0, 1] (u = 1 gives the left limit at the next knot).
BasisEval cumulative_basis_at(const KnotGrid& grid, int segment, double u);

/// R^3 cumulative B-spline: p(t) = p_i + sum_j lambda_j(t) (p_{i+j} - p_{i+j-1}).
class R3Spline {
 public:
  R3Spline() = default;
  R3Spline(KnotGrid grid, std::vector<Vec3> ctrl);

  const KnotGrid& grid() const { return grid_; }
  const std::vector<Vec3>& ctrl() const { return ctrl_; }
  Vec3& ctrl(int i) { return ctrl_.at(i); }
  const Vec3& ctrl(int i) const { return ctrl_.at(i); }
  void push_back(const Vec3& p);

  /// order 0 position, 1 velocity, 2 acceleration, 3 jerk.
  Vec3 evaluate(double t, int order) const;
  Vec3 evaluate(const BasisEval& basis, int order) const;
  Vec3 position(double t) const { return evaluate(t, 0); }
  Vec3 velocity(double t) const { return evaluate(t, 1); }
  Vec3 acceleration(double t) const { return evaluate(t, 2); }
  Vec3 jerk(double t) const { return evaluate(t, 3); }

  /// d evaluate(t, order) / d p_{i..i+3}; blocks are scalar multiples of I.
  CtrlJacobian jacobian(double t, int order) const;

  /// Scalar weight of control point i+j in evaluate(t, order).
  static Eigen::Vector4d weights(const BasisEval& basis, int order);

 private:
  KnotGrid grid_;
  std::vector<Vec3> ctrl_;
};

/// Everything the factors need from the rotation spline at one instant.
struct RotationEval {
  int segment = 0;
  Rotation rotation;
  Vec3 omega = Vec3::Zero();      // body angular velocity (rad/s)
  Vec3 omega_dot = Vec3::Zero();  // body angular acceleration (rad/s^2)
  // Right-perturbation Jacobians w.r.t. R_i .. R_{i+3}: R(t) Exp(J delta).
  CtrlJacobian d_rotation = CtrlJacobian::Zero();
  CtrlJacobian d_omega = CtrlJacobian::Zero();
};

/// SO(3) cumulative B-spline: R(t) = R_i prod_j Exp(lambda_j(t) Log(R_{i+j-1}^-1 R_{i+j})).
class So3Spline {
 public:
  So3Spline() = default;
  So3Spline(KnotGrid grid, std::vector<Rotation> ctrl);

  const KnotGrid& grid() const { return grid_; }
  const std::vector<Rotation>& ctrl() const { return ctrl_; }
  Rotation& ctrl(int i) { return ctrl_.at(i); }
  const Rotation& ctrl(int i) const { return ctrl_.at(i); }
  void push_back(const Rotation& r);

  RotationEval evaluate(double t, bool with_jacobians) const;
  RotationEval evaluate(const BasisEval& basis, bool with_jacobians) const;

  Rotation rotation(double t) const { return evaluate(t, false).rotation; }
  /// dR/dt = R hat(omega).
  Mat3 rotation_rate(double t) const;
  Vec3 body_angular_velocity(double t) const { return evaluate(t, false).omega; }
  Vec3 body_angular_accel(double t) const { return evaluate(t, false).omega_dot; }

  CtrlJacobian jacobian_rotation(double t) const { return evaluate(t, true).d_rotation; }
  CtrlJacobian jacobian_body_omega(double t) const { return evaluate(t, true).d_omega; }

 private:
  KnotGrid grid_;
  std::vector<Rotation> ctrl_;
};

}  // namespace ctsmooth
