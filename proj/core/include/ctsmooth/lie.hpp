#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ctsmooth {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Skew-symmetric matrix such that hat(v) * w == v.cross(w).
Mat3 hat(const Vec3& v);

/// Inverse of hat() on the skew-symmetric part of m.
Vec3 vee(const Mat3& m);

/**
 * @brief Element of SO(3) stored as an orthonormal 3x3 matrix.
 *
 * Composition re-orthonormalizes through a unit quaternion whenever the
 * orthogonality defect grows beyond 1e-13, so long products stay on the group.
 */
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Projects m onto SO(3) (m must be close to a rotation).
  static Rotation from_matrix(const Mat3& m);
  /// Trusts the caller that m is orthonormal with det = +1.
  static Rotation from_orthonormal(const Mat3& m) { return Rotation(m); }
  static Rotation from_quaternion(const Eigen::Quaterniond& q);
  static Rotation identity() { return Rotation(); }

  const Mat3& matrix() const { return m_; }
  Eigen::Quaterniond quaternion() const;

  Rotation inverse() const;
  Rotation operator*(const Rotation& other) const;
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// Re-projects onto SO(3).
  void normalize();

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

Rotation exp_so3(const Vec3& phi);

/// Principal logarithm, ||result|| <= pi. At exactly pi the representative with
/// a non-negative last nonzero component is returned.
Vec3 log_so3(const Rotation& r);

/// Right Jacobian: Exp(phi + d) ~= Exp(phi) Exp(J_r(phi) d).
Mat3 right_jacobian(const Vec3& phi);
Mat3 right_jacobian_inv(const Vec3& phi);

/// Right-minus: Log(a^-1 b).
inline Vec3 rminus(const Rotation& b, const Rotation& a) { return log_so3(a.inverse() * b); }

}  // namespace ctsmooth
