#include "ctsmooth/lie.hpp"

#include <cmath>
#include <numbers>

namespace ctsmooth {

namespace {

constexpr double kSmallAngle = 1e-7;
// Below this distance to pi the axis is recovered from the symmetric part.
constexpr double kNearPi = 1e-2;

}  // namespace

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) {
  return 0.5 * Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
}

Rotation Rotation::from_matrix(const Mat3& m) {
  Rotation r(m);
  r.normalize();
  return r;
}

Rotation Rotation::from_quaternion(const Eigen::Quaterniond& q) {
  return Rotation(q.normalized().toRotationMatrix());
}

Eigen::Quaterniond Rotation::quaternion() const {
  Eigen::Quaterniond q(m_);
  q.normalize();
  // Canonical hemisphere keeps CSV output stable.
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

Rotation Rotation::inverse() const { return Rotation(m_.transpose()); }

Rotation Rotation::operator*(const Rotation& other) const {
  Rotation r(m_ * other.m_);
  const double defect = (r.m_.transpose() * r.m_ - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (defect > 1e-13) r.normalize();
  return r;
}

void Rotation::normalize() {
  Eigen::Quaterniond q(m_);
  q.normalize();
  m_ = q.toRotationMatrix();
}

Rotation exp_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = hat(phi);
  if (theta < kSmallAngle) {
    return Rotation::from_matrix(Mat3::Identity() + k + 0.5 * k * k);
  }
  const double half = 0.5 * theta;
  const double s = std::sin(theta) / theta;
  // (1 - cos t) / t^2 without cancellation.
  const double c = 2.0 * std::pow(std::sin(half) / theta, 2);
  return Rotation::from_orthonormal(Mat3::Identity() + s * k + c * k * k);
}

Vec3 log_so3(const Rotation& r) {
  const Mat3& m = r.matrix();
  const Vec3 skew = vee(m);  // sin(theta) * axis
  const double sin_theta = skew.norm();
  const double cos_theta = 0.5 * (m.trace() - 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < kSmallAngle) {
    // First-order: R ~ I + hat(phi); second-order term is symmetric.
    return skew;
  }
  if (std::numbers::pi - theta > kNearPi) {
    return (theta / sin_theta) * skew;
  }

  // (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) a a^T.
  const Mat3 sym = 0.5 * (m + m.transpose()) - cos_theta * Mat3::Identity();
  Eigen::Index k = 0;
  sym.diagonal().maxCoeff(&k);
  Vec3 axis = sym.col(k) / std::sqrt(sym(k, k) * (1.0 - cos_theta));
  axis.normalize();
  const double orient = axis.dot(skew);
  if (orient < 0.0) {
    axis = -axis;
  } else if (orient == 0.0) {
    for (int i = 2; i >= 0; --i) {
      if (axis[i] != 0.0) {
        if (axis[i] < 0.0) axis = -axis;
        break;
      }
    }
  }
  return theta * axis;
}

Mat3 right_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = hat(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() - 0.5 * k + (1.0 / 6.0) * k * k;
  }
  const double t2 = theta * theta;
  const double a = 2.0 * std::pow(std::sin(0.5 * theta) / theta, 2);  // (1 - cos)/t^2
  const double b = (theta - std::sin(theta)) / (t2 * theta);
  return Mat3::Identity() - a * k + b * k * k;
}

Mat3 right_jacobian_inv(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = hat(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * k + (1.0 / 12.0) * k * k;
  }
  const double c = 1.0 / (theta * theta) -
                   (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * k + c * k * k;
}

}  // namespace ctsmooth
