#ifndef COOPCBF_GEOMETRY_HPP
#define COOPCBF_GEOMETRY_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace coopcbf::geom {

template<typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template<typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

/// [v]x, so that skew(v) * w == v.cross(w).
template<typename Scalar>
Mat3<Scalar> skew(const Vec3<Scalar>& v)
{
  Mat3<Scalar> S;
  S << Scalar(0), -v.z(), v.y(),
       v.z(), Scalar(0), -v.x(),
       -v.y(), v.x(), Scalar(0);
  return S;
}

/// Inverse of skew() on the antisymmetric part of M.
inline Eigen::Vector3d vee(const Eigen::Matrix3d& M)
{
  return 0.5 * Eigen::Vector3d(M(2, 1) - M(1, 2), M(0, 2) - M(2, 0), M(1, 0) - M(0, 1));
}

/// Orientation parametrized as a small deviation xi about an operating rotation.
struct RotationState
{
  Eigen::Matrix3d operating = Eigen::Matrix3d::Identity();
  Eigen::Vector3d deviation = Eigen::Vector3d::Zero();
};

/// First-order rotation R_op (I + [xi]x). Not exactly orthonormal; the defect is O(|xi|^2).
template<typename Scalar>
Mat3<Scalar> approx_rotation(const Mat3<Scalar>& operating, const Vec3<Scalar>& deviation)
{
  return operating * (Mat3<Scalar>::Identity() + skew(deviation));
}

inline Eigen::Matrix3d approx_rotation(const RotationState& s)
{
  return approx_rotation<double>(s.operating, s.deviation);
}

/// Exact exponential map (Rodrigues).
inline Eigen::Matrix3d exp_so3(const Eigen::Vector3d& w)
{
  const double th = w.norm();
  if (th < 1e-12) return Eigen::Matrix3d::Identity() + skew<double>(w);
  return Eigen::AngleAxisd(th, w / th).toRotationMatrix();
}

inline Eigen::Vector3d log_so3(const Eigen::Matrix3d& R)
{
  const Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

/// Nearest rotation in the Frobenius sense (polar factor), det forced to +1.
inline Eigen::Matrix3d project_to_so3(const Eigen::Matrix3d& M)
{
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d U = svd.matrixU();
  const Eigen::Matrix3d V = svd.matrixV();
  if ((U * V.transpose()).determinant() < 0.0) U.col(2) *= -1.0;
  return U * V.transpose();
}

/// Folds the deviation into the operating rotation: new R_op = polar(R_op (I + [xi]x)), xi = 0.
inline RotationState reset_operating_point(const RotationState& s)
{
  RotationState out;
  out.operating = project_to_so3(approx_rotation(s));
  out.deviation.setZero();
  return out;
}

/// Max entry of |R'R - I| and |det R - 1|.
inline double orthonormality_defect(const Eigen::Matrix3d& R)
{
  const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return std::max(ortho, std::abs(R.determinant() - 1.0));
}

struct EulerZYX
{
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

/// Yaw-pitch-roll (z-y-x) angles, used for logging only.
inline EulerZYX euler_zyx(const Eigen::Matrix3d& R)
{
  EulerZYX e;
  e.pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
  e.yaw = std::atan2(R(1, 0), R(0, 0));
  e.roll = std::atan2(R(2, 1), R(2, 2));
  return e;
}

inline Eigen::Matrix3d rot_z(double yaw)
{
  return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a)
{
  a = std::remainder(a, 2.0 * M_PI);
  return a <= -M_PI ? a + 2.0 * M_PI : a;
}

}  // namespace coopcbf::geom

#endif  // COOPCBF_GEOMETRY_HPP
