#pragma once

#include <cmath>
#include <utility>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace larpg {

using Matrix23 = Eigen::Matrix<double, 2, 3>;
using Matrix26 = Eigen::Matrix<double, 2, 6>;
using Matrix36 = Eigen::Matrix<double, 3, 6>;
using Matrix63 = Eigen::Matrix<double, 6, 3>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;
using Vector6d = Eigen::Matrix<double, 6, 1>;

// Rigid transform world -> camera: p_cam = R * p_world + t.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Matrix3d rotation_matrix() const { return rotation.toRotationMatrix(); }

  // Camera center in world coordinates, -R^T t.
  Eigen::Vector3d center() const {
    return -(rotation.conjugate() * translation);
  }
};

// Tangent vector at a pose: rotational part (axis-angle, rad) and
// translational part (m). Stacked order in 6-vectors is [omega; vee].
struct PoseTangent {
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();
  Eigen::Vector3d vee = Eigen::Vector3d::Zero();

  Vector6d as_vector() const {
    Vector6d v;
    v << omega, vee;
    return v;
  }
  static PoseTangent from_vector(const Vector6d& v) {
    return {v.head<3>(), v.tail<3>()};
  }
  double norm() const { return as_vector().norm(); }
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double k1 = 0.0;  // radial distortion, fixed (never optimized)
  double k2 = 0.0;
};

inline Eigen::Matrix3d hat(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return m;
}

// Unit quaternion exp of an axis-angle vector.
inline Eigen::Quaterniond quat_exp(const Eigen::Vector3d& omega) {
  const double theta_sq = omega.squaredNorm();
  const double theta = std::sqrt(theta_sq);
  double real;
  double imag_scale;  // sin(theta/2)/theta
  if (theta < 1e-8) {
    real = 1.0 - theta_sq / 8.0;
    imag_scale = 0.5 - theta_sq / 48.0;
  } else {
    real = std::cos(0.5 * theta);
    imag_scale = std::sin(0.5 * theta) / theta;
  }
  return Eigen::Quaterniond(real, imag_scale * omega.x(), imag_scale * omega.y(),
                            imag_scale * omega.z());
}

// Left Jacobian of SO(3), V(w) = I + (1-cos)/t^2 w^ + (t-sin)/t^3 w^ w^.
inline Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& omega) {
  const double theta_sq = omega.squaredNorm();
  const double theta = std::sqrt(theta_sq);
  const Eigen::Matrix3d W = hat(omega);
  double a;  // (1 - cos t) / t^2
  double b;  // (t - sin t) / t^3
  if (theta < 1e-5) {
    a = 0.5 - theta_sq / 24.0;
    b = 1.0 / 6.0 - theta_sq / 120.0;
  } else {
    a = (1.0 - std::cos(theta)) / theta_sq;
    b = (theta - std::sin(theta)) / (theta_sq * theta);
  }
  return Eigen::Matrix3d::Identity() + a * W + b * W * W;
}

// Exponential retraction with right perturbation, x * exp(xi^).
// The quaternion is renormalized on every call to bound drift.
inline Pose se3_retract(const Pose& x, const PoseTangent& xi) {
  Pose out;
  out.rotation = x.rotation * quat_exp(xi.omega);
  out.rotation.normalize();
  out.translation =
      x.translation + x.rotation * (so3_left_jacobian(xi.omega) * xi.vee);
  return out;
}

struct Projection {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  bool valid = false;
};

inline constexpr double kDepthEps = 1e-8;

// Pinhole with 2-term radial distortion; points at depth <= kDepthEps are
// flagged invalid and the caller treats the observation as zero.
inline Projection project(const Pose& pose, const CameraIntrinsics& intr,
                          const Eigen::Vector3d& point) {
  const Eigen::Vector3d p = pose.rotation * point + pose.translation;
  if (p.z() <= kDepthEps) return {};
  const double xn = p.x() / p.z();
  const double yn = p.y() / p.z();
  const double r2 = xn * xn + yn * yn;
  const double d = 1.0 + r2 * (intr.k1 + intr.k2 * r2);
  Projection out;
  out.pixel.x() = intr.fx * d * xn + intr.cx;
  out.pixel.y() = intr.fy * d * yn + intr.cy;
  out.valid = true;
  return out;
}

struct ProjectionJacobians {
  Matrix26 j_pose;   // d residual / d pose tangent, columns [omega | vee]
  Matrix23 j_point;  // d residual / d point
};

// Jacobians of the residual r = q - project(pose, point) with respect to the
// se3_retract tangent and the point coordinates. Only defined for valid
// projections; callers gate on project(...).valid.
inline ProjectionJacobians project_jacobians(const Pose& pose,
                                             const CameraIntrinsics& intr,
                                             const Eigen::Vector3d& point) {
  const Eigen::Matrix3d R = pose.rotation.toRotationMatrix();
  const Eigen::Vector3d p = R * point + pose.translation;
  const double iz = 1.0 / p.z();
  const double xn = p.x() * iz;
  const double yn = p.y() * iz;
  const double r2 = xn * xn + yn * yn;
  const double d = 1.0 + r2 * (intr.k1 + intr.k2 * r2);
  const double dd = intr.k1 + 2.0 * intr.k2 * r2;  // d'(r2)

  // pixel wrt normalized coords
  Eigen::Matrix2d j_pix_n;
  j_pix_n(0, 0) = intr.fx * (d + 2.0 * xn * xn * dd);
  j_pix_n(0, 1) = intr.fx * 2.0 * xn * yn * dd;
  j_pix_n(1, 0) = intr.fy * 2.0 * xn * yn * dd;
  j_pix_n(1, 1) = intr.fy * (d + 2.0 * yn * yn * dd);

  // normalized coords wrt camera point
  Matrix23 j_n_p;
  j_n_p << iz, 0.0, -xn * iz, 0.0, iz, -yn * iz;

  const Matrix23 j_pix_p = j_pix_n * j_n_p;

  // camera point wrt pose tangent (right perturbation) and wrt point
  Matrix36 dp_dxi;
  dp_dxi.leftCols<3>() = -R * hat(point);
  dp_dxi.rightCols<3>() = R;

  ProjectionJacobians out;
  out.j_pose = -j_pix_p * dp_dxi;
  out.j_point = -j_pix_p * R;
  return out;
}

// Transporter between tangent spaces of a Euclidean shared block. The map is
// the identity; the signature is the seam where non-Euclidean blocks would
// conjugate by the actual transporter.
inline Eigen::Vector3d transporter_apply(
    [[maybe_unused]] const Eigen::Vector3d& from_base,
    [[maybe_unused]] const Eigen::Vector3d& to_base,
    const Eigen::Vector3d& tangent) {
  return tangent;
}

inline Eigen::Matrix3d transporter_conjugate(
    [[maybe_unused]] const Eigen::Vector3d& from_base,
    [[maybe_unused]] const Eigen::Vector3d& to_base,
    const Eigen::Matrix3d& op) {
  return op;
}

}  // namespace larpg
