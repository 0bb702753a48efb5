#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "propnp/errors.hpp"

namespace propnp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using MatX2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;
using MatX3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;

inline constexpr double kDefaultZMin = 1e-4;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

// Wraps an angle to (-pi, pi].
double wrap_angle(double theta);

// Camera-frame object pose with translation and yaw about the camera Y axis
// (ground-plane rotation; the ground plane is XZ with Y pointing down).
struct Pose4 {
  static constexpr int kDof = 4;
  static constexpr int kTangentDof = 4;

  Vec3 t = Vec3::Zero();
  double theta = 0.0;

  static Pose4 make(const Vec3& t, double theta);
  Mat3 rotation() const;
};

// Camera-frame object pose with translation and unit-quaternion orientation,
// quaternion stored as (w, x, y, z). Operations returning Pose6 go through
// make(), which normalizes and fixes the double-cover sign (first nonzero
// component positive).
struct Pose6 {
  static constexpr int kDof = 7;
  static constexpr int kTangentDof = 6;

  Vec3 t = Vec3::Zero();
  Vec4 q = Vec4(1, 0, 0, 0);

  static Pose6 make(const Vec3& t, const Vec4& q);
  // Homogeneous form R(q/|q|); exact for non-unit q, so finite differencing
  // in the quaternion embedding is well defined.
  Mat3 rotation() const;
};

// Rotation about the Y axis by theta.
Mat3 rot_y(double theta);
// d/dtheta of rot_y.
Mat3 rot_y_deriv(double theta);

Mat3 quat_to_rot(const Vec4& q);
// Derivative of the normalized rotation w.r.t. quaternion component k at a
// unit quaternion. Satisfies sum_k q_k * G_k = 0 (tangency by construction).
Mat3 quat_rot_deriv(const Vec4& q, int k);
// Orthonormal basis of the tangent space of the unit sphere at q (4x3).
Eigen::Matrix<double, 4, 3> quat_tangent_basis(const Vec4& q);
Vec4 canonical_quat(const Vec4& q);

// Weighted 2D-3D correspondences: the PnP problem instance.
struct CorrespondenceSet {
  MatX3 x3d;  // object-frame points, meters
  MatX2 x2d;  // image observations, pixels
  MatX2 w2d;  // per-axis positive weights, 1/pixels

  int size() const { return static_cast<int>(x3d.rows()); }
  // Throws InvalidProblem on inconsistent sizes, too few points, or
  // non-positive / non-finite weights.
  void validate(int min_points) const;
};

// Pinhole projection. Throws NonPositiveDepth when z <= z_min.
Vec2 project(const CameraIntrinsics& cam, const Vec3& p_cam,
             double z_min = kDefaultZMin);
// Jacobian of project w.r.t. the camera-frame point.
Mat23 project_jacobian(const CameraIntrinsics& cam, const Vec3& p_cam);

struct ResidualPair {
  Vec2 r;  // unweighted reprojection error
  Vec2 f;  // weighted reprojection error w2d .* r
};

template <class PoseT>
ResidualPair residual(const PoseT& pose, const CameraIntrinsics& cam,
                      const CorrespondenceSet& corr, int i,
                      double z_min = kDefaultZMin);

// Jacobian of the weighted residual f_i w.r.t. the pose parameters
// [t, theta] (2x4) or [t, q] (2x7, quaternion columns tangent to the unit
// sphere at q).
template <class PoseT>
Eigen::Matrix<double, 2, PoseT::kDof> pose_jacobian(
    const PoseT& pose, const CameraIntrinsics& cam,
    const CorrespondenceSet& corr, int i, double z_min = kDefaultZMin);

// Applies an additive increment in parameter space; wraps the yaw angle /
// renormalizes the quaternion.
Pose4 apply_increment(const Pose4& pose, const Eigen::Vector4d& delta);
Pose6 apply_increment(const Pose6& pose,
                      const Eigen::Matrix<double, 7, 1>& delta);

struct PoseDistance {
  double pos_err = 0.0;    // meters
  double angle_err = 0.0;  // radians
};

PoseDistance geodesic_distance(const Pose4& a, const Pose4& b);
PoseDistance geodesic_distance(const Pose6& a, const Pose6& b);

}  // namespace propnp
