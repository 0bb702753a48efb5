#include "propnp/geometry.hpp"

#include <cmath>

namespace propnp {

double wrap_angle(double theta) {
  double w = std::remainder(theta, 2.0 * M_PI);
  if (w <= -M_PI) w += 2.0 * M_PI;  // remainder can land on -pi exactly
  return w;
}

Pose4 Pose4::make(const Vec3& t, double theta) {
  return Pose4{t, wrap_angle(theta)};
}

Mat3 Pose4::rotation() const { return rot_y(theta); }

Mat3 rot_y(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

Mat3 rot_y_deriv(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Mat3 r;
  r << -s, 0, c, 0, 0, 0, -c, 0, -s;
  return r;
}

Vec4 canonical_quat(const Vec4& q) {
  for (int k = 0; k < 4; ++k) {
    if (q[k] != 0.0) return q[k] > 0.0 ? q : Vec4(-q);
  }
  return q;
}

Pose6 Pose6::make(const Vec3& t, const Vec4& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !q.allFinite()) {
    throw InvalidProblem("Pose6 quaternion must be finite and nonzero");
  }
  return Pose6{t, canonical_quat(q / n)};
}

Mat3 Pose6::rotation() const { return quat_to_rot(q); }

// Homogeneous quadratic form divided by |q|^2: exact for any nonzero q.
Mat3 quat_to_rot(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  const double n = q.squaredNorm();
  Mat3 r;
  r << w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z;
  return r / n;
}

namespace {

// Derivative of the homogeneous quadratic rotation form w.r.t. q_k.
Mat3 quat_rot_quad_deriv(const Vec4& q, int k) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 g;
  switch (k) {
    case 0:
      g << 2 * w, -2 * z, 2 * y, 2 * z, 2 * w, -2 * x, -2 * y, 2 * x, 2 * w;
      break;
    case 1:
      g << 2 * x, 2 * y, 2 * z, 2 * y, -2 * x, -2 * w, 2 * z, 2 * w, -2 * x;
      break;
    case 2:
      g << -2 * y, 2 * x, 2 * w, 2 * x, 2 * y, 2 * z, -2 * w, 2 * z, -2 * y;
      break;
    default:
      g << -2 * z, -2 * w, 2 * x, 2 * w, -2 * z, 2 * y, 2 * x, 2 * y, 2 * z;
      break;
  }
  return g;
}

}  // namespace

// For R(q) = Rq(q)/|q|^2 with Rq homogeneous quadratic,
// dR/dq_k = (dRq/dq_k - 2 q_k R) / |q|^2. Euler's relation on Rq gives
// sum_k q_k dR/dq_k = 0, so the derivative lives in the tangent space.
Mat3 quat_rot_deriv(const Vec4& q, int k) {
  const double n = q.squaredNorm();
  return (quat_rot_quad_deriv(q, k) - 2.0 * q[k] * quat_to_rot(q)) / n;
}

Eigen::Matrix<double, 4, 3> quat_tangent_basis(const Vec4& q) {
  // Householder reflector mapping e0 to q; columns 1..3 then span the
  // tangent space at q.
  Vec4 u = q.normalized();
  Vec4 v = u;
  v[0] += (u[0] >= 0.0 ? 1.0 : -1.0);
  v.normalize();
  Eigen::Matrix4d h = Eigen::Matrix4d::Identity() - 2.0 * v * v.transpose();
  // h*e0 = -sign(u0)*u; the sign does not matter for a basis.
  return h.rightCols<3>();
}

void CorrespondenceSet::validate(int min_points) const {
  const int n = size();
  if (x2d.rows() != n || w2d.rows() != n) {
    throw InvalidProblem("correspondence arrays have mismatched lengths");
  }
  if (n < min_points) {
    throw InvalidProblem("need at least " + std::to_string(min_points) +
                         " correspondences, got " + std::to_string(n));
  }
  if (!x3d.allFinite() || !x2d.allFinite() || !w2d.allFinite()) {
    throw InvalidProblem("correspondences contain non-finite values");
  }
  if ((w2d.array() <= 0.0).any()) {
    throw InvalidProblem("all w2d components must be positive");
  }
}

Vec2 project(const CameraIntrinsics& cam, const Vec3& p_cam, double z_min) {
  if (!(p_cam.z() > z_min)) {
    throw NonPositiveDepth("point depth " + std::to_string(p_cam.z()) +
                           " <= z_min");
  }
  return {cam.fx * p_cam.x() / p_cam.z() + cam.cx,
          cam.fy * p_cam.y() / p_cam.z() + cam.cy};
}

Mat23 project_jacobian(const CameraIntrinsics& cam, const Vec3& p_cam) {
  const double iz = 1.0 / p_cam.z();
  Mat23 j;
  j << cam.fx * iz, 0, -cam.fx * p_cam.x() * iz * iz, 0, cam.fy * iz,
      -cam.fy * p_cam.y() * iz * iz;
  return j;
}

template <class PoseT>
ResidualPair residual(const PoseT& pose, const CameraIntrinsics& cam,
                      const CorrespondenceSet& corr, int i, double z_min) {
  const Vec3 p = pose.rotation() * corr.x3d.row(i).transpose() + pose.t;
  ResidualPair out;
  out.r = project(cam, p, z_min) - corr.x2d.row(i).transpose();
  out.f = corr.w2d.row(i).transpose().cwiseProduct(out.r);
  return out;
}

template ResidualPair residual<Pose4>(const Pose4&, const CameraIntrinsics&,
                                      const CorrespondenceSet&, int, double);
template ResidualPair residual<Pose6>(const Pose6&, const CameraIntrinsics&,
                                      const CorrespondenceSet&, int, double);

template <>
Eigen::Matrix<double, 2, 4> pose_jacobian<Pose4>(const Pose4& pose,
                                                 const CameraIntrinsics& cam,
                                                 const CorrespondenceSet& corr,
                                                 int i, double z_min) {
  const Vec3 x = corr.x3d.row(i).transpose();
  const Vec3 p = pose.rotation() * x + pose.t;
  if (!(p.z() > z_min)) {
    throw NonPositiveDepth("pose_jacobian: point behind camera");
  }
  const Mat23 pj = project_jacobian(cam, p);
  Eigen::Matrix<double, 2, 4> j;
  j.leftCols<3>() = pj;
  j.col(3) = pj * (rot_y_deriv(pose.theta) * x);
  return corr.w2d.row(i).transpose().asDiagonal() * j;
}

template <>
Eigen::Matrix<double, 2, 7> pose_jacobian<Pose6>(const Pose6& pose,
                                                 const CameraIntrinsics& cam,
                                                 const CorrespondenceSet& corr,
                                                 int i, double z_min) {
  const Vec3 x = corr.x3d.row(i).transpose();
  const Vec3 p = pose.rotation() * x + pose.t;
  if (!(p.z() > z_min)) {
    throw NonPositiveDepth("pose_jacobian: point behind camera");
  }
  const Mat23 pj = project_jacobian(cam, p);
  Eigen::Matrix<double, 2, 7> j;
  j.leftCols<3>() = pj;
  for (int k = 0; k < 4; ++k) {
    j.col(3 + k) = pj * (quat_rot_deriv(pose.q, k) * x);
  }
  return corr.w2d.row(i).transpose().asDiagonal() * j;
}

Pose4 apply_increment(const Pose4& pose, const Eigen::Vector4d& delta) {
  return Pose4::make(pose.t + delta.head<3>(), pose.theta + delta[3]);
}

Pose6 apply_increment(const Pose6& pose,
                      const Eigen::Matrix<double, 7, 1>& delta) {
  return Pose6::make(pose.t + delta.head<3>(), pose.q + delta.tail<4>());
}

PoseDistance geodesic_distance(const Pose4& a, const Pose4& b) {
  return {(a.t - b.t).norm(), std::abs(wrap_angle(a.theta - b.theta))};
}

PoseDistance geodesic_distance(const Pose6& a, const Pose6& b) {
  const double d = std::min(1.0, std::abs(a.q.dot(b.q)));
  return {(a.t - b.t).norm(), 2.0 * std::acos(d)};
}

}  // namespace propnp
