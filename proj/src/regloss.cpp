#include "propnp/regloss.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "propnp/solver.hpp"

namespace propnp {

double smooth_l1(double d, double beta) {
  return d <= beta ? d * d / (2.0 * beta) : d - 0.5 * beta;
}

double smooth_l1_deriv(double d, double beta) {
  return d <= beta ? d / beta : 1.0;
}

namespace {

// Rotation-column block of dp/dy at a fixed pose: R'(theta) x for Pose4,
// [G_k x]_k for Pose6.
Eigen::Matrix<double, 3, 1> rot_cols(const Pose4& pose, const Vec3& x) {
  return rot_y_deriv(pose.theta) * x;
}

Eigen::Matrix<double, 3, 4> rot_cols(const Pose6& pose, const Vec3& x) {
  Eigen::Matrix<double, 3, 4> s;
  for (int k = 0; k < 4; ++k) s.col(k) = quat_rot_deriv(pose.q, k) * x;
  return s;
}

// Pullback of the rotation-column block onto the 3D point.
void rot_cols_pullback(const Pose4& pose,
                       const Eigen::Matrix<double, 3, 1>& sbar, Vec3* xbar) {
  *xbar += rot_y_deriv(pose.theta).transpose() * sbar;
}

void rot_cols_pullback(const Pose6& pose,
                       const Eigen::Matrix<double, 3, 4>& sbar, Vec3* xbar) {
  for (int k = 0; k < 4; ++k) {
    *xbar += quat_rot_deriv(pose.q, k).transpose() * sbar.col(k);
  }
}

// Loss l(y* + dy, y_gt) and its gradient w.r.t. dy.
double pose_metric(const Pose4& y_star, const Pose4& y_gt,
                   const Eigen::Matrix<double, 4, 1>& dy,
                   const RegLossConfig& cfg,
                   Eigen::Matrix<double, 4, 1>* grad, double* pos_term,
                   double* orient_term) {
  const Vec3 et = y_star.t + dy.head<3>() - y_gt.t;
  const double dt = et.norm();
  const double dth = y_star.theta + dy[3] - y_gt.theta;
  *pos_term = smooth_l1(dt, cfg.beta);
  *orient_term = 1.0 - std::cos(dth);
  grad->head<3>() =
      cfg.w_pos * (dt <= cfg.beta ? et / cfg.beta
                                  : et / std::max(dt, 1e-300));
  (*grad)[3] = cfg.w_orient * std::sin(dth);
  return cfg.w_pos * *pos_term + cfg.w_orient * *orient_term;
}

double pose_metric(const Pose6& y_star, const Pose6& y_gt,
                   const Eigen::Matrix<double, 7, 1>& dy,
                   const RegLossConfig& cfg,
                   Eigen::Matrix<double, 7, 1>* grad, double* pos_term,
                   double* orient_term) {
  const Vec3 et = y_star.t + dy.head<3>() - y_gt.t;
  const double dt = et.norm();
  const Vec4 l = y_star.q + dy.tail<4>();
  const double c = l.dot(y_gt.q);
  *pos_term = smooth_l1(dt, cfg.beta);
  *orient_term = 2.0 - 2.0 * c * c;
  grad->head<3>() =
      cfg.w_pos * (dt <= cfg.beta ? et / cfg.beta
                                  : et / std::max(dt, 1e-300));
  grad->tail<4>() = cfg.w_orient * (-4.0 * c) * y_gt.q;
  return cfg.w_pos * *pos_term + cfg.w_orient * *orient_term;
}

}  // namespace

template <class PoseT>
RegLossResult reg_loss(const CameraIntrinsics& cam,
                       const CorrespondenceSet& corr, const PoseT& y_star,
                       const PoseT& y_gt, const RegLossConfig& cfg,
                       const HuberConfig& huber) {
  constexpr int kD = PoseT::kDof;
  constexpr int kR = PoseT::kTangentDof;
  const int n = corr.size();

  const AdaptiveDelta dinfo = adaptive_delta_with_grad(corr, huber);
  const double delta = dinfo.delta;
  const Mat3 rot = y_star.rotation();
  const auto basis = step_basis(y_star);  // kD x kR, constant

  // Forward pass: raw weighted residuals/Jacobians and rescale factors.
  using JacT = Eigen::Matrix<double, 2, kD>;
  std::vector<JacT, Eigen::aligned_allocator<JacT>> jac(n);
  std::vector<Vec2, Eigen::aligned_allocator<Vec2>> fs(n), rs(n), ws(n);
  std::vector<Vec3, Eigen::aligned_allocator<Vec3>> ps(n);
  std::vector<double> rho(n, 1.0);
  std::vector<char> valid(n, 0);

  Eigen::Matrix<double, kR, kR> a =
      cfg.epsilon * Eigen::Matrix<double, kR, kR>::Identity();
  Eigen::Matrix<double, kR, 1> b = Eigen::Matrix<double, kR, 1>::Zero();

  for (int i = 0; i < n; ++i) {
    const Vec3 x = corr.x3d.row(i).transpose();
    const Vec3 p = rot * x + y_star.t;
    if (!(p.z() > kDefaultZMin)) continue;
    valid[i] = 1;
    ps[i] = p;
    ws[i] = corr.w2d.row(i).transpose();
    rs[i] = project(cam, p) - corr.x2d.row(i).transpose();
    fs[i] = ws[i].cwiseProduct(rs[i]);
    JacT j;
    j.template leftCols<3>() = project_jacobian(cam, p);
    j.template rightCols<kD - 3>() =
        project_jacobian(cam, p) * rot_cols(y_star, x);
    jac[i] = ws[i].asDiagonal() * j;
    rho[i] = huber_deriv(fs[i].squaredNorm(), delta);
    const auto jb = (jac[i] * basis).eval();
    a.noalias() += rho[i] * jb.transpose() * jb;
    b.noalias() += rho[i] * jb.transpose() * fs[i];
  }

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, kR, kR>> eig(a);
  const double emin = eig.eigenvalues().minCoeff();
  const double emax = eig.eigenvalues().maxCoeff();
  if (!(emin > 0.0) || emax / emin > 1e12) {
    throw SingularSystem("regularization GN system is numerically singular");
  }
  const auto solve_a = [&](const Eigen::Matrix<double, kR, 1>& rhs) {
    return (eig.eigenvectors() *
            (eig.eigenvectors().transpose() * rhs)
                .cwiseQuotient(eig.eigenvalues()))
        .eval();
  };

  const Eigen::Matrix<double, kR, 1> u = solve_a(b);
  const Eigen::Matrix<double, kD, 1> dy = -(basis * u);

  RegLossResult out;
  Eigen::Matrix<double, kD, 1> g_dy;
  out.loss = pose_metric(y_star, y_gt, dy, cfg, &g_dy, &out.pos_term,
                         &out.orient_term);

  // Adjoint: dL = sbar' db - sbar' dA u with sbar = A^-1 (-B' g_dy).
  const Eigen::Matrix<double, kR, 1> sbar =
      solve_a((-basis.transpose() * g_dy).eval());
  const Eigen::Matrix<double, kD, 1> bs = basis * sbar;
  const Eigen::Matrix<double, kD, 1> bu = basis * u;

  out.grad_x3d = MatX3::Zero(n, 3);
  out.grad_x2d = MatX2::Zero(n, 2);
  out.grad_w2d = MatX2::Zero(n, 2);
  double delta_bar = 0.0;

  for (int i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    const Vec2 ai = jac[i] * bs;
    const Vec2 ci = jac[i] * bu;

    // Adjoints of the raw block quantities.
    Vec2 f_bar = rho[i] * ai;
    JacT j_bar = rho[i] * ((fs[i] - ci) * bs.transpose() -
                           ai * bu.transpose());
    const double rho_bar = ai.dot(fs[i] - ci);

    // rho' = min(1, delta/|f|); below threshold the factor is constant.
    const double fnorm = fs[i].norm();
    if (fnorm > delta) {
      delta_bar += rho_bar / fnorm;
      f_bar += rho_bar * (-delta / (fnorm * fnorm * fnorm)) * fs[i];
    }

    // f = w .* r
    Vec2 w_bar = f_bar.cwiseProduct(rs[i]);
    const Vec2 r_bar = f_bar.cwiseProduct(ws[i]);
    out.grad_x2d.row(i) -= r_bar.transpose();
    Vec3 p_bar = project_jacobian(cam, ps[i]).transpose() * r_bar;

    // J = diag(w) * P * S
    const Mat23 pj = project_jacobian(cam, ps[i]);
    Eigen::Matrix<double, 3, kD> s_full;
    s_full.template leftCols<3>().setIdentity();
    s_full.template rightCols<kD - 3>() =
        rot_cols(y_star, corr.x3d.row(i).transpose());
    const Eigen::Matrix<double, 2, kD> k_mat = pj * s_full;
    for (int c = 0; c < 2; ++c) {
      w_bar[c] += k_mat.row(c).dot(j_bar.row(c));
    }
    const Eigen::Matrix<double, 2, kD> k_bar = ws[i].asDiagonal() * j_bar;

    // P pullback (P depends on p)
    const Eigen::Matrix<double, 2, 3> p_mat_bar =
        k_bar * s_full.transpose();
    const double z = ps[i].z(), iz2 = 1.0 / (z * z), iz3 = iz2 / z;
    p_bar.x() += p_mat_bar(0, 2) * (-cam.fx * iz2);
    p_bar.y() += p_mat_bar(1, 2) * (-cam.fy * iz2);
    p_bar.z() += p_mat_bar(0, 0) * (-cam.fx * iz2) +
                 p_mat_bar(1, 1) * (-cam.fy * iz2) +
                 p_mat_bar(0, 2) * (2.0 * cam.fx * ps[i].x() * iz3) +
                 p_mat_bar(1, 2) * (2.0 * cam.fy * ps[i].y() * iz3);

    // S pullback (rotation columns depend on the 3D point)
    const Eigen::Matrix<double, 3, kD> s_bar = pj.transpose() * k_bar;
    Vec3 x_bar = rot.transpose() * p_bar;
    rot_cols_pullback(y_star,
                      s_bar.template rightCols<kD - 3>().eval(), &x_bar);

    out.grad_x3d.row(i) += x_bar.transpose();
    out.grad_w2d.row(i) += w_bar.transpose();
  }

  out.grad_w2d += delta_bar * dinfo.d_w2d;
  out.grad_x2d += delta_bar * dinfo.d_x2d;
  return out;
}

template RegLossResult reg_loss<Pose4>(const CameraIntrinsics&,
                                       const CorrespondenceSet&, const Pose4&,
                                       const Pose4&, const RegLossConfig&,
                                       const HuberConfig&);
template RegLossResult reg_loss<Pose6>(const CameraIntrinsics&,
                                       const CorrespondenceSet&, const Pose6&,
                                       const Pose6&, const RegLossConfig&,
                                       const HuberConfig&);

double dynamic_kl_weight(DynamicWeightState& state,
                         const CorrespondenceSet& corr, double momentum) {
  const double stat = corr.w2d.colwise().sum().lpNorm<1>();
  if (state.steps == 0) {
    state.ema = stat;
  } else {
    state.ema = (1.0 - momentum) * state.ema + momentum * stat;
  }
  ++state.steps;
  return 1.0 / state.ema;
}

}  // namespace propnp
