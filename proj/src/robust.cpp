#include "propnp/robust.hpp"

#include <cmath>

namespace propnp {

double huber(double s, double delta) {
  return s <= delta * delta ? s : delta * (2.0 * std::sqrt(s) - delta);
}

double huber_deriv(double s, double delta) {
  return s <= delta * delta ? 1.0 : delta / std::sqrt(s);
}

double huber_delta_deriv(double s, double delta) {
  return s <= delta * delta ? 0.0 : 2.0 * (std::sqrt(s) - delta);
}

double adaptive_delta(const CorrespondenceSet& corr, const HuberConfig& cfg) {
  const int n = corr.size();
  const Vec2 w_mean = corr.w2d.colwise().mean().transpose();
  const Eigen::RowVector2d x_mean = corr.x2d.colwise().mean();
  const double spread_sq =
      (corr.x2d.rowwise() - x_mean).rowwise().squaredNorm().sum() / (n - 1);
  const double raw =
      cfg.delta_rel * 0.5 * w_mean.lpNorm<1>() * std::sqrt(spread_sq);
  return std::max(cfg.delta_min, raw);
}

AdaptiveDelta adaptive_delta_with_grad(const CorrespondenceSet& corr,
                                       const HuberConfig& cfg) {
  const int n = corr.size();
  const Vec2 w_mean = corr.w2d.colwise().mean().transpose();
  const Eigen::RowVector2d x_mean = corr.x2d.colwise().mean();
  const MatX2 centered = corr.x2d.rowwise() - x_mean;
  const double spread_sq = centered.rowwise().squaredNorm().sum() / (n - 1);
  const double spread = std::sqrt(spread_sq);
  const double w_sum = w_mean.lpNorm<1>();  // weights are positive
  const double raw = cfg.delta_rel * 0.5 * w_sum * spread;

  AdaptiveDelta out;
  out.d_w2d = MatX2::Zero(n, 2);
  out.d_x2d = MatX2::Zero(n, 2);
  if (raw <= cfg.delta_min || spread == 0.0) {
    out.delta = cfg.delta_min;
    out.floored = true;
    return out;
  }
  out.delta = raw;
  // d delta / d w_{i,c} = delta_rel * spread / (2 N)
  out.d_w2d.setConstant(cfg.delta_rel * spread / (2.0 * n));
  // d delta / d x_{i,c} = delta_rel * |w_mean|_1 / 2 * (x_{i,c} - mean_c)
  //                       / ((N-1) * spread)
  out.d_x2d =
      centered * (cfg.delta_rel * 0.5 * w_sum / ((n - 1) * spread));
  return out;
}

Rescaled rescale(const Vec2& f, const Eigen::MatrixXd& jac, double delta) {
  Rescaled out;
  const double norm = f.norm();
  out.rho_prime = norm <= delta ? 1.0 : delta / norm;
  const double s = std::sqrt(out.rho_prime);
  out.f = s * f;
  out.jac = s * jac;
  return out;
}

template <class PoseT>
double robust_cost_with_delta(const PoseT& pose, const CameraIntrinsics& cam,
                              const CorrespondenceSet& corr, double delta) {
  const Mat3 rot = pose.rotation();
  double cost = 0.0;
  for (int i = 0; i < corr.size(); ++i) {
    const Vec3 p = rot * corr.x3d.row(i).transpose() + pose.t;
    if (!(p.z() > kDefaultZMin)) {
      cost += kDepthPenalty;
      continue;
    }
    const Vec2 r = project(cam, p) - corr.x2d.row(i).transpose();
    const Vec2 f = corr.w2d.row(i).transpose().cwiseProduct(r);
    cost += 0.5 * huber(f.squaredNorm(), delta);
  }
  return cost;
}

template <class PoseT>
double robust_cost(const PoseT& pose, const CameraIntrinsics& cam,
                   const CorrespondenceSet& corr, const HuberConfig& cfg) {
  return robust_cost_with_delta(pose, cam, corr, adaptive_delta(corr, cfg));
}

template double robust_cost_with_delta<Pose4>(const Pose4&,
                                              const CameraIntrinsics&,
                                              const CorrespondenceSet&,
                                              double);
template double robust_cost_with_delta<Pose6>(const Pose6&,
                                              const CameraIntrinsics&,
                                              const CorrespondenceSet&,
                                              double);
template double robust_cost<Pose4>(const Pose4&, const CameraIntrinsics&,
                                   const CorrespondenceSet&,
                                   const HuberConfig&);
template double robust_cost<Pose6>(const Pose6&, const CameraIntrinsics&,
                                   const CorrespondenceSet&,
                                   const HuberConfig&);

}  // namespace propnp
