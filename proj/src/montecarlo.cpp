#include "propnp/montecarlo.hpp"

#include <algorithm>
#include <cmath>

namespace propnp {

double logsumexp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Eigen::VectorXd normalized_weights(const Eigen::VectorXd& log_v) {
  const double m = log_v.maxCoeff();
  Eigen::VectorXd w = (log_v.array() - m).exp();
  return w / w.sum();
}

double effective_sample_size(const Eigen::VectorXd& log_v) {
  const Eigen::VectorXd w = normalized_weights(log_v);
  return 1.0 / w.squaredNorm();
}

template <class PoseT>
double log_integrand(const PoseT& pose, const CameraIntrinsics& cam,
                     const CorrespondenceSet& corr, double delta) {
  return -robust_cost_with_delta(pose, cam, corr, delta);
}

template <class PoseT>
void batch_log_integrand_serial(const std::vector<PoseT>& poses,
                                const CameraIntrinsics& cam,
                                const CorrespondenceSet& corr, double delta,
                                Eigen::VectorXd* out) {
  const int n = static_cast<int>(poses.size());
  out->resize(n);
  for (int j = 0; j < n; ++j) {
    (*out)[j] = log_integrand(poses[j], cam, corr, delta);
  }
}

template <class PoseT>
void batch_log_integrand(const std::vector<PoseT>& poses,
                         const CameraIntrinsics& cam,
                         const CorrespondenceSet& corr, double delta,
                         Eigen::VectorXd* out) {
  const int n = static_cast<int>(poses.size());
  out->resize(n);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n; ++j) {
    (*out)[j] = log_integrand(poses[j], cam, corr, delta);
  }
}

template <class PoseT>
EnergyGrads energy_with_grads(const PoseT& pose, const CameraIntrinsics& cam,
                              const CorrespondenceSet& corr,
                              const AdaptiveDelta& delta_info) {
  const int n = corr.size();
  EnergyGrads g;
  g.x3d = MatX3::Zero(n, 3);
  g.x2d = MatX2::Zero(n, 2);
  g.w2d = MatX2::Zero(n, 2);
  const Mat3 rot = pose.rotation();
  const double delta = delta_info.delta;
  double de_ddelta = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec3 p = rot * corr.x3d.row(i).transpose() + pose.t;
    if (!(p.z() > kDefaultZMin)) {
      g.energy += kDepthPenalty;
      continue;
    }
    const Vec2 w = corr.w2d.row(i).transpose();
    const Vec2 r = project(cam, p) - corr.x2d.row(i).transpose();
    const Vec2 f = w.cwiseProduct(r);
    const double s = f.squaredNorm();
    g.energy += 0.5 * huber(s, delta);
    const Vec2 df = huber_deriv(s, delta) * f;  // dE/df
    g.w2d.row(i) = df.cwiseProduct(r).transpose();
    g.x2d.row(i) = -df.cwiseProduct(w).transpose();
    g.x3d.row(i) = (rot.transpose() * project_jacobian(cam, p).transpose() *
                    w.cwiseProduct(df))
                       .transpose();
    de_ddelta += 0.5 * huber_delta_deriv(s, delta);
  }
  g.w2d += de_ddelta * delta_info.d_w2d;
  g.x2d += de_ddelta * delta_info.d_x2d;
  return g;
}

template <class PoseT>
std::vector<EnergyGrads> batch_energy_grads_serial(
    const std::vector<PoseT>& poses, const CameraIntrinsics& cam,
    const CorrespondenceSet& corr, const AdaptiveDelta& delta_info) {
  std::vector<EnergyGrads> out(poses.size());
  for (size_t j = 0; j < poses.size(); ++j) {
    out[j] = energy_with_grads(poses[j], cam, corr, delta_info);
  }
  return out;
}

template <class PoseT>
std::vector<EnergyGrads> batch_energy_grads(const std::vector<PoseT>& poses,
                                            const CameraIntrinsics& cam,
                                            const CorrespondenceSet& corr,
                                            const AdaptiveDelta& delta_info) {
  std::vector<EnergyGrads> out(poses.size());
  const int n = static_cast<int>(poses.size());
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n; ++j) {
    out[j] = energy_with_grads(poses[j], cam, corr, delta_info);
  }
  return out;
}

namespace {

Pose4 sample_pose(const Proposal<Pose4>& q, bool yaw_only, Rng& rng) {
  if (yaw_only) {
    return Pose4::make(q.position.mu(), q.orientation.sample(rng));
  }
  return q.sample(rng);
}

Pose6 sample_pose(const Proposal<Pose6>& q, bool, Rng& rng) {
  return q.sample(rng);
}

double prop_log_density(const Proposal<Pose4>& q, const Pose4& y,
                        bool yaw_only) {
  return yaw_only ? q.orientation.log_density(y.theta) : q.log_density(y);
}

double prop_log_density(const Proposal<Pose6>& q, const Pose6& y, bool) {
  return q.log_density(y);
}

Proposal<Pose4> refit_proposal(const std::vector<Pose4>& samples,
                               const Eigen::VectorXd& weights,
                               const Proposal<Pose4>& prev, bool yaw_only) {
  if (yaw_only) {
    std::vector<double> thetas(samples.size());
    for (size_t j = 0; j < samples.size(); ++j) thetas[j] = samples[j].theta;
    Proposal<Pose4> p;
    p.position = prev.position;
    p.orientation = vm_fit(thetas, weights, prev.orientation.alpha);
    return p;
  }
  return proposal_refit(samples, weights, prev);
}

Proposal<Pose6> refit_proposal(const std::vector<Pose6>& samples,
                               const Eigen::VectorXd& weights,
                               const Proposal<Pose6>& prev, bool) {
  return proposal_refit(samples, weights, prev);
}

}  // namespace

template <class PoseT>
SampleBatch<PoseT> amis(const CameraIntrinsics& cam,
                        const CorrespondenceSet& corr, const AmisConfig& cfg,
                        const HuberConfig& huber,
                        const Proposal<PoseT>& init_proposal, Rng& rng) {
  if (cfg.iterations < 1 || cfg.samples_per_iter < 2) {
    throw InvalidProblem("amis needs T >= 1 and K' >= 2");
  }
  if (cfg.yaw_only && PoseT::kDof != 4) {
    throw InvalidProblem("yaw-only sampling requires a 4DoF pose");
  }
  const double delta = adaptive_delta(corr, huber);
  const int t_count = cfg.iterations;
  const int k_prime = cfg.samples_per_iter;
  const int k_total = t_count * k_prime;

  SampleBatch<PoseT> batch;
  batch.yaw_only = cfg.yaw_only;
  batch.proposals.reserve(t_count);
  batch.proposals.push_back(init_proposal);
  batch.poses.reserve(k_total);
  batch.log_p.resize(k_total);

  // dens(m, j) = log q_m(y_j), filled incrementally.
  Eigen::MatrixXd dens(t_count, k_total);

  for (int t = 0; t < t_count; ++t) {
    for (int k = 0; k < k_prime; ++k) {
      batch.poses.push_back(
          sample_pose(batch.proposals[t], cfg.yaw_only, rng));
    }
    const int count = (t + 1) * k_prime;

    std::vector<PoseT> fresh(batch.poses.begin() + t * k_prime,
                             batch.poses.end());
    Eigen::VectorXd lp;
    batch_log_integrand(fresh, cam, corr, delta, &lp);
    batch.log_p.segment(t * k_prime, k_prime) = lp;

    // new proposal against all poses, old proposals against new poses
    for (int j = 0; j < count; ++j) {
      dens(t, j) = prop_log_density(batch.proposals[t], batch.poses[j],
                                    cfg.yaw_only);
    }
    for (int m = 0; m < t; ++m) {
      for (int j = t * k_prime; j < count; ++j) {
        dens(m, j) = prop_log_density(batch.proposals[m], batch.poses[j],
                                      cfg.yaw_only);
      }
    }

    batch.log_q.resize(count);
    for (int j = 0; j < count; ++j) {
      batch.log_q[j] =
          logsumexp(dens.col(j).head(t + 1)) - std::log(double(t + 1));
    }
    batch.log_v = batch.log_p.head(count) - batch.log_q;
    batch.ess_per_iter.push_back(effective_sample_size(batch.log_v));

    if (t + 1 < t_count) {
      const Eigen::VectorXd vbar = normalized_weights(batch.log_v);
      Proposal<PoseT> next = batch.proposals[t];
      try {
        next = refit_proposal(batch.poses, vbar, batch.proposals[t],
                              cfg.yaw_only);
      } catch (const DegenerateFit&) {
      } catch (const FixedPointDivergence&) {
      }
      batch.proposals.push_back(next);
    }
  }
  return batch;
}

template <class PoseT>
double l_pred(const SampleBatch<PoseT>& batch) {
  if (batch.log_v.size() == 0) {
    throw InvalidProblem("l_pred needs a nonempty sample batch");
  }
  return logsumexp(batch.log_v) -
         std::log(static_cast<double>(batch.log_v.size()));
}

template <class PoseT>
KlLossReport kl_loss_frozen(const CameraIntrinsics& cam,
                            const CorrespondenceSet& corr, const PoseT& y_gt,
                            const SampleBatch<PoseT>& batch,
                            const HuberConfig& huber) {
  const AdaptiveDelta dinfo = adaptive_delta_with_grad(corr, huber);
  const EnergyGrads gt = energy_with_grads(y_gt, cam, corr, dinfo);
  const std::vector<EnergyGrads> per_sample =
      batch_energy_grads(batch.poses, cam, corr, dinfo);

  const int k = static_cast<int>(batch.poses.size());
  Eigen::VectorXd log_v(k);
  for (int j = 0; j < k; ++j) {
    log_v[j] = -per_sample[j].energy - batch.log_q[j];
  }
  const Eigen::VectorXd vbar = normalized_weights(log_v);

  KlLossReport rep;
  rep.l_tgt = gt.energy;
  rep.l_pred = logsumexp(log_v) - std::log(double(k));
  rep.total = rep.l_tgt + rep.l_pred;
  rep.grad_x3d = gt.x3d;
  rep.grad_x2d = gt.x2d;
  rep.grad_w2d = gt.w2d;
  for (int j = 0; j < k; ++j) {
    rep.grad_x3d -= vbar[j] * per_sample[j].x3d;
    rep.grad_x2d -= vbar[j] * per_sample[j].x2d;
    rep.grad_w2d -= vbar[j] * per_sample[j].w2d;
  }
  return rep;
}

template <class PoseT>
double kl_loss_value_frozen(const CameraIntrinsics& cam,
                            const CorrespondenceSet& corr, const PoseT& y_gt,
                            const SampleBatch<PoseT>& batch,
                            const HuberConfig& huber) {
  const double delta = adaptive_delta(corr, huber);
  Eigen::VectorXd lp;
  batch_log_integrand(batch.poses, cam, corr, delta, &lp);
  const Eigen::VectorXd log_v = lp - batch.log_q;
  const double pred =
      logsumexp(log_v) - std::log(double(batch.poses.size()));
  return robust_cost_with_delta(y_gt, cam, corr, delta) + pred;
}

template <class PoseT>
KlLossResult<PoseT> kl_loss_full(const CameraIntrinsics& cam,
                                 const CorrespondenceSet& corr,
                                 const PoseT& y_gt, const SolverConfig& scfg,
                                 const AmisConfig& acfg, Rng& rng) {
  corr.validate(min_points<PoseT>());
  const PoseT init = init_with_gt(cam, corr, scfg, rng, y_gt);
  KlLossResult<PoseT> out;
  out.solution = solve<PoseT>(cam, corr, scfg, init, rng);
  const Proposal<PoseT> q1 = proposal_init(out.solution);
  out.batch = amis(cam, corr, acfg, scfg.huber, q1, rng);
  out.report = kl_loss_frozen(cam, corr, y_gt, out.batch, scfg.huber);
  return out;
}

template <class PoseT>
KlLossReport kl_loss(const CameraIntrinsics& cam,
                     const CorrespondenceSet& corr, const PoseT& y_gt,
                     const SolverConfig& scfg, const AmisConfig& acfg,
                     Rng& rng) {
  return kl_loss_full(cam, corr, y_gt, scfg, acfg, rng).report;
}

template <class PoseT>
double laplace_l_pred(const PnPSolution<PoseT>& sol) {
  constexpr int rank = PoseT::kTangentDof;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sol.cov);
  const Eigen::VectorXd ev = eig.eigenvalues();  // ascending
  double log_pdet = 0.0;
  for (int i = 0; i < rank; ++i) {
    const double v = ev[ev.size() - 1 - i];
    if (!(v > 0.0)) {
      throw SingularSystem("covariance is not positive on its tangent space");
    }
    log_pdet += std::log(v);
  }
  return -sol.cost + 0.5 * rank * std::log(2.0 * M_PI) + 0.5 * log_pdet;
}

double localization_score(double dist, double a, double b) {
  if (dist <= 0.0) return 1.0;  // -a log 0 -> +inf, clamped
  return std::clamp(-a * std::log(dist) + b, 0.0, 1.0);
}

template <class PoseT>
double mc_localization_score(const SampleBatch<PoseT>& batch,
                             const PnPSolution<PoseT>& sol, double a,
                             double b) {
  const Eigen::VectorXd vbar = normalized_weights(batch.log_v);
  const Eigen::Vector2d ref(sol.pose.t.x(), sol.pose.t.z());
  double score = 0.0;
  for (int j = 0; j < vbar.size(); ++j) {
    const Eigen::Vector2d txz(batch.poses[j].t.x(), batch.poses[j].t.z());
    score += vbar[j] * localization_score((ref - txz).norm(), a, b);
  }
  return score;
}

#define PROPNP_MC_INSTANTIATE(PoseT)                                         \
  template double log_integrand<PoseT>(const PoseT&, const CameraIntrinsics&,\
                                       const CorrespondenceSet&, double);    \
  template void batch_log_integrand<PoseT>(                                  \
      const std::vector<PoseT>&, const CameraIntrinsics&,                    \
      const CorrespondenceSet&, double, Eigen::VectorXd*);                   \
  template void batch_log_integrand_serial<PoseT>(                           \
      const std::vector<PoseT>&, const CameraIntrinsics&,                    \
      const CorrespondenceSet&, double, Eigen::VectorXd*);                   \
  template EnergyGrads energy_with_grads<PoseT>(                             \
      const PoseT&, const CameraIntrinsics&, const CorrespondenceSet&,       \
      const AdaptiveDelta&);                                                 \
  template std::vector<EnergyGrads> batch_energy_grads<PoseT>(               \
      const std::vector<PoseT>&, const CameraIntrinsics&,                    \
      const CorrespondenceSet&, const AdaptiveDelta&);                       \
  template std::vector<EnergyGrads> batch_energy_grads_serial<PoseT>(        \
      const std::vector<PoseT>&, const CameraIntrinsics&,                    \
      const CorrespondenceSet&, const AdaptiveDelta&);                       \
  template SampleBatch<PoseT> amis<PoseT>(                                   \
      const CameraIntrinsics&, const CorrespondenceSet&, const AmisConfig&,  \
      const HuberConfig&, const Proposal<PoseT>&, Rng&);                     \
  template double l_pred<PoseT>(const SampleBatch<PoseT>&);                  \
  template KlLossReport kl_loss_frozen<PoseT>(                               \
      const CameraIntrinsics&, const CorrespondenceSet&, const PoseT&,       \
      const SampleBatch<PoseT>&, const HuberConfig&);                        \
  template double kl_loss_value_frozen<PoseT>(                               \
      const CameraIntrinsics&, const CorrespondenceSet&, const PoseT&,       \
      const SampleBatch<PoseT>&, const HuberConfig&);                        \
  template KlLossResult<PoseT> kl_loss_full<PoseT>(                          \
      const CameraIntrinsics&, const CorrespondenceSet&, const PoseT&,       \
      const SolverConfig&, const AmisConfig&, Rng&);                         \
  template KlLossReport kl_loss<PoseT>(                                      \
      const CameraIntrinsics&, const CorrespondenceSet&, const PoseT&,       \
      const SolverConfig&, const AmisConfig&, Rng&);                         \
  template double laplace_l_pred<PoseT>(const PnPSolution<PoseT>&);          \
  template double mc_localization_score<PoseT>(const SampleBatch<PoseT>&,    \
                                               const PnPSolution<PoseT>&,    \
                                               double, double);

PROPNP_MC_INSTANTIATE(Pose4)
PROPNP_MC_INSTANTIATE(Pose6)
#undef PROPNP_MC_INSTANTIATE

}  // namespace propnp
