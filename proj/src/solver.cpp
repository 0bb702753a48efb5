#include "propnp/solver.hpp"

#include <algorithm>
#include <cmath>

namespace propnp {

namespace {

constexpr double kCondLimit = 1e12;

// Subset start pose: random orientation with a projective depth guess
// (ratio of 3D to 2D spread around the centroids), translation placing the
// object centroid on the observed 2D centroid's ray. Random orientations
// spread the M hypotheses over the rotation space, which a fixed canonical
// start cannot do.
template <class PoseT>
PoseT subset_start(const CameraIntrinsics& cam, const CorrespondenceSet& sub,
                   Rng& rng) {
  const Eigen::RowVector3d c3 = sub.x3d.colwise().mean();
  const Eigen::RowVector2d c2 = sub.x2d.colwise().mean();
  const double spread3 =
      std::sqrt((sub.x3d.rowwise() - c3).rowwise().squaredNorm().mean());
  const double spread2 =
      std::sqrt((sub.x2d.rowwise() - c2).rowwise().squaredNorm().mean());
  const double f = 0.5 * (cam.fx + cam.fy);
  double z = 2.0;
  if (spread2 > 1e-9 && spread3 > 1e-9) {
    z = std::clamp(f * spread3 / spread2, 0.2, 100.0);
  }
  const Vec3 t(z * (c2.x() - cam.cx) / cam.fx, z * (c2.y() - cam.cy) / cam.fy,
               z);
  if constexpr (PoseT::kDof == 4) {
    return Pose4::make(t, rng.uniform(-M_PI, M_PI));
  } else {
    const Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return Pose6::make(t, q);
  }
}

}  // namespace

std::vector<int> sample_weighted_subset(const Eigen::VectorXd& weights, int n,
                                        Rng& rng) {
  Eigen::VectorXd w = weights;
  std::vector<int> picked;
  picked.reserve(n);
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform() * w.sum();
    int idx = -1;
    double acc = 0.0;
    for (int i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      acc += w[i];
      idx = i;
      if (u < acc) break;  // falls through to the last positive entry
    }
    picked.push_back(idx);
    w[idx] = 0.0;
  }
  return picked;
}

namespace {

CorrespondenceSet gather_rows(const CorrespondenceSet& corr,
                              const std::vector<int>& idx) {
  CorrespondenceSet sub;
  const int n = static_cast<int>(idx.size());
  sub.x3d.resize(n, 3);
  sub.x2d.resize(n, 2);
  sub.w2d.resize(n, 2);
  for (int k = 0; k < n; ++k) {
    sub.x3d.row(k) = corr.x3d.row(idx[k]);
    sub.x2d.row(k) = corr.x2d.row(idx[k]);
    sub.w2d.row(k) = corr.w2d.row(idx[k]);
  }
  return sub;
}

// A few damped iterations on a (sub)problem with a fixed Huber threshold.
template <class PoseT>
PoseT refine(PoseT pose, const CameraIntrinsics& cam,
             const CorrespondenceSet& corr, const SolverConfig& cfg,
             double delta, int attempts) {
  double lambda = cfg.lm_lambda_init;
  double cost = robust_cost_with_delta(pose, cam, corr, delta);
  for (int it = 0; it < attempts; ++it) {
    auto sys = evaluate_system(pose, cam, corr, delta, cfg.z_min);
    if (sys.n_valid == 0) break;
    Eigen::Matrix<double, PoseT::kDof, 1> step;
    try {
      step = damped_step(sys, pose, lambda, DampingScale::jtj_diag, cfg.eps);
    } catch (const SingularSystem&) {
      break;
    }
    PoseT cand = apply_increment(pose, step);
    double cand_cost = robust_cost_with_delta(cand, cam, corr, delta);
    if (cand_cost < cost) {
      pose = cand;
      cost = cand_cost;
      lambda = std::max(lambda / cfg.lambda_down, 1e-12);
    } else {
      lambda *= cfg.lambda_up;
    }
  }
  return pose;
}

}  // namespace

template <class PoseT>
SystemBlocks<PoseT> evaluate_system(const PoseT& pose,
                                    const CameraIntrinsics& cam,
                                    const CorrespondenceSet& corr,
                                    double delta, double z_min) {
  const int n = corr.size();
  SystemBlocks<PoseT> sys;
  sys.delta = delta;
  sys.jac.resize(n);
  sys.f.resize(n);
  sys.rho_prime.assign(n, 1.0);
  sys.valid.assign(n, 0);
  const Mat3 rot = pose.rotation();
  for (int i = 0; i < n; ++i) {
    const Vec3 p = rot * corr.x3d.row(i).transpose() + pose.t;
    if (!(p.z() > z_min)) {
      sys.cost += kDepthPenalty;
      sys.jac[i].setZero();
      sys.f[i].setZero();
      continue;
    }
    sys.valid[i] = 1;
    ++sys.n_valid;
    const auto res = residual(pose, cam, corr, i, z_min);
    sys.f[i] = res.f;
    sys.jac[i] = pose_jacobian(pose, cam, corr, i, z_min);
    const double s = res.f.squaredNorm();
    sys.rho_prime[i] = huber_deriv(s, delta);
    sys.cost += 0.5 * huber(s, delta);
  }
  return sys;
}

template <>
Eigen::Matrix<double, 4, 4> step_basis<Pose4>(const Pose4&) {
  return Eigen::Matrix<double, 4, 4>::Identity();
}

template <>
Eigen::Matrix<double, 7, 6> step_basis<Pose6>(const Pose6& pose) {
  Eigen::Matrix<double, 7, 6> b = Eigen::Matrix<double, 7, 6>::Zero();
  b.block<3, 3>(0, 0).setIdentity();
  b.block<4, 3>(3, 3) = quat_tangent_basis(pose.q);
  return b;
}

template <class PoseT>
Eigen::Matrix<double, PoseT::kDof, 1> damped_step(
    const SystemBlocks<PoseT>& sys, const PoseT& pose, double lambda,
    DampingScale scale, double eps_floor, double* predicted_reduction) {
  constexpr int kD = PoseT::kDof;
  constexpr int kR = PoseT::kTangentDof;
  using MatD = Eigen::Matrix<double, kD, kD>;
  using VecD = Eigen::Matrix<double, kD, 1>;

  MatD jtj = MatD::Zero();
  VecD jtf = VecD::Zero();
  const int n = static_cast<int>(sys.f.size());
  for (int i = 0; i < n; ++i) {
    if (!sys.valid[i]) continue;
    // rescaled blocks: sqrt(rho') f, sqrt(rho') J
    jtj.noalias() += sys.rho_prime[i] * sys.jac[i].transpose() * sys.jac[i];
    jtf.noalias() += sys.rho_prime[i] * sys.jac[i].transpose() * sys.f[i];
  }

  const auto basis = step_basis(pose);
  Eigen::Matrix<double, kR, kR> a = basis.transpose() * jtj * basis;
  Eigen::Matrix<double, kR, 1> g = basis.transpose() * jtf;

  Eigen::Matrix<double, kR, kR> m = a;
  if (scale == DampingScale::jtj_diag) {
    for (int k = 0; k < kR; ++k) {
      m(k, k) += lambda * std::max(a(k, k), eps_floor);
    }
  } else {
    m.diagonal().array() += lambda;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, kR, kR>> eig(m);
  const auto& ev = eig.eigenvalues();
  const double emax = ev.maxCoeff();
  const double emin = ev.minCoeff();
  if (!(emin > 0.0) || emax / emin > kCondLimit) {
    throw SingularSystem("damped normal equations are numerically singular");
  }
  Eigen::Matrix<double, kR, 1> step_r =
      -(eig.eigenvectors() *
        (eig.eigenvectors().transpose() * g).cwiseQuotient(ev));
  if (predicted_reduction != nullptr) {
    *predicted_reduction =
        -(g.dot(step_r) + 0.5 * step_r.dot(a * step_r));
  }
  return basis * step_r;
}

template <class PoseT>
LmStep<PoseT> lm_step(const PoseT& pose, const CameraIntrinsics& cam,
                      const CorrespondenceSet& corr, const SolverConfig& cfg,
                      double lambda) {
  auto sys = evaluate_system(pose, cam, corr,
                             adaptive_delta(corr, cfg.huber), cfg.z_min);
  LmStep<PoseT> out;
  out.delta_y = damped_step(sys, pose, lambda, DampingScale::jtj_diag,
                            cfg.eps, &out.predicted_reduction);
  return out;
}

template <class PoseT>
Eigen::Matrix<double, PoseT::kDof, 1> gn_step(const PoseT& pose,
                                              const CameraIntrinsics& cam,
                                              const CorrespondenceSet& corr,
                                              const SolverConfig& cfg) {
  auto sys = evaluate_system(pose, cam, corr,
                             adaptive_delta(corr, cfg.huber), cfg.z_min);
  return damped_step(sys, pose, cfg.eps, DampingScale::identity, cfg.eps);
}

template <class PoseT>
Eigen::MatrixXd covariance(const PoseT& pose, const CameraIntrinsics& cam,
                           const CorrespondenceSet& corr,
                           const SolverConfig& cfg) {
  constexpr int kR = PoseT::kTangentDof;
  auto sys = evaluate_system(pose, cam, corr,
                             adaptive_delta(corr, cfg.huber), cfg.z_min);
  Eigen::MatrixXd jtj = Eigen::MatrixXd::Zero(PoseT::kDof, PoseT::kDof);
  for (int i = 0; i < corr.size(); ++i) {
    if (!sys.valid[i]) continue;
    jtj.noalias() += sys.rho_prime[i] * sys.jac[i].transpose() * sys.jac[i];
  }
  const auto basis = step_basis(pose);
  Eigen::Matrix<double, kR, kR> a =
      basis.transpose() * jtj * basis +
      cfg.eps * Eigen::Matrix<double, kR, kR>::Identity();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, kR, kR>> eig(a);
  if (!(eig.eigenvalues().minCoeff() > 0.0) ||
      eig.eigenvalues().maxCoeff() / eig.eigenvalues().minCoeff() >
          kCondLimit) {
    throw SingularSystem("information matrix is numerically singular");
  }
  Eigen::Matrix<double, kR, kR> cov_r =
      eig.eigenvectors() *
      eig.eigenvalues().cwiseInverse().asDiagonal() *
      eig.eigenvectors().transpose();
  Eigen::MatrixXd cov = basis * cov_r * basis.transpose();
  return 0.5 * (cov + cov.transpose());
}

template <class PoseT>
PoseT init_hypotheses(const CameraIntrinsics& cam,
                      const CorrespondenceSet& corr, const SolverConfig& cfg,
                      Rng& rng, std::vector<PoseT>* all_hypotheses) {
  const int n_points = corr.size();
  int n = cfg.subset_size > 0 ? cfg.subset_size : (PoseT::kDof == 4 ? 4 : 6);
  n = std::min(n, n_points - 1);
  if (n < 3 || n_points <= n) {
    throw InvalidProblem("hypothesis subsets need 3 <= n < N");
  }
  Eigen::VectorXd pmf = corr.w2d.rowwise().lpNorm<1>();
  const double delta = adaptive_delta(corr, cfg.huber);

  // Subsets and start poses are drawn serially so the rng stream is
  // thread-independent; the refinement below runs in parallel into
  // per-hypothesis slots.
  std::vector<CorrespondenceSet> subs(cfg.n_hypotheses);
  std::vector<PoseT> starts(cfg.n_hypotheses);
  for (int m = 0; m < cfg.n_hypotheses; ++m) {
    subs[m] = gather_rows(corr, sample_weighted_subset(pmf, n, rng));
    starts[m] = subset_start<PoseT>(cam, subs[m], rng);
  }

  std::vector<PoseT> hyp(cfg.n_hypotheses);
  std::vector<double> cost(cfg.n_hypotheses, 0.0);
  std::vector<char> ok(cfg.n_hypotheses, 0);
  std::vector<std::exception_ptr> errors(cfg.n_hypotheses);
#pragma omp parallel for schedule(static)
  for (int m = 0; m < cfg.n_hypotheses; ++m) {
    try {
      PoseT pose =
          refine(starts[m], cam, subs[m], cfg, delta, cfg.subset_iters);
      hyp[m] = pose;
      auto sys = evaluate_system(pose, cam, corr, delta, cfg.z_min);
      cost[m] = sys.cost;
      ok[m] = sys.n_valid > 0;
    } catch (...) {
      errors[m] = std::current_exception();
    }
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  if (all_hypotheses != nullptr) *all_hypotheses = hyp;

  int best = -1;
  for (int m = 0; m < cfg.n_hypotheses; ++m) {
    if (!ok[m]) continue;
    if (best < 0 || cost[m] < cost[best]) best = m;
  }
  if (best < 0) {
    throw NoValidHypothesis("all pose hypotheses failed depth checks");
  }
  return hyp[best];
}

template <class PoseT>
PoseT init_with_gt(const CameraIntrinsics& cam, const CorrespondenceSet& corr,
                   const SolverConfig& cfg, Rng& rng, const PoseT& y_gt) {
  PoseT hyp = init_hypotheses<PoseT>(cam, corr, cfg, rng);
  const double delta = adaptive_delta(corr, cfg.huber);
  const double ll_hyp = -robust_cost_with_delta(hyp, cam, corr, delta);
  const double ll_gt = -robust_cost_with_delta(y_gt, cam, corr, delta);
  return ll_hyp >= ll_gt ? hyp : y_gt;
}

template <class PoseT>
PnPSolution<PoseT> solve(const CameraIntrinsics& cam,
                         const CorrespondenceSet& corr,
                         const SolverConfig& cfg,
                         const std::optional<PoseT>& init, Rng& rng,
                         SolveTrace* trace) {
  corr.validate(min_points<PoseT>());
  const double delta = adaptive_delta(corr, cfg.huber);

  PoseT pose = init ? *init : init_hypotheses<PoseT>(cam, corr, cfg, rng);
  double cost = robust_cost_with_delta(pose, cam, corr, delta);
  if (trace != nullptr) trace->accepted_costs.push_back(cost);

  double lambda = cfg.lm_lambda_init;
  int iterations = 0;
  for (; iterations < cfg.max_iter; ++iterations) {
    auto sys = evaluate_system(pose, cam, corr, delta, cfg.z_min);
    if (sys.n_valid == 0) break;
    Eigen::Matrix<double, PoseT::kDof, 1> step;
    try {
      step = cfg.fast_gn
                 ? damped_step(sys, pose, cfg.eps, DampingScale::identity,
                               cfg.eps)
                 : damped_step(sys, pose, lambda, DampingScale::jtj_diag,
                               cfg.eps);
    } catch (const SingularSystem&) {
      if (iterations == 0) throw;  // degenerate problem, not mid-run noise
      break;
    }
    PoseT cand = apply_increment(pose, step);
    const double cand_cost = robust_cost_with_delta(cand, cam, corr, delta);
    if (cand_cost < cost) {
      const double reduction = cost - cand_cost;
      pose = cand;
      cost = cand_cost;
      if (trace != nullptr) trace->accepted_costs.push_back(cost);
      lambda = std::max(lambda / cfg.lambda_down, 1e-12);
      if (reduction < cfg.cost_tol || step.norm() < cfg.step_tol) {
        ++iterations;
        break;
      }
    } else {
      if (cfg.fast_gn) break;  // GN has no damping schedule to fall back on
      lambda *= cfg.lambda_up;
    }
  }

  PnPSolution<PoseT> sol;
  sol.pose = pose;
  sol.cost = cost;
  sol.log_likelihood = -cost;
  sol.iterations = iterations;
  try {
    sol.converged = gn_step(pose, cam, corr, cfg).norm() < cfg.step_tol;
  } catch (const SingularSystem&) {
    sol.converged = false;
  }
  sol.cov = covariance(pose, cam, corr, cfg);
  return sol;
}

#define PROPNP_INSTANTIATE(PoseT)                                             \
  template SystemBlocks<PoseT> evaluate_system<PoseT>(                        \
      const PoseT&, const CameraIntrinsics&, const CorrespondenceSet&,        \
      double, double);                                                        \
  template Eigen::Matrix<double, PoseT::kDof, 1> damped_step<PoseT>(          \
      const SystemBlocks<PoseT>&, const PoseT&, double, DampingScale,        \
      double, double*);                                                       \
  template LmStep<PoseT> lm_step<PoseT>(const PoseT&, const CameraIntrinsics&,\
                                        const CorrespondenceSet&,             \
                                        const SolverConfig&, double);         \
  template Eigen::Matrix<double, PoseT::kDof, 1> gn_step<PoseT>(              \
      const PoseT&, const CameraIntrinsics&, const CorrespondenceSet&,        \
      const SolverConfig&);                                                   \
  template Eigen::MatrixXd covariance<PoseT>(                                 \
      const PoseT&, const CameraIntrinsics&, const CorrespondenceSet&,        \
      const SolverConfig&);                                                   \
  template PoseT init_hypotheses<PoseT>(                                      \
      const CameraIntrinsics&, const CorrespondenceSet&, const SolverConfig&, \
      Rng&, std::vector<PoseT>*);                                             \
  template PoseT init_with_gt<PoseT>(const CameraIntrinsics&,                 \
                                     const CorrespondenceSet&,                \
                                     const SolverConfig&, Rng&, const PoseT&);\
  template PnPSolution<PoseT> solve<PoseT>(                                   \
      const CameraIntrinsics&, const CorrespondenceSet&, const SolverConfig&, \
      const std::optional<PoseT>&, Rng&, SolveTrace*);

PROPNP_INSTANTIATE(Pose4)
PROPNP_INSTANTIATE(Pose6)
#undef PROPNP_INSTANTIATE

}  // namespace propnp
