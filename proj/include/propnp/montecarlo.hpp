#pragma once

#include <Eigen/Dense>
#include <vector>

#include "propnp/distributions.hpp"
#include "propnp/geometry.hpp"
#include "propnp/rng.hpp"
#include "propnp/robust.hpp"
#include "propnp/solver.hpp"

namespace propnp {

struct AmisConfig {
  int iterations = 4;        // T
  int samples_per_iter = 128;  // K'
  // When set, only the orientation is sampled; the position is pinned at
  // the proposal location. Makes the 1D grid quadrature an exact oracle for
  // l_pred on yaw-only problems.
  bool yaw_only = false;
};

double logsumexp(const Eigen::VectorXd& v);

// Robustified log-likelihood log p(X|y) = -E(y).
template <class PoseT>
double log_integrand(const PoseT& pose, const CameraIntrinsics& cam,
                     const CorrespondenceSet& corr, double delta);

// Batch evaluation of the log integrand at many poses. The parallel kernel
// writes each result to its own slot, so it is bitwise identical to the
// serial reference for any thread count.
template <class PoseT>
void batch_log_integrand(const std::vector<PoseT>& poses,
                         const CameraIntrinsics& cam,
                         const CorrespondenceSet& corr, double delta,
                         Eigen::VectorXd* out);
template <class PoseT>
void batch_log_integrand_serial(const std::vector<PoseT>& poses,
                                const CameraIntrinsics& cam,
                                const CorrespondenceSet& corr, double delta,
                                Eigen::VectorXd* out);

template <class PoseT>
struct SampleBatch {
  std::vector<PoseT> poses;     // K = T*K' samples
  Eigen::VectorXd log_p;        // log integrand values
  Eigen::VectorXd log_q;        // log mixture-proposal densities
  Eigen::VectorXd log_v;        // log importance weights = log_p - log_q
  std::vector<Proposal<PoseT>> proposals;  // the T proposals used
  std::vector<double> ess_per_iter;
  bool yaw_only = false;
};

// Normalized importance weights exp(log_v) / sum exp(log_v).
Eigen::VectorXd normalized_weights(const Eigen::VectorXd& log_v);
// (sum v)^2 / sum v^2.
double effective_sample_size(const Eigen::VectorXd& log_v);

// Adaptive multiple importance sampling. After each iteration all samples
// are re-weighted against the equal mixture of the proposals so far; the
// next proposal is refit from the weighted samples (kept unchanged when the
// refit degenerates).
template <class PoseT>
SampleBatch<PoseT> amis(const CameraIntrinsics& cam,
                        const CorrespondenceSet& corr, const AmisConfig& cfg,
                        const HuberConfig& huber,
                        const Proposal<PoseT>& init_proposal, Rng& rng);

// log (1/K) sum v_j, computed in the log domain.
template <class PoseT>
double l_pred(const SampleBatch<PoseT>& batch);

// Energy and its gradients w.r.t. every element of the correspondence set,
// including the chain through the adaptive Huber threshold.
struct EnergyGrads {
  double energy = 0.0;
  MatX3 x3d;
  MatX2 x2d;
  MatX2 w2d;
};

template <class PoseT>
EnergyGrads energy_with_grads(const PoseT& pose, const CameraIntrinsics& cam,
                              const CorrespondenceSet& corr,
                              const AdaptiveDelta& delta_info);

template <class PoseT>
std::vector<EnergyGrads> batch_energy_grads(const std::vector<PoseT>& poses,
                                            const CameraIntrinsics& cam,
                                            const CorrespondenceSet& corr,
                                            const AdaptiveDelta& delta_info);
template <class PoseT>
std::vector<EnergyGrads> batch_energy_grads_serial(
    const std::vector<PoseT>& poses, const CameraIntrinsics& cam,
    const CorrespondenceSet& corr, const AdaptiveDelta& delta_info);

struct KlLossReport {
  double l_tgt = 0.0;
  double l_pred = 0.0;
  double total = 0.0;
  MatX3 grad_x3d;
  MatX2 grad_x2d;
  MatX2 grad_w2d;
};

// Loss and gradients for a frozen sample batch: poses and proposal mixture
// densities are constants, the integrand is re-evaluated at the given
// correspondences. Gradients are grad E(y_gt) - sum_j vbar_j grad E(y_j).
template <class PoseT>
KlLossReport kl_loss_frozen(const CameraIntrinsics& cam,
                            const CorrespondenceSet& corr, const PoseT& y_gt,
                            const SampleBatch<PoseT>& batch,
                            const HuberConfig& huber);

// Loss value only (finite-difference probes).
template <class PoseT>
double kl_loss_value_frozen(const CameraIntrinsics& cam,
                            const CorrespondenceSet& corr, const PoseT& y_gt,
                            const SampleBatch<PoseT>& batch,
                            const HuberConfig& huber);

template <class PoseT>
struct KlLossResult {
  KlLossReport report;
  PnPSolution<PoseT> solution;
  SampleBatch<PoseT> batch;
};

// Full pipeline: init_with_gt -> solve -> proposal_init -> amis -> loss.
template <class PoseT>
KlLossResult<PoseT> kl_loss_full(const CameraIntrinsics& cam,
                                 const CorrespondenceSet& corr,
                                 const PoseT& y_gt, const SolverConfig& scfg,
                                 const AmisConfig& acfg, Rng& rng);

template <class PoseT>
KlLossReport kl_loss(const CameraIntrinsics& cam,
                     const CorrespondenceSet& corr, const PoseT& y_gt,
                     const SolverConfig& scfg, const AmisConfig& acfg,
                     Rng& rng);

// Gaussian-integral approximation of the log normalizer at the solution:
// -E(y*) + (d/2) log 2pi + 1/2 log pdet(Sigma), with the pseudo-determinant
// over the tangent space (rank 6 for Pose6).
template <class PoseT>
double laplace_l_pred(const PnPSolution<PoseT>& sol);

// Importance-weighted localization score over the ground-plane (XZ)
// distance: Score(d) = clamp(-a log d + b, 0, 1).
double localization_score(double dist, double a, double b);

template <class PoseT>
double mc_localization_score(const SampleBatch<PoseT>& batch,
                             const PnPSolution<PoseT>& sol, double a = 0.5,
                             double b = 1.0);

}  // namespace propnp
