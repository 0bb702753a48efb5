#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "propnp/geometry.hpp"
#include "propnp/rng.hpp"
#include "propnp/robust.hpp"

namespace propnp {

struct SolverConfig {
  int max_iter = 10;             // full-set step attempts
  double eps = 1e-5;             // damping floor / GN regularizer
  double lm_lambda_init = 1e-2;  // initial 1/trust-radius
  double lambda_up = 2.0;        // multiply on rejected step
  double lambda_down = 3.0;      // divide on accepted step
  int n_hypotheses = 64;         // M random-sampling hypotheses
  int subset_size = 0;           // n; 0 picks 6 (Pose6) / 4 (Pose4)
  int subset_iters = 3;          // LM attempts per hypothesis subset
  double cost_tol = 1e-12;
  double step_tol = 1e-8;
  bool fast_gn = false;          // plain Gauss-Newton iterations
  double z_min = kDefaultZMin;
  HuberConfig huber;
};

template <class PoseT>
struct PnPSolution {
  PoseT pose;
  Eigen::MatrixXd cov;  // kDof x kDof tangent-space covariance
  double cost = 0.0;
  double log_likelihood = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Raw per-point residuals/Jacobians of the weighted reprojection error at a
// pose, with the Huber rescaling factors. Points at non-positive depth are
// flagged invalid and contribute the depth penalty to the cost.
template <class PoseT>
struct SystemBlocks {
  static constexpr int kD = PoseT::kDof;
  std::vector<Eigen::Matrix<double, 2, kD>,
              Eigen::aligned_allocator<Eigen::Matrix<double, 2, kD>>>
      jac;
  std::vector<Vec2, Eigen::aligned_allocator<Vec2>> f;
  std::vector<double> rho_prime;
  std::vector<char> valid;
  double delta = 0.0;
  double cost = 0.0;
  int n_valid = 0;
};

template <class PoseT>
SystemBlocks<PoseT> evaluate_system(const PoseT& pose,
                                    const CameraIntrinsics& cam,
                                    const CorrespondenceSet& corr,
                                    double delta,
                                    double z_min = kDefaultZMin);

// Basis of the tangent parameter space: identity for Pose4, [I3 (+) T] for
// Pose6 with T spanning the quaternion tangent at q. Steps and covariances
// are computed in this basis, which removes the quaternion gauge direction.
template <class PoseT>
Eigen::Matrix<double, PoseT::kDof, PoseT::kTangentDof> step_basis(
    const PoseT& pose);

enum class DampingScale { jtj_diag, identity };

// Solves the damped normal equations in the tangent basis and embeds the
// step back into parameter space. Throws SingularSystem when the damped
// matrix has condition estimate > 1e12.
template <class PoseT>
Eigen::Matrix<double, PoseT::kDof, 1> damped_step(
    const SystemBlocks<PoseT>& sys, const PoseT& pose, double lambda,
    DampingScale scale, double eps_floor,
    double* predicted_reduction = nullptr);

template <class PoseT>
struct LmStep {
  Eigen::Matrix<double, PoseT::kDof, 1> delta_y;
  double predicted_reduction = 0.0;
};

// Robustified LM step: -(Jt J + lambda D^2)^-1 Jt F with D^2 the diagonal
// of the rescaled normal matrix (floored at cfg.eps).
template <class PoseT>
LmStep<PoseT> lm_step(const PoseT& pose, const CameraIntrinsics& cam,
                      const CorrespondenceSet& corr, const SolverConfig& cfg,
                      double lambda);

// Gauss-Newton step: -(Jt J + eps I)^-1 Jt F.
template <class PoseT>
Eigen::Matrix<double, PoseT::kDof, 1> gn_step(const PoseT& pose,
                                              const CameraIntrinsics& cam,
                                              const CorrespondenceSet& corr,
                                              const SolverConfig& cfg);

// Tangent-space covariance (Jt J + eps I)^-1 at the given pose, embedded as
// a kDof x kDof matrix (rank kTangentDof for Pose6).
template <class PoseT>
Eigen::MatrixXd covariance(const PoseT& pose, const CameraIntrinsics& cam,
                           const CorrespondenceSet& corr,
                           const SolverConfig& cfg);

// n indices drawn without replacement, probability proportional to weight.
std::vector<int> sample_weighted_subset(const Eigen::VectorXd& weights, int n,
                                        Rng& rng);

// Weighted multinomial hypothesis search: M subsets of size n drawn without
// replacement with p(i) ~ |w2d_i|_1, each refined by a few LM iterations
// from a canonical start, best full-set log-likelihood wins (lowest index
// on ties). Optionally returns all refined hypotheses.
template <class PoseT>
PoseT init_hypotheses(const CameraIntrinsics& cam,
                      const CorrespondenceSet& corr, const SolverConfig& cfg,
                      Rng& rng, std::vector<PoseT>* all_hypotheses = nullptr);

// Training-mode initialization: the better of {sampled hypothesis, y_gt} by
// full-set log-likelihood; ties keep the hypothesis.
template <class PoseT>
PoseT init_with_gt(const CameraIntrinsics& cam, const CorrespondenceSet& corr,
                   const SolverConfig& cfg, Rng& rng, const PoseT& y_gt);

struct SolveTrace {
  std::vector<double> accepted_costs;
};

template <class PoseT>
PnPSolution<PoseT> solve(const CameraIntrinsics& cam,
                         const CorrespondenceSet& corr,
                         const SolverConfig& cfg,
                         const std::optional<PoseT>& init, Rng& rng,
                         SolveTrace* trace = nullptr);

// Minimum correspondence count for a parameterization.
template <class PoseT>
constexpr int min_points() {
  return PoseT::kDof == 4 ? 2 : 4;
}

}  // namespace propnp
