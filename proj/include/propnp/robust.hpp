#pragma once

#include "propnp/geometry.hpp"

namespace propnp {

// Per-point cost charged when a pose places the point at non-positive depth.
// Keeps sampled far-off poses at finite, very low likelihood instead of
// erroring out.
inline constexpr double kDepthPenalty = 1e6;

struct HuberConfig {
  double delta_rel = 1.0;   // relative threshold
  double delta_min = 1e-2;  // absolute floor, weighted-pixel units
};

// Huber kernel on a squared residual: rho(s) = s for s <= delta^2,
// delta*(2*sqrt(s) - delta) above.
double huber(double s, double delta);
// d rho / d s.
double huber_deriv(double s, double delta);
// d rho / d delta.
double huber_delta_deriv(double s, double delta);

// Adaptive threshold delta = max(delta_min,
//   delta_rel * |mean(w2d)|_1 / 2 * sample-std of x2d)
// with the 1/(N-1) normalization. Requires N >= 2.
double adaptive_delta(const CorrespondenceSet& corr, const HuberConfig& cfg);

// Same, plus the gradients of delta w.r.t. w2d and x2d (zero when the floor
// is active).
struct AdaptiveDelta {
  double delta = 0.0;
  bool floored = false;
  MatX2 d_w2d;  // N x 2
  MatX2 d_x2d;  // N x 2
};
AdaptiveDelta adaptive_delta_with_grad(const CorrespondenceSet& corr,
                                       const HuberConfig& cfg);

// Triggs rescaling of a residual/Jacobian block so that plain least squares
// on the rescaled system reproduces the robustified problem.
struct Rescaled {
  double rho_prime = 1.0;  // 1 below threshold, delta/|f| above
  Vec2 f;
  Eigen::MatrixXd jac;
};
Rescaled rescale(const Vec2& f, const Eigen::MatrixXd& jac, double delta);

// Robustified energy E(y) = 1/2 sum_i rho(|f_i(y)|^2). Points at
// non-positive depth contribute kDepthPenalty each.
template <class PoseT>
double robust_cost_with_delta(const PoseT& pose, const CameraIntrinsics& cam,
                              const CorrespondenceSet& corr, double delta);

template <class PoseT>
double robust_cost(const PoseT& pose, const CameraIntrinsics& cam,
                   const CorrespondenceSet& corr, const HuberConfig& cfg);

}  // namespace propnp
