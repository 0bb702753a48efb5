#pragma once

#include "propnp/geometry.hpp"
#include "propnp/robust.hpp"

namespace propnp {

struct RegLossConfig {
  double beta = 0.1;          // smooth-L1 threshold, meters
  double w_pos = 1.0;
  double w_orient = 1.0;
  double ema_momentum = 0.1;
  double epsilon = 1e-5;      // GN regularizer inside the differentiated step
};

// Smooth L1: d^2/(2 beta) below beta, d - beta/2 above (C1 at beta).
double smooth_l1(double d, double beta);
double smooth_l1_deriv(double d, double beta);

struct RegLossResult {
  double loss = 0.0;
  double pos_term = 0.0;
  double orient_term = 0.0;
  MatX3 grad_x3d;
  MatX2 grad_x2d;
  MatX2 grad_w2d;
};

// Pose-metric loss on y_star plus one Gauss-Newton increment, with gradients
// w.r.t. the correspondence set flowing only through that increment
// (y_star itself is a constant). The increment solves
// (Jt J + eps I) dy = -Jt F on the rescaled system at y_star.
template <class PoseT>
RegLossResult reg_loss(const CameraIntrinsics& cam,
                       const CorrespondenceSet& corr, const PoseT& y_star,
                       const PoseT& y_gt, const RegLossConfig& cfg,
                       const HuberConfig& huber);

struct DynamicWeightState {
  double ema = 0.0;
  long steps = 0;
};

// EMA of |sum_i w2d_i|_1; returns the reciprocal as the KL loss weight.
double dynamic_kl_weight(DynamicWeightState& state,
                         const CorrespondenceSet& corr, double momentum);

}  // namespace propnp
