#pragma once

#include <vector>

#include "propnp/montecarlo.hpp"
#include "propnp/regloss.hpp"
#include "propnp/synth.hpp"

namespace propnp {

// Free correspondence parameters learned by gradient descent. Realized
// weights are exp(log_scale) * softmax(w_logits) per component, so the
// per-component weight sums equal exp(log_scale) at all times.
struct ToyModel {
  MatX3 x3d_params;
  MatX2 w_logits;
  double log_scale = 0.0;
  bool learn_x2d = false;
  std::vector<MatX2> x2d_params;  // per training scene, when learn_x2d

  MatX2 realized_weights() const;
  // Correspondences for one scene: model geometry/weights, scene (or
  // learned) observations.
  CorrespondenceSet build_corr(const Scene& scene, int scene_index) const;

  static ToyModel random_init(int n_points, Rng& rng, double extent = 0.3);
};

struct TrainConfig {
  double lr = 1e-2;
  int steps = 2000;
  bool use_kl = true;
  bool use_reg = false;
  double grad_clip = 10.0;
  uint64_t seed = 0;
  SolverConfig solver;
  AmisConfig amis;
  RegLossConfig reg;
};

struct TrainStepRecord {
  int step = 0;
  double loss_total = 0.0;
  double loss_kl = 0.0;
  double loss_reg = 0.0;
  double median_angle_err = 0.0;
  double median_pos_err = 0.0;
  double grad_norm = 0.0;
};

struct TrainTrace {
  std::vector<TrainStepRecord> records;
};

// Plain gradient descent with norm clipping on the enabled losses, averaged
// over the scenes. Throws DivergenceDetected when the loss is NaN or stays
// 10x above its initial value for 50 consecutive steps. All scenes must
// share the pose type and the model's point count.
TrainTrace train(const std::vector<Scene>& scenes, ToyModel* model,
                 const TrainConfig& cfg);

struct EvalMetrics {
  double median_pos_err = 0.0;
  double mean_pos_err = 0.0;
  double median_angle_err = 0.0;
  double mean_angle_err = 0.0;
  double mean_l_pred = 0.0;
  double mean_ess = 0.0;
};

// Solves each scene with the model's correspondences (scene observations,
// inference-mode initialization) and aggregates pose errors and sampling
// diagnostics.
EvalMetrics eval_model(const ToyModel& model, const std::vector<Scene>& scenes,
                       const SolverConfig& scfg, const AmisConfig& acfg,
                       uint64_t seed);

double median(std::vector<double> values);

}  // namespace propnp
