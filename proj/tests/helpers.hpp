// Shared scene builders for the Monte Carlo and acceptance suites.
#pragma once

#include "propnp/montecarlo.hpp"
#include "propnp/synth.hpp"

namespace helpers {

// Yaw-oracle scene: translation pinned by three high-weight anchor points
// on the object's rotation axis (axis points are yaw-invariant, so they
// constrain position only), plus low-weight off-axis points that leave a
// moderately wide yaw posterior. Noise keeps the posterior off the
// zero-width degenerate case.
inline propnp::Scene yaw_anchor_scene(uint64_t seed, double w_off = 0.005,
                                      int n_points = 8) {
  using namespace propnp;
  SceneParams params;
  params.pose_type = PoseType::dof4;
  params.n_points = n_points;
  params.noise_sigma = 2.0;
  Scene scene = gen_scene(params, seed);
  Rng rng = Rng::derive(seed, 71);
  // low weights on the off-axis points -> wide yaw posterior
  scene.corr.w2d.setConstant(w_off);
  const Mat3 rot = scene.gt4().rotation();
  const Vec3 t = scene.gt4().t;
  for (int k = 0; k < 3; ++k) {
    const Vec3 axis_pt(0.0, -0.25 + 0.25 * k, 0.0);
    scene.corr.x3d.row(k) = axis_pt.transpose();
    Vec2 obs = project(scene.camera, rot * axis_pt + t);
    obs.x() += 0.1 * rng.normal();
    obs.y() += 0.1 * rng.normal();
    scene.corr.x2d.row(k) = obs.transpose();
    scene.corr.w2d.row(k) << 5.0, 5.0;
  }
  return scene;
}

// 4-fold symmetric, noise-free, exactly equal-mass ambiguity modes.
inline propnp::Scene symmetric_scene(uint64_t seed, int order = 4,
                                     int n_points = 32) {
  using namespace propnp;
  SceneParams params;
  params.pose_type = PoseType::dof4;
  params.symmetry_order = order;
  params.n_points = n_points;
  return gen_scene(params, seed);
}

// Ambiguity scene for the mode-mass checks: tall narrow symmetric object
// (small radial extent keeps the duplicated-orbit energies too small to
// reward depth drift, large vertical extent pins z through the veridical
// base points) at close range. Pair with ambiguity_huber(): the small
// relative threshold puts the duplicated members in the Huber-linear regime,
// whose orbit sums carve four sharp equal wells into the yaw marginal.
inline propnp::Scene ambiguity_scene(uint64_t seed, int order = 4) {
  using namespace propnp;
  SceneParams params;
  params.pose_type = PoseType::dof4;
  params.symmetry_order = order;
  params.n_points = 48;
  params.box_half = 0.5;
  params.box_half_xz = 0.15;
  params.depth_min = 2.5;
  params.depth_max = 3.0;
  return gen_scene(params, seed);
}

inline propnp::HuberConfig ambiguity_huber() {
  propnp::HuberConfig cfg;
  cfg.delta_rel = 0.07;
  return cfg;
}

// Importance-weighted posterior mass in +-half_width windows around each
// symmetry mode.
inline std::vector<double> yaw_window_masses(
    const propnp::SampleBatch<propnp::Pose4>& batch, double theta_gt,
    int order, double half_width) {
  const Eigen::VectorXd vbar = propnp::normalized_weights(batch.log_v);
  std::vector<double> masses(order, 0.0);
  for (int j = 0; j < vbar.size(); ++j) {
    for (int k = 0; k < order; ++k) {
      const double mode = theta_gt + 2.0 * M_PI * k / order;
      if (std::abs(propnp::wrap_angle(batch.poses[j].theta - mode)) <=
          half_width) {
        masses[k] += vbar[j];
      }
    }
  }
  return masses;
}

}  // namespace helpers
