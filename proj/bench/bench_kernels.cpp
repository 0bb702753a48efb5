// Compares the OpenMP batch kernels against their serial references and
// reports timings for the end-to-end stages. The parallel kernels write to
// per-item slots, so results must also be bitwise identical.
#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "propnp/montecarlo.hpp"
#include "propnp/solver.hpp"
#include "propnp/synth.hpp"

using namespace propnp;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <class Fn>
double time_best_of(int reps, const Fn& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_seconds();
    fn();
    best = std::min(best, now_seconds() - t0);
  }
  return best;
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("openmp: %d threads\n", omp_get_max_threads());
#else
  std::printf("openmp: disabled\n");
#endif

  SceneParams params;
  params.pose_type = PoseType::dof6;
  params.n_points = 64;
  params.noise_sigma = 1.0;
  const Scene scene = gen_scene(params, 7);
  HuberConfig huber;
  const AdaptiveDelta dinfo = adaptive_delta_with_grad(scene.corr, huber);

  // pose batch around the ground truth
  const int batch_size = 4096;
  Rng rng(7);
  std::vector<Pose6> poses;
  poses.reserve(batch_size);
  for (int k = 0; k < batch_size; ++k) {
    Eigen::Matrix<double, 7, 1> d;
    for (int j = 0; j < 7; ++j) d[j] = rng.uniform(-0.2, 0.2);
    poses.push_back(apply_increment(scene.gt6(), d));
  }

  Eigen::VectorXd serial_out, parallel_out;
  const double t_serial = time_best_of(5, [&] {
    batch_log_integrand_serial(poses, scene.camera, scene.corr, dinfo.delta,
                               &serial_out);
  });
  const double t_parallel = time_best_of(5, [&] {
    batch_log_integrand(poses, scene.camera, scene.corr, dinfo.delta,
                        &parallel_out);
  });
  const bool integrand_match =
      (serial_out - parallel_out).cwiseAbs().maxCoeff() == 0.0;
  std::printf(
      "batch_log_integrand   %5d poses x %2d pts  serial %8.3f ms  "
      "parallel %8.3f ms  speedup %4.2fx  bitwise %s\n",
      batch_size, scene.corr.size(), 1e3 * t_serial, 1e3 * t_parallel,
      t_serial / t_parallel, integrand_match ? "equal" : "DIFFER");

  const double tg_serial = time_best_of(3, [&] {
    batch_energy_grads_serial(poses, scene.camera, scene.corr, dinfo);
  });
  const double tg_parallel = time_best_of(3, [&] {
    batch_energy_grads(poses, scene.camera, scene.corr, dinfo);
  });
  const auto gs =
      batch_energy_grads_serial(poses, scene.camera, scene.corr, dinfo);
  const auto gp = batch_energy_grads(poses, scene.camera, scene.corr, dinfo);
  double grad_diff = 0.0;
  for (size_t j = 0; j < gs.size(); ++j) {
    grad_diff = std::max(grad_diff,
                         (gs[j].x3d - gp[j].x3d).cwiseAbs().maxCoeff());
  }
  std::printf(
      "batch_energy_grads    %5d poses x %2d pts  serial %8.3f ms  "
      "parallel %8.3f ms  speedup %4.2fx  bitwise %s\n",
      batch_size, scene.corr.size(), 1e3 * tg_serial, 1e3 * tg_parallel,
      tg_serial / tg_parallel, grad_diff == 0.0 ? "equal" : "DIFFER");

  // end-to-end stages (hypothesis search runs its refinement loop in
  // parallel internally)
  SolverConfig scfg;
  const double t_solve = time_best_of(3, [&] {
    Rng r(3);
    solve<Pose6>(scene.camera, scene.corr, scfg, std::nullopt, r);
  });
  std::printf("solve (M=%d hypotheses)                serial+omp %8.3f ms\n",
              scfg.n_hypotheses, 1e3 * t_solve);

  AmisConfig acfg;
  acfg.iterations = 4;
  acfg.samples_per_iter = 128;
  const double t_amis = time_best_of(3, [&] {
    Rng r(4);
    auto sol = solve<Pose6>(scene.camera, scene.corr, scfg, std::nullopt, r);
    amis(scene.camera, scene.corr, acfg, scfg.huber, proposal_init(sol), r);
  });
  std::printf("solve + amis (T=%d, K'=%d)            serial+omp %8.3f ms\n",
              acfg.iterations, acfg.samples_per_iter, 1e3 * t_amis);

  return integrand_match && grad_diff == 0.0 ? 0 : 1;
}
