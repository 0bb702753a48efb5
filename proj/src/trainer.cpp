#include "propnp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace propnp {

namespace {

// Column-wise softmax over points.
MatX2 softmax_cols(const MatX2& logits) {
  MatX2 out(logits.rows(), 2);
  for (int c = 0; c < 2; ++c) {
    const double m = logits.col(c).maxCoeff();
    Eigen::VectorXd e = (logits.col(c).array() - m).exp();
    out.col(c) = e / e.sum();
  }
  return out;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct SceneLoss {
  double kl_total = 0.0;
  double reg = 0.0;
  MatX3 g_x3d;
  MatX2 g_x2d;
  MatX2 g_w2d;
  PoseDistance err;
};

template <class PoseT>
SceneLoss scene_loss(const Scene& scene, const CorrespondenceSet& corr,
                     const PoseT& y_gt, const TrainConfig& cfg,
                     double kl_weight, Rng rng) {
  SceneLoss out;
  const int n = corr.size();
  out.g_x3d = MatX3::Zero(n, 3);
  out.g_x2d = MatX2::Zero(n, 2);
  out.g_w2d = MatX2::Zero(n, 2);

  PnPSolution<PoseT> sol;
  if (cfg.use_kl) {
    auto res = kl_loss_full(scene.camera, corr, y_gt, cfg.solver, cfg.amis,
                            rng);
    sol = res.solution;
    out.kl_total = kl_weight * res.report.total;
    out.g_x3d += kl_weight * res.report.grad_x3d;
    out.g_x2d += kl_weight * res.report.grad_x2d;
    out.g_w2d += kl_weight * res.report.grad_w2d;
  } else {
    sol = solve<PoseT>(scene.camera, corr, cfg.solver, std::nullopt, rng);
  }
  if (cfg.use_reg) {
    auto reg = reg_loss(scene.camera, corr, sol.pose, y_gt, cfg.reg,
                        cfg.solver.huber);
    out.reg = reg.loss;
    out.g_x3d += reg.grad_x3d;
    out.g_x2d += reg.grad_x2d;
    out.g_w2d += reg.grad_w2d;
  }
  out.err = geodesic_distance(sol.pose, y_gt);
  return out;
}

SceneLoss scene_loss_dispatch(const Scene& scene,
                              const CorrespondenceSet& corr,
                              const TrainConfig& cfg, double kl_weight,
                              Rng rng) {
  if (scene.pose_type == PoseType::dof4) {
    return scene_loss(scene, corr, scene.gt4(), cfg, kl_weight, rng);
  }
  return scene_loss(scene, corr, scene.gt6(), cfg, kl_weight, rng);
}

}  // namespace

double median(std::vector<double> values) { return median_of(std::move(values)); }

MatX2 ToyModel::realized_weights() const {
  return std::exp(log_scale) * softmax_cols(w_logits);
}

CorrespondenceSet ToyModel::build_corr(const Scene& scene,
                                       int scene_index) const {
  CorrespondenceSet corr;
  corr.x3d = x3d_params;
  corr.x2d = (learn_x2d && scene_index >= 0 &&
              scene_index < static_cast<int>(x2d_params.size()))
                 ? x2d_params[scene_index]
                 : scene.corr.x2d;
  corr.w2d = realized_weights();
  return corr;
}

ToyModel ToyModel::random_init(int n_points, Rng& rng, double extent) {
  ToyModel m;
  m.x3d_params.resize(n_points, 3);
  for (int i = 0; i < n_points; ++i) {
    for (int c = 0; c < 3; ++c) {
      m.x3d_params(i, c) = rng.uniform(-extent, extent);
    }
  }
  m.w_logits = MatX2::Zero(n_points, 2);
  // per-point weights start near 1
  m.log_scale = std::log(static_cast<double>(n_points));
  return m;
}

TrainTrace train(const std::vector<Scene>& scenes, ToyModel* model,
                 const TrainConfig& cfg) {
  if (scenes.empty()) throw InvalidProblem("train needs at least one scene");
  if (!cfg.use_kl && !cfg.use_reg) {
    throw InvalidProblem("at least one loss must be enabled");
  }
  const int n_scenes = static_cast<int>(scenes.size());
  const int n_points = static_cast<int>(model->x3d_params.rows());
  for (const Scene& s : scenes) {
    if (s.corr.size() != n_points) {
      throw InvalidProblem("scene point count does not match the model");
    }
    if (s.pose_type != scenes.front().pose_type) {
      throw InvalidProblem("scenes must share one pose type");
    }
  }
  if (model->learn_x2d && model->x2d_params.empty()) {
    model->x2d_params.reserve(n_scenes);
    for (const Scene& s : scenes) model->x2d_params.push_back(s.corr.x2d);
  }

  TrainTrace trace;
  trace.records.reserve(cfg.steps);
  DynamicWeightState dyn_state;
  double initial_loss = 0.0;
  int bad_streak = 0;

  for (int step = 0; step < cfg.steps; ++step) {
    const MatX2 weights = model->realized_weights();
    double kl_weight = 1.0;
    if (cfg.use_kl) {
      CorrespondenceSet probe = model->build_corr(scenes[0], 0);
      kl_weight = dynamic_kl_weight(dyn_state, probe, cfg.reg.ema_momentum);
    }

    std::vector<SceneLoss> losses(n_scenes);
    std::vector<std::exception_ptr> errors(n_scenes);
#pragma omp parallel for schedule(static)
    for (int v = 0; v < n_scenes; ++v) {
      try {
        const CorrespondenceSet corr = model->build_corr(scenes[v], v);
        losses[v] = scene_loss_dispatch(
            scenes[v], corr, cfg, kl_weight,
            Rng::derive(cfg.seed,
                        static_cast<uint64_t>(step) * n_scenes + v + 17));
      } catch (...) {
        errors[v] = std::current_exception();
      }
    }
    for (const auto& err : errors) {
      if (!err) continue;
      if (step == 0) std::rethrow_exception(err);
      // past step 0 the inputs were evaluable once, so a failure means the
      // parameters ran away
      try {
        std::rethrow_exception(err);
      } catch (const Error& e) {
        throw DivergenceDetected(
            std::string("loss became unevaluable at step ") +
            std::to_string(step) + ": " + e.what());
      }
    }

    // reduce in scene order
    MatX3 g_x3d = MatX3::Zero(n_points, 3);
    MatX2 g_w2d = MatX2::Zero(n_points, 2);
    std::vector<MatX2> g_x2d(model->learn_x2d ? n_scenes : 0);
    double loss_kl = 0.0, loss_reg = 0.0;
    std::vector<double> pos_errs, ang_errs;
    for (int v = 0; v < n_scenes; ++v) {
      g_x3d += losses[v].g_x3d / n_scenes;
      g_w2d += losses[v].g_w2d / n_scenes;
      if (model->learn_x2d) g_x2d[v] = losses[v].g_x2d / n_scenes;
      loss_kl += losses[v].kl_total / n_scenes;
      loss_reg += losses[v].reg / n_scenes;
      pos_errs.push_back(losses[v].err.pos_err);
      ang_errs.push_back(losses[v].err.angle_err);
    }
    const double loss_total = loss_kl + loss_reg;

    // chain the weight gradient through softmax and the global scale
    const MatX2 sm = softmax_cols(model->w_logits);
    const double scale = std::exp(model->log_scale);
    MatX2 g_logits(n_points, 2);
    for (int c = 0; c < 2; ++c) {
      const double inner = (sm.col(c).array() * g_w2d.col(c).array()).sum();
      g_logits.col(c) =
          scale * sm.col(c).array() * (g_w2d.col(c).array() - inner);
    }
    const double g_log_scale =
        (weights.array() * g_w2d.array()).sum();

    double sq = g_x3d.squaredNorm() + g_logits.squaredNorm() +
                g_log_scale * g_log_scale;
    if (model->learn_x2d) {
      for (const auto& g : g_x2d) sq += g.squaredNorm();
    }
    const double grad_norm = std::sqrt(sq);
    const double scale_clip =
        grad_norm > cfg.grad_clip ? cfg.grad_clip / grad_norm : 1.0;

    model->x3d_params -= cfg.lr * scale_clip * g_x3d;
    model->w_logits -= cfg.lr * scale_clip * g_logits;
    model->log_scale -= cfg.lr * scale_clip * g_log_scale;
    if (model->learn_x2d) {
      for (int v = 0; v < n_scenes; ++v) {
        model->x2d_params[v] -= cfg.lr * scale_clip * g_x2d[v];
      }
    }

    trace.records.push_back({step, loss_total, loss_kl, loss_reg,
                             median_of(ang_errs), median_of(pos_errs),
                             grad_norm});

    if (step == 0) initial_loss = loss_total;
    const bool bad = !std::isfinite(loss_total) ||
                     loss_total - initial_loss >
                         10.0 * std::max(std::abs(initial_loss), 1.0);
    if (!std::isfinite(loss_total)) {
      throw DivergenceDetected("training loss is not finite at step " +
                               std::to_string(step));
    }
    bad_streak = bad ? bad_streak + 1 : 0;
    if (bad_streak >= 50) {
      throw DivergenceDetected(
          "training loss grew 10x over its initial value for 50 steps");
    }
  }
  return trace;
}

EvalMetrics eval_model(const ToyModel& model, const std::vector<Scene>& scenes,
                       const SolverConfig& scfg, const AmisConfig& acfg,
                       uint64_t seed) {
  std::vector<double> pos, ang, lpreds, esses;
  for (size_t v = 0; v < scenes.size(); ++v) {
    const Scene& scene = scenes[v];
    CorrespondenceSet corr = model.build_corr(scene, -1);
    Rng rng = Rng::derive(seed, 7000 + v);
    if (scene.pose_type == PoseType::dof4) {
      auto sol = solve<Pose4>(scene.camera, corr, scfg, std::nullopt, rng);
      auto err = geodesic_distance(sol.pose, scene.gt4());
      pos.push_back(err.pos_err);
      ang.push_back(err.angle_err);
      auto batch = amis(scene.camera, corr, acfg, scfg.huber,
                        proposal_init(sol), rng);
      lpreds.push_back(l_pred(batch));
      esses.push_back(batch.ess_per_iter.back());
    } else {
      auto sol = solve<Pose6>(scene.camera, corr, scfg, std::nullopt, rng);
      auto err = geodesic_distance(sol.pose, scene.gt6());
      pos.push_back(err.pos_err);
      ang.push_back(err.angle_err);
      auto batch = amis(scene.camera, corr, acfg, scfg.huber,
                        proposal_init(sol), rng);
      lpreds.push_back(l_pred(batch));
      esses.push_back(batch.ess_per_iter.back());
    }
  }
  EvalMetrics m;
  m.median_pos_err = median_of(pos);
  m.mean_pos_err =
      std::accumulate(pos.begin(), pos.end(), 0.0) / pos.size();
  m.median_angle_err = median_of(ang);
  m.mean_angle_err =
      std::accumulate(ang.begin(), ang.end(), 0.0) / ang.size();
  m.mean_l_pred =
      std::accumulate(lpreds.begin(), lpreds.end(), 0.0) / lpreds.size();
  m.mean_ess =
      std::accumulate(esses.begin(), esses.end(), 0.0) / esses.size();
  return m;
}

}  // namespace propnp
