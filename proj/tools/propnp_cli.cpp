// Command-line front end: scene generation, solving, posterior sampling,
// loss evaluation, gradient checking, toy training, and benchmark sweeps.
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "propnp/montecarlo.hpp"
#include "propnp/regloss.hpp"
#include "propnp/solver.hpp"
#include "propnp/synth.hpp"
#include "propnp/trainer.hpp"
#include "propnp/version.hpp"

using nlohmann::json;
using namespace propnp;

namespace {

json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json pose_to_json(const Pose4& p) {
  return {{"t", {p.t.x(), p.t.y(), p.t.z()}}, {"theta", p.theta}};
}

json pose_to_json(const Pose6& p) {
  return {{"t", {p.t.x(), p.t.y(), p.t.z()}},
          {"q", {p.q[0], p.q[1], p.q[2], p.q[3]}}};
}

json solver_config_to_json(const SolverConfig& c) {
  return {{"max_iter", c.max_iter},
          {"eps", c.eps},
          {"lm_lambda_init", c.lm_lambda_init},
          {"lambda_up", c.lambda_up},
          {"lambda_down", c.lambda_down},
          {"n_hypotheses", c.n_hypotheses},
          {"subset_size", c.subset_size},
          {"subset_iters", c.subset_iters},
          {"cost_tol", c.cost_tol},
          {"step_tol", c.step_tol},
          {"fast_gn", c.fast_gn},
          {"delta_rel", c.huber.delta_rel},
          {"delta_min", c.huber.delta_min}};
}

json amis_config_to_json(const AmisConfig& c) {
  return {{"iterations", c.iterations},
          {"samples_per_iter", c.samples_per_iter},
          {"yaw_only", c.yaw_only}};
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_output(const json& doc, const std::string& path) {
  if (path.empty()) {
    std::cout << doc.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot open \"" + path + "\" for writing");
  out << doc.dump(2) << "\n";
}

// Flat key,value rendering of a result document. Arrays are serialized as
// compact JSON in the value column; the version/config/seed header becomes
// a leading comment line.
void write_output_csv(const json& doc, const std::string& path) {
  std::ostream* outp = &std::cout;
  std::ofstream file;
  if (!path.empty()) {
    file.open(path);
    if (!file) throw SchemaError("cannot open \"" + path + "\" for writing");
    outp = &file;
  }
  *outp << "# tool_version=" << doc["tool_version"].get<std::string>()
        << " command=" << doc["command"].get<std::string>()
        << " seed=" << doc["seed"].get<uint64_t>()
        << " config=" << doc["config"].dump() << "\n";
  *outp << "key,value\n";
  for (auto it = doc["result"].begin(); it != doc["result"].end(); ++it) {
    if (it->is_number()) {
      *outp << it.key() << "," << fmt_double(it->get<double>()) << "\n";
    } else if (it->is_boolean()) {
      *outp << it.key() << "," << (it->get<bool>() ? 1 : 0) << "\n";
    } else {
      *outp << it.key() << ",\"" << it->dump() << "\"\n";
    }
  }
}

json output_header(const std::string& command, uint64_t seed, json config) {
  return {{"tool_version", kVersion},
          {"command", command},
          {"seed", seed},
          {"config", std::move(config)}};
}

// flags shared by the solver-driven commands
struct SolverFlags {
  SolverConfig cfg;
  void attach(CLI::App* cmd) {
    cmd->add_option("--hypotheses", cfg.n_hypotheses,
                    "random-sampling hypothesis count M");
    cmd->add_option("--subset-size", cfg.subset_size,
                    "hypothesis subset size n (0: per-pose-type default)");
    cmd->add_option("--subset-iters", cfg.subset_iters,
                    "LM attempts per hypothesis subset");
    cmd->add_option("--max-iter", cfg.max_iter, "full-set step attempts");
    cmd->add_option("--delta-rel", cfg.huber.delta_rel,
                    "relative Huber threshold");
    cmd->add_option("--delta-min", cfg.huber.delta_min,
                    "absolute Huber threshold floor");
    cmd->add_flag("--fast-gn", cfg.fast_gn,
                  "plain Gauss-Newton iterations (fast inference)");
  }
};

struct AmisFlags {
  int iterations = 4;
  int samples = 0;  // 0: 128 for 6DoF, 32 for 4DoF
  bool yaw_only = false;
  void attach(CLI::App* cmd) {
    cmd->add_option("--amis-T", iterations, "AMIS iteration count");
    cmd->add_option("--amis-K", samples,
                    "samples per AMIS iteration (0: pose-type default)");
    cmd->add_flag("--yaw-only", yaw_only,
                  "sample only the yaw marginal at the pinned position");
  }
  AmisConfig resolve(PoseType type) const {
    AmisConfig cfg;
    cfg.iterations = iterations;
    cfg.samples_per_iter =
        samples > 0 ? samples : (type == PoseType::dof6 ? 128 : 32);
    cfg.yaw_only = yaw_only;
    return cfg;
  }
};

template <class PoseT>
json run_solve(const Scene& scene, const PoseT& gt, const SolverConfig& cfg,
               uint64_t seed, bool init_gt) {
  Rng rng = Rng::derive(seed, 1);
  std::optional<PoseT> init;
  if (init_gt) init = gt;
  const auto sol = solve<PoseT>(scene.camera, scene.corr, cfg, init, rng);
  const auto err = geodesic_distance(sol.pose, gt);
  return {{"pose", pose_to_json(sol.pose)},
          {"cov", mat_to_json(sol.cov)},
          {"cost", sol.cost},
          {"log_likelihood", sol.log_likelihood},
          {"converged", sol.converged},
          {"iterations", sol.iterations},
          {"pos_err", err.pos_err},
          {"angle_err", err.angle_err}};
}

template <class PoseT>
json run_sample(const Scene& scene, const PoseT& gt, const SolverConfig& scfg,
                const AmisConfig& acfg, uint64_t seed,
                const std::string& dump_path) {
  Rng rng = Rng::derive(seed, 2);
  const auto sol =
      solve<PoseT>(scene.camera, scene.corr, scfg, std::nullopt, rng);
  const auto batch = amis(scene.camera, scene.corr, acfg, scfg.huber,
                          proposal_init(sol), rng);
  json doc = {{"l_pred", l_pred(batch)},
              {"l_pred_laplace", laplace_l_pred(sol)},
              {"ess_per_iter", json(batch.ess_per_iter)},
              {"n_samples", batch.poses.size()},
              {"mc_localization_score", mc_localization_score(batch, sol)},
              {"solution", pose_to_json(sol.pose)},
              {"pos_err", geodesic_distance(sol.pose, gt).pos_err}};
  if (!dump_path.empty()) {
    std::ofstream csv(dump_path);
    if (!csv) {
      throw SchemaError("cannot open \"" + dump_path + "\" for writing");
    }
    csv << "# tool_version=" << kVersion << " seed=" << seed << "\n";
    if constexpr (PoseT::kDof == 4) {
      csv << "t_x,t_y,t_z,theta,log_p,log_q,log_v\n";
    } else {
      csv << "t_x,t_y,t_z,q_w,q_x,q_y,q_z,log_p,log_q,log_v\n";
    }
    for (size_t j = 0; j < batch.poses.size(); ++j) {
      const auto& y = batch.poses[j];
      csv << fmt_double(y.t.x()) << "," << fmt_double(y.t.y()) << ","
          << fmt_double(y.t.z()) << ",";
      if constexpr (PoseT::kDof == 4) {
        csv << fmt_double(y.theta) << ",";
      } else {
        csv << fmt_double(y.q[0]) << "," << fmt_double(y.q[1]) << ","
            << fmt_double(y.q[2]) << "," << fmt_double(y.q[3]) << ",";
      }
      csv << fmt_double(batch.log_p[j]) << "," << fmt_double(batch.log_q[j])
          << "," << fmt_double(batch.log_v[j]) << "\n";
    }
  }
  return doc;
}

template <class PoseT>
json run_loss(const Scene& scene, const PoseT& gt, const SolverConfig& scfg,
              const AmisConfig& acfg, uint64_t seed) {
  Rng rng = Rng::derive(seed, 3);
  const auto res =
      kl_loss_full(scene.camera, scene.corr, gt, scfg, acfg, rng);
  return {{"l_tgt", res.report.l_tgt},
          {"l_pred", res.report.l_pred},
          {"total", res.report.total},
          {"grad_x3d", mat_to_json(res.report.grad_x3d)},
          {"grad_x2d", mat_to_json(res.report.grad_x2d)},
          {"grad_w2d", mat_to_json(res.report.grad_w2d)},
          {"grad_x3d_norm", res.report.grad_x3d.norm()},
          {"grad_x2d_norm", res.report.grad_x2d.norm()},
          {"grad_w2d_norm", res.report.grad_w2d.norm()},
          {"ess", res.batch.ess_per_iter.back()}};
}

// central-difference probe for the gradcheck command
template <class Fn>
double fd_max_rel_err(const CorrespondenceSet& corr, const Fn& value,
                      const MatX3& gx3, const MatX2& gx2, const MatX2& gw2,
                      double h) {
  double scale = 1e-6, worst = 0.0;
  CorrespondenceSet c = corr;
  auto probe = [&](double* slot, double base, double analytic) {
    *slot = base + h;
    const double up = value(c);
    *slot = base - h;
    const double dn = value(c);
    *slot = base;
    const double fd = (up - dn) / (2.0 * h);
    scale = std::max(scale, std::abs(fd));
    worst = std::max(worst, std::abs(fd - analytic));
  };
  for (int i = 0; i < corr.size(); ++i) {
    for (int k = 0; k < 3; ++k) probe(&c.x3d(i, k), corr.x3d(i, k), gx3(i, k));
    for (int k = 0; k < 2; ++k) probe(&c.x2d(i, k), corr.x2d(i, k), gx2(i, k));
    for (int k = 0; k < 2; ++k) probe(&c.w2d(i, k), corr.w2d(i, k), gw2(i, k));
  }
  return worst / scale;
}

template <class PoseT>
json run_gradcheck(const Scene& scene, const PoseT& gt,
                   const SolverConfig& scfg, const AmisConfig& acfg,
                   uint64_t seed) {
  Rng rng = Rng::derive(seed, 4);
  const double h = 1e-5;

  const auto res =
      kl_loss_full(scene.camera, scene.corr, gt, scfg, acfg, rng);
  const double kl_err = fd_max_rel_err(
      scene.corr,
      [&](const CorrespondenceSet& c) {
        return kl_loss_value_frozen(scene.camera, c, gt, res.batch,
                                    scfg.huber);
      },
      res.report.grad_x3d, res.report.grad_x2d, res.report.grad_w2d, h);

  RegLossConfig rcfg;
  const auto reg = reg_loss(scene.camera, scene.corr, res.solution.pose, gt,
                            rcfg, scfg.huber);
  const double reg_err = fd_max_rel_err(
      scene.corr,
      [&](const CorrespondenceSet& c) {
        return reg_loss(scene.camera, c, res.solution.pose, gt, rcfg,
                        scfg.huber)
            .loss;
      },
      reg.grad_x3d, reg.grad_x2d, reg.grad_w2d, h);

  const bool pass = kl_err < 1e-4 && reg_err < 1e-4;
  return {{"kl_max_rel_err", kl_err},
          {"reg_max_rel_err", reg_err},
          {"threshold", 1e-4},
          {"pass", pass}};
}

std::vector<std::string> sorted_scene_files(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw SchemaError("no .json scenes found in \"" + dir + "\"");
  }
  return files;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"probabilistic PnP toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  uint64_t seed = 0;
  std::string out_path;
  std::string format = "json";
  app.add_option("--seed", seed, "global random seed")->capture_default_str();
  app.add_option("--out", out_path, "output file (default: stdout)");
  app.add_option("--format", format,
                 "primary document format: json, or csv as key,value rows")
      ->check(CLI::IsMember({"json", "csv"}));

  auto* gen = app.add_subcommand("gen", "generate synthetic scenes");
  SceneParams sp;
  std::string pose_type_arg = "4dof";
  int gen_count = 1, gen_views_count = 0;
  gen->add_option("--pose-type", pose_type_arg, "4dof or 6dof")
      ->check(CLI::IsMember({"4dof", "6dof"}));
  gen->add_option("--n-points", sp.n_points, "correspondences per scene");
  gen->add_option("--noise-sigma", sp.noise_sigma, "pixel noise sigma");
  gen->add_option("--symmetry", sp.symmetry_order, "symmetry order (1=none)");
  gen->add_option("--box-half", sp.box_half, "object half extent, meters");
  gen->add_option("--box-half-xz", sp.box_half_xz,
                  "radial half extent override (<0: use --box-half)");
  gen->add_option("--depth-min", sp.depth_min, "minimum depth, meters");
  gen->add_option("--depth-max", sp.depth_max, "maximum depth, meters");
  gen->add_option("--weight", sp.weight, "uniform correspondence weight");
  gen->add_option("--count", gen_count, "number of independent scenes");
  gen->add_option("--views", gen_views_count,
                  "multi-view mode: scenes sharing one object");

  std::string scene_path;
  bool init_gt = false;
  SolverFlags solver_flags;
  AmisFlags amis_flags;
  std::string dump_samples;

  auto* solve_cmd = app.add_subcommand("solve", "solve a scene for the pose");
  solve_cmd->add_option("scene", scene_path, "scene JSON file")->required();
  solve_cmd->add_flag("--init-gt", init_gt,
                      "initialize at the scene's ground truth");
  solver_flags.attach(solve_cmd);

  auto* sample_cmd =
      app.add_subcommand("sample", "sample the pose posterior with AMIS");
  sample_cmd->add_option("scene", scene_path, "scene JSON file")->required();
  sample_cmd->add_option("--dump-samples", dump_samples,
                         "write per-sample CSV to this path");
  solver_flags.attach(sample_cmd);
  amis_flags.attach(sample_cmd);

  auto* loss_cmd =
      app.add_subcommand("loss", "KL loss and gradients for a scene");
  loss_cmd->add_option("scene", scene_path, "scene JSON file")->required();
  solver_flags.attach(loss_cmd);
  amis_flags.attach(loss_cmd);

  auto* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "analytic vs finite-difference gradients");
  gradcheck_cmd->add_option("scene", scene_path,
                            "scene JSON file (default: built-in scene)");
  solver_flags.attach(gradcheck_cmd);
  amis_flags.attach(gradcheck_cmd);

  auto* train_cmd =
      app.add_subcommand("train", "fit a correspondence model to scenes");
  std::string scene_dir, model_out, trace_out;
  TrainConfig tc;
  bool kl_off = false, learn_x2d = false;
  train_cmd->add_option("scenes", scene_dir, "directory of scene JSON files")
      ->required();
  train_cmd->add_option("--steps", tc.steps, "gradient steps");
  train_cmd->add_option("--lr", tc.lr, "learning rate");
  train_cmd->add_option("--grad-clip", tc.grad_clip, "gradient norm bound");
  train_cmd->add_flag("--use-reg", tc.use_reg,
                      "add the derivative regularization loss");
  train_cmd->add_flag("--kl-off", kl_off, "disable the KL loss");
  train_cmd->add_flag("--learn-x2d", learn_x2d,
                      "make the 2D coordinates learnable too");
  train_cmd->add_option("--model-out", model_out, "final model JSON path");
  train_cmd->add_option("--trace-out", trace_out,
                        "per-step trace CSV path (default: <out>.csv)");
  solver_flags.attach(train_cmd);
  amis_flags.attach(train_cmd);

  auto* bench_cmd =
      app.add_subcommand("bench", "sweep scenes and compare estimators");
  std::vector<double> sigmas{0.0, 1.0, 2.0};
  std::vector<int> point_counts{16, 64};
  std::vector<int> symmetries{1, 4};
  int repeats = 3;
  std::string bench_pose_type = "4dof";
  bench_cmd->add_option("--sigmas", sigmas, "noise levels to sweep")
      ->delimiter(',');
  bench_cmd->add_option("--n-points", point_counts, "point counts to sweep")
      ->delimiter(',');
  bench_cmd->add_option("--symmetries", symmetries, "symmetry orders to sweep")
      ->delimiter(',');
  bench_cmd->add_option("--repeats", repeats, "seeded repeats per config");
  bench_cmd->add_option("--pose-type", bench_pose_type, "4dof or 6dof")
      ->check(CLI::IsMember({"4dof", "6dof"}));
  solver_flags.attach(bench_cmd);
  amis_flags.attach(bench_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // config errors
  }

  if (gen->parsed()) {
    sp.pose_type = pose_type_from_name(pose_type_arg);
    if (gen_views_count > 0) {
      const auto views = gen_views(sp, gen_views_count, seed);
      std::filesystem::create_directories(out_path);
      for (size_t v = 0; v < views.size(); ++v) {
        char name[64];
        std::snprintf(name, sizeof(name), "view_%03zu.json", v);
        save_scene(views[v],
                   (std::filesystem::path(out_path) / name).string());
      }
    } else if (gen_count > 1) {
      std::filesystem::create_directories(out_path);
      for (int k = 0; k < gen_count; ++k) {
        char name[64];
        std::snprintf(name, sizeof(name), "scene_%03d.json", k);
        save_scene(gen_scene(sp, seed + k),
                   (std::filesystem::path(out_path) / name).string());
      }
    } else if (out_path.empty()) {
      std::cout << scene_to_json(gen_scene(sp, seed)).dump(2) << "\n";
    } else {
      save_scene(gen_scene(sp, seed), out_path);
    }
    return 0;
  }

  if (train_cmd->parsed()) {
    tc.use_kl = !kl_off;
    tc.seed = seed;
    tc.solver = solver_flags.cfg;
    const auto files = sorted_scene_files(scene_dir);
    std::vector<Scene> scenes;
    for (const auto& f : files) scenes.push_back(load_scene(f));
    tc.amis = amis_flags.resolve(scenes.front().pose_type);

    Rng rng = Rng::derive(seed, 5);
    ToyModel model = ToyModel::random_init(scenes.front().corr.size(), rng);
    model.learn_x2d = learn_x2d;
    const auto trace = train(scenes, &model, tc);

    const std::string trace_path =
        !trace_out.empty()
            ? trace_out
            : (out_path.empty() ? "train_trace.csv" : out_path + ".csv");
    std::ofstream csv(trace_path);
    if (!csv) {
      throw SchemaError("cannot open \"" + trace_path + "\" for writing");
    }
    csv << "# tool_version=" << kVersion << " seed=" << seed
        << " steps=" << tc.steps << " lr=" << fmt_double(tc.lr)
        << " use_kl=" << tc.use_kl << " use_reg=" << tc.use_reg << "\n";
    csv << "step,loss_total,loss_kl,loss_reg,median_angle_err,"
           "median_pos_err,grad_norm\n";
    for (const auto& rec : trace.records) {
      csv << rec.step << "," << fmt_double(rec.loss_total) << ","
          << fmt_double(rec.loss_kl) << "," << fmt_double(rec.loss_reg)
          << "," << fmt_double(rec.median_angle_err) << ","
          << fmt_double(rec.median_pos_err) << ","
          << fmt_double(rec.grad_norm) << "\n";
    }

    const auto metrics = eval_model(model, scenes, tc.solver, tc.amis, seed);
    json doc = output_header(
        "train", seed,
        {{"solver", solver_config_to_json(tc.solver)},
         {"amis", amis_config_to_json(tc.amis)},
         {"steps", tc.steps},
         {"lr", tc.lr},
         {"grad_clip", tc.grad_clip},
         {"use_kl", tc.use_kl},
         {"use_reg", tc.use_reg},
         {"learn_x2d", learn_x2d}});
    doc["model"] = {{"x3d", mat_to_json(model.x3d_params)},
                    {"w_logits", mat_to_json(model.w_logits)},
                    {"log_scale", model.log_scale},
                    {"weights", mat_to_json(model.realized_weights())}};
    doc["train_metrics"] = {{"median_pos_err", metrics.median_pos_err},
                            {"median_angle_err", metrics.median_angle_err},
                            {"mean_l_pred", metrics.mean_l_pred},
                            {"mean_ess", metrics.mean_ess}};
    write_output(doc, !model_out.empty() ? model_out : out_path);
    return 0;
  }

  if (bench_cmd->parsed()) {
    struct BenchRow {
      double sigma = 0;
      int n_points = 0, symmetry = 1, repeat = 0;
      uint64_t run_seed = 0;
      double pos_err = 0, angle_err = 0, cost = 0, l_amis = 0, l_laplace = 0,
             ess = 0;
      int iterations = 0;
      bool converged = false;
    };
    const PoseType ptype = pose_type_from_name(bench_pose_type);
    std::vector<BenchRow> rows;
    for (double sigma : sigmas) {
      for (int n : point_counts) {
        for (int sym : symmetries) {
          if (sym < 1 || n % sym != 0) continue;
          for (int rep = 0; rep < repeats; ++rep) {
            BenchRow row;
            row.sigma = sigma;
            row.n_points = n;
            row.symmetry = sym;
            row.repeat = rep;
            row.run_seed = seed * 1000003 + rows.size();
            rows.push_back(row);
          }
        }
      }
    }
    const SolverConfig scfg = solver_flags.cfg;
    const AmisConfig acfg = amis_flags.resolve(ptype);
    const int total = static_cast<int>(rows.size());
    std::vector<std::exception_ptr> errors(total);
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < total; ++k) {
      try {
        BenchRow& row = rows[k];
        SceneParams params;
        params.pose_type = ptype;
        params.n_points = row.n_points;
        params.noise_sigma = row.sigma;
        params.symmetry_order = row.symmetry;
        const Scene scene = gen_scene(params, row.run_seed);
        Rng rng = Rng::derive(row.run_seed, 6);
        auto fill = [&](const auto& sol, const auto& batch, const auto& err) {
          row.pos_err = err.pos_err;
          row.angle_err = err.angle_err;
          row.cost = sol.cost;
          row.iterations = sol.iterations;
          row.converged = sol.converged;
          row.l_amis = l_pred(batch);
          row.l_laplace = laplace_l_pred(sol);
          row.ess = batch.ess_per_iter.back();
        };
        if (ptype == PoseType::dof4) {
          auto sol = solve<Pose4>(scene.camera, scene.corr, scfg,
                                  std::nullopt, rng);
          auto batch = amis(scene.camera, scene.corr, acfg, scfg.huber,
                            proposal_init(sol), rng);
          fill(sol, batch, geodesic_distance(sol.pose, scene.gt4()));
        } else {
          auto sol = solve<Pose6>(scene.camera, scene.corr, scfg,
                                  std::nullopt, rng);
          auto batch = amis(scene.camera, scene.corr, acfg, scfg.huber,
                            proposal_init(sol), rng);
          fill(sol, batch, geodesic_distance(sol.pose, scene.gt6()));
        }
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
    for (const auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }

    std::ostream* outp = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
      file.open(out_path);
      if (!file) {
        throw SchemaError("cannot open \"" + out_path + "\" for writing");
      }
      outp = &file;
    }
    *outp << "# tool_version=" << kVersion << " seed=" << seed
          << " pose_type=" << bench_pose_type << " repeats=" << repeats
          << "\n"
          << "sigma,n_points,symmetry,repeat,run_seed,pos_err,angle_err,"
             "iterations,converged,cost,l_pred_amis,l_pred_laplace,"
             "laplace_minus_amis,ess\n";
    for (const auto& r : rows) {
      *outp << fmt_double(r.sigma) << "," << r.n_points << "," << r.symmetry
            << "," << r.repeat << "," << r.run_seed << ","
            << fmt_double(r.pos_err) << "," << fmt_double(r.angle_err) << ","
            << r.iterations << "," << (r.converged ? 1 : 0) << ","
            << fmt_double(r.cost) << "," << fmt_double(r.l_amis) << ","
            << fmt_double(r.l_laplace) << ","
            << fmt_double(r.l_laplace - r.l_amis) << ","
            << fmt_double(r.ess) << "\n";
    }
    return 0;
  }

  Scene scene;
  if (gradcheck_cmd->parsed() && scene_path.empty()) {
    SceneParams params;
    params.noise_sigma = 1.0;
    params.n_points = 10;
    scene = gen_scene(params, seed + 11);
  } else {
    scene = load_scene(scene_path);
  }
  const SolverConfig scfg = solver_flags.cfg;
  const AmisConfig acfg = amis_flags.resolve(scene.pose_type);

  json config = {{"solver", solver_config_to_json(scfg)}};
  json body;
  std::string command;
  if (solve_cmd->parsed()) {
    command = "solve";
    body = scene.pose_type == PoseType::dof4
               ? run_solve(scene, scene.gt4(), scfg, seed, init_gt)
               : run_solve(scene, scene.gt6(), scfg, seed, init_gt);
  } else if (sample_cmd->parsed()) {
    command = "sample";
    config["amis"] = amis_config_to_json(acfg);
    body = scene.pose_type == PoseType::dof4
               ? run_sample(scene, scene.gt4(), scfg, acfg, seed, dump_samples)
               : run_sample(scene, scene.gt6(), scfg, acfg, seed,
                            dump_samples);
  } else if (loss_cmd->parsed()) {
    command = "loss";
    config["amis"] = amis_config_to_json(acfg);
    body = scene.pose_type == PoseType::dof4
               ? run_loss(scene, scene.gt4(), scfg, acfg, seed)
               : run_loss(scene, scene.gt6(), scfg, acfg, seed);
  } else if (gradcheck_cmd->parsed()) {
    command = "gradcheck";
    config["amis"] = amis_config_to_json(acfg);
    body = scene.pose_type == PoseType::dof4
               ? run_gradcheck(scene, scene.gt4(), scfg, acfg, seed)
               : run_gradcheck(scene, scene.gt6(), scfg, acfg, seed);
  }

  json doc = output_header(command, seed, std::move(config));
  doc["result"] = std::move(body);
  if (format == "csv") {
    write_output_csv(doc, out_path);
  } else {
    write_output(doc, out_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const SchemaError& e) {
    std::cerr << "error code=" << e.code() << " msg=\"" << e.what()
              << "\"\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error code=" << e.code() << " msg=\"" << e.what()
              << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error code=internal msg=\"" << e.what() << "\"\n";
    return 1;
  }
}
