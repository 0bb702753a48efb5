// Acceptance suite: runs every criterion end to end at its stated tolerance
// and prints one PASS/FAIL line each. Exit code 0 only if all pass.
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "oracles.hpp"
#include "propnp/montecarlo.hpp"
#include "propnp/regloss.hpp"
#include "propnp/solver.hpp"
#include "propnp/synth.hpp"
#include "propnp/trainer.hpp"

using namespace propnp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// A1: solver exactness on noise-free 6DoF scenes.
Outcome a1() {
  SolverConfig cfg;
  int hits = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    SceneParams params;
    params.pose_type = PoseType::dof6;
    params.n_points = 16;
    const Scene scene = gen_scene(params, 10000 + seed);
    Rng rng(seed);
    const auto sol =
        solve<Pose6>(scene.camera, scene.corr, cfg, std::nullopt, rng);
    const auto err = geodesic_distance(sol.pose, scene.gt6());
    if (err.pos_err < 1e-6 && err.angle_err < 1e-6) ++hits;
  }
  return {hits == 100, fmt("recovered %d/100 scenes within 1e-6", hits)};
}

// A2: analytic vs finite-difference gradients for both losses.
Outcome a2() {
  double worst_kl = 0.0, worst_reg = 0.0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    SceneParams params;
    params.noise_sigma = 1.0;
    params.n_points = 10;
    params.pose_type = seed % 2 == 0 ? PoseType::dof4 : PoseType::dof6;
    const Scene scene = gen_scene(params, 20000 + seed);
    SolverConfig scfg;
    AmisConfig acfg;
    acfg.iterations = 2;
    acfg.samples_per_iter = 16;
    Rng rng(seed);

    auto check = [&](const auto& gt) {
      const auto res = kl_loss_full(scene.camera, scene.corr, gt, scfg, acfg,
                                    rng);
      auto fd_kl = oracles::fd_corr_grads(
          [&](const CorrespondenceSet& c) {
            return kl_loss_value_frozen(scene.camera, c, gt, res.batch,
                                        scfg.huber);
          },
          scene.corr, 1e-5);
      worst_kl = std::max(
          worst_kl,
          oracles::max_grad_rel_err(fd_kl, res.report.grad_x3d,
                                    res.report.grad_x2d,
                                    res.report.grad_w2d));

      RegLossConfig rcfg;
      const auto reg = reg_loss(scene.camera, scene.corr, res.solution.pose,
                                gt, rcfg, scfg.huber);
      auto fd_reg = oracles::fd_corr_grads(
          [&](const CorrespondenceSet& c) {
            return reg_loss(scene.camera, c, res.solution.pose, gt, rcfg,
                            scfg.huber)
                .loss;
          },
          scene.corr, 1e-5);
      worst_reg = std::max(
          worst_reg, oracles::max_grad_rel_err(fd_reg, reg.grad_x3d,
                                               reg.grad_x2d, reg.grad_w2d));
    };
    if (scene.pose_type == PoseType::dof4) {
      check(scene.gt4());
    } else {
      check(scene.gt6());
    }
  }
  return {worst_kl < 1e-4 && worst_reg < 1e-4,
          fmt("max rel err: kl %.3g, reg %.3g (gate 1e-4)", worst_kl,
              worst_reg)};
}

// A3: yaw-only AMIS normalizer against the 4096-point grid quadrature.
Outcome a3() {
  int ok = 0;
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const Scene scene = helpers::yaw_anchor_scene(30000 + seed);
    SolverConfig scfg;
    Rng rng(seed);
    const auto sol =
        solve<Pose4>(scene.camera, scene.corr, scfg, std::nullopt, rng);
    AmisConfig acfg;
    acfg.iterations = 4;
    acfg.samples_per_iter = 32;  // paper value for 4DoF
    acfg.yaw_only = true;
    const auto batch = amis(scene.camera, scene.corr, acfg, scfg.huber,
                            proposal_init(sol), rng);

    const double delta = adaptive_delta(scene.corr, scfg.huber);
    const int grid = 4096;
    Eigen::VectorXd vals(grid);
    for (int k = 0; k < grid; ++k) {
      const double th = -M_PI + 2.0 * M_PI * (k + 0.5) / grid;
      vals[k] = log_integrand(Pose4::make(sol.pose.t, th), scene.camera,
                              scene.corr, delta);
    }
    const double oracle = logsumexp(vals) + std::log(2.0 * M_PI / grid);
    const double err = std::abs(l_pred(batch) - oracle);
    worst = std::max(worst, err);
    if (err < 0.05) ++ok;
  }
  return {ok >= 18,
          fmt("%d/20 scenes within 0.05 nats (worst %.4f)", ok, worst)};
}

// A4: ambiguity capture and the Laplace gap on 4-fold symmetric scenes.
Outcome a4() {
  double worst_mass_dev = 0.0, min_gap = 1e300;
  const double window = 10.0 * M_PI / 360.0;  // +-5 degrees
  for (uint64_t seed = 0; seed < 3; ++seed) {
    const Scene scene = helpers::ambiguity_scene(40000 + seed);
    SolverConfig scfg;
    scfg.subset_size = 8;
    scfg.huber = helpers::ambiguity_huber();
    Rng rng(seed);
    const auto sol =
        solve<Pose4>(scene.camera, scene.corr, scfg, std::nullopt, rng);
    AmisConfig acfg;
    acfg.iterations = 4;
    acfg.samples_per_iter = 16384;
    const auto batch = amis(scene.camera, scene.corr, acfg, scfg.huber,
                            proposal_init(sol), rng);
    // windows around the posterior's own mode family (solved mode + k*90deg)
    const auto masses =
        helpers::yaw_window_masses(batch, sol.pose.theta, 4, window);
    for (double m : masses) {
      worst_mass_dev = std::max(worst_mass_dev, std::abs(m - 0.25));
    }
    min_gap = std::min(min_gap, l_pred(batch) - laplace_l_pred(sol));
  }
  const bool pass =
      worst_mass_dev <= 0.05 && min_gap >= std::log(2.0) - 0.1;
  return {pass, fmt("worst |mass-0.25| = %.3f (gate 0.05), laplace gap "
                    ">= %.3f nats (gate %.3f)",
                    worst_mass_dev, min_gap, std::log(2.0) - 0.1)};
}

// A5: distribution correctness.
Outcome a5() {
  // von Mises mixture integrates to 1 under quadrature
  double worst_vm = 0.0;
  for (double kappa : {0.0, 0.5, 5.0, 50.0, 500.0, 1e4}) {
    VonMisesUniformMix d{0.37, kappa, 0.25};
    const double integral = oracles::periodic_trapezoid(
        [&](double th) { return d.density(th); }, 1 << 16);
    worst_vm = std::max(worst_vm, std::abs(integral - 1.0));
  }
  const bool vm_ok = worst_vm < 1e-8;

  // ACG with identity parameter is exactly uniform
  const Acg4 uniform = Acg4::make(Mat4::Identity());
  Rng arng(5);
  double worst_acg = 0.0;
  for (int k = 0; k < 32; ++k) {
    Vec4 l(arng.normal(), arng.normal(), arng.normal(), arng.normal());
    l.normalize();
    worst_acg = std::max(
        worst_acg,
        std::abs(uniform.density(l) - 1.0 / (2.0 * M_PI * M_PI)));
  }
  const bool acg_uniform_ok = worst_acg < 1e-15;

  // ACG fit round-trip
  Mat4 lambda0 = Mat4::Zero();
  lambda0.diagonal() << 2.0, 1.0, 0.7, 0.3;
  const Acg4 src = Acg4::make(lambda0);
  Rng rng(11);
  std::vector<Vec4> samples(100000);
  for (auto& s : samples) s = src.sample(rng);
  const Acg4 fit =
      acg_fit(samples, Eigen::VectorXd::Ones(100000));
  const double frob = (fit.lambda() - lambda0).norm();
  const bool acg_fit_ok = frob < 0.05;

  // multivariate t integrates to ~1 over a +-20 sigma box (Monte Carlo)
  const MvT3 mvt = MvT3::make(Vec3::Zero(), Mat3::Identity(), 3.0);
  const double half = 20.0;
  const int chunks = 64;
  const long per_chunk = 1000000;  // 6.4e7 samples
  std::vector<double> sums(chunks, 0.0);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < chunks; ++c) {
    Rng crng = Rng::derive(777, c);
    double acc = 0.0;
    for (long k = 0; k < per_chunk; ++k) {
      acc += mvt.density(Vec3(crng.uniform(-half, half),
                              crng.uniform(-half, half),
                              crng.uniform(-half, half)));
    }
    sums[c] = acc;
  }
  double total = 0.0;
  for (double s : sums) total += s;
  const double integral =
      std::pow(2.0 * half, 3) * total / (double(chunks) * per_chunk);
  const bool mvt_ok = std::abs(integral - 1.0) < 1e-2;

  return {vm_ok && acg_uniform_ok && acg_fit_ok && mvt_ok,
          fmt("vm |int-1| %.2g; acg uniform dev %.2g; acg fit frob %.3f; "
              "mvt box int %.4f",
              worst_vm, worst_acg, frob, integral)};
}

// A6: end-to-end correspondence learning on held-out views.
Outcome a6() {
  int pass_seeds = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    SceneParams params;
    params.pose_type = PoseType::dof4;
    params.n_points = 16;
    const auto views = gen_views(params, 12, 60000 + seed);
    const std::vector<Scene> train_views(views.begin(), views.begin() + 8);
    const std::vector<Scene> held_out(views.begin() + 8, views.end());

    Rng rng(seed);
    ToyModel model = ToyModel::random_init(16, rng);
    TrainConfig cfg;
    cfg.steps = 800;
    cfg.seed = seed;
    cfg.amis.iterations = 4;
    cfg.amis.samples_per_iter = 32;
    try {
      train(train_views, &model, cfg);
    } catch (const DivergenceDetected&) {
      continue;
    }
    const auto metrics =
        eval_model(model, held_out, cfg.solver, cfg.amis, seed);
    double depth = 0.0;
    for (const auto& s : held_out) depth += s.gt4().t.z() / held_out.size();
    if (metrics.median_angle_err < 5.0 * M_PI / 180.0 &&
        metrics.median_pos_err < 0.05 * depth) {
      ++pass_seeds;
    }
  }
  return {pass_seeds >= 8,
          fmt("%d/10 seeds reached < 5 deg and < 5%% depth on held-out "
              "views (gate 8)",
              pass_seeds)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PROPNP_CLI_PATH) + " " + args +
                          " > /dev/null 2> /dev/null";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A7: invariance suite.
Outcome a7() {
  std::vector<std::string> failures;

  // global weight-scaling argmin invariance
  {
    SceneParams params;
    params.pose_type = PoseType::dof6;
    params.n_points = 16;
    const Scene scene = gen_scene(params, 70001);
    SolverConfig cfg;
    Rng r1(3), r2(3);
    const auto base =
        solve<Pose6>(scene.camera, scene.corr, cfg, std::nullopt, r1);
    CorrespondenceSet scaled = scene.corr;
    scaled.w2d *= 7.3;
    const auto after =
        solve<Pose6>(scene.camera, scaled, cfg, std::nullopt, r2);
    const auto diff = geodesic_distance(base.pose, after.pose);
    if (diff.pos_err >= 1e-8 || diff.angle_err >= 1e-8) {
      failures.push_back("weight-scaling argmin invariance");
    }
  }

  // Huber continuity at the threshold
  {
    const double delta = 1.3, d2 = delta * delta;
    const bool continuous =
        std::abs(huber(d2 * (1 + 1e-12), delta) - huber(d2, delta)) < 1e-9 &&
        huber_deriv(d2, delta) == 1.0 &&
        std::abs(huber_deriv(d2 * (1 + 1e-12), delta) - 1.0) < 1e-9;
    if (!continuous) failures.push_back("Huber continuity at the threshold");
  }

  // importance-weight normalization
  {
    const Scene scene = helpers::yaw_anchor_scene(70002);
    SolverConfig scfg;
    Rng rng(5);
    const auto sol =
        solve<Pose4>(scene.camera, scene.corr, scfg, std::nullopt, rng);
    AmisConfig acfg;
    acfg.iterations = 4;
    acfg.samples_per_iter = 32;
    const auto batch = amis(scene.camera, scene.corr, acfg, scfg.huber,
                            proposal_init(sol), rng);
    const Eigen::VectorXd vbar = normalized_weights(batch.log_v);
    if (std::abs(vbar.sum() - 1.0) >= 1e-12) {
      failures.push_back("importance-weight normalization");
    }
  }

  // quaternion sign canonicalization
  {
    Rng rng(9);
    Pose6 pose = Pose6::make(Vec3(0, 0, 3), Vec4(-0.4, 0.2, -0.7, 0.5));
    bool canonical = true;
    for (int k = 0; k < 100; ++k) {
      Eigen::Matrix<double, 7, 1> d;
      for (int j = 0; j < 7; ++j) d[j] = rng.uniform(-0.4, 0.4);
      pose = apply_increment(pose, d);
      int first = 0;
      while (first < 4 && pose.q[first] == 0.0) ++first;
      canonical = canonical && first < 4 && pose.q[first] > 0.0 &&
                  std::abs(pose.q.norm() - 1.0) < 1e-9;
    }
    if (!canonical) failures.push_back("quaternion sign canonicalization");
  }

  // seed determinism for every command
  {
    const std::string tmp = "/tmp/propnp_accept";
    bool ok = run_cli("gen --seed 3 --noise-sigma 1 --out " + tmp +
                      "_s.json") == 0;
    auto twice_equal = [&](const std::string& args, const std::string& a,
                           const std::string& b) {
      if (run_cli(args + " --out " + a) != 0) return false;
      if (run_cli(args + " --out " + b) != 0) return false;
      const std::string sa = slurp(a), sb = slurp(b);
      return !sa.empty() && sa == sb;
    };
    ok = ok && twice_equal("gen --seed 3 --noise-sigma 1", tmp + "_g1.json",
                           tmp + "_g2.json");
    ok = ok && twice_equal("solve " + tmp + "_s.json --seed 4",
                           tmp + "_v1.json", tmp + "_v2.json");
    ok = ok && twice_equal("sample " + tmp + "_s.json --seed 4 --amis-K 16",
                           tmp + "_m1.json", tmp + "_m2.json");
    ok = ok && twice_equal("loss " + tmp + "_s.json --seed 4 --amis-K 16",
                           tmp + "_l1.json", tmp + "_l2.json");
    ok = ok && twice_equal("gradcheck --seed 4 --amis-K 16",
                           tmp + "_c1.json", tmp + "_c2.json");
    ok = ok && run_cli("gen --seed 5 --views 3 --n-points 8 --out " + tmp +
                       "_views") == 0;
    ok = ok &&
         twice_equal("train " + tmp + "_views --seed 5 --steps 3 --amis-K 8 "
                     "--trace-out " +
                         tmp + "_t.csv",
                     tmp + "_t1.json", tmp + "_t2.json");
    ok = ok && twice_equal(
                   "bench --seed 6 --sigmas 0 --n-points 8 --symmetries 1 "
                   "--repeats 1 --amis-K 8",
                   tmp + "_b1.csv", tmp + "_b2.csv");
    if (!ok) failures.push_back("seed determinism of the CLI commands");
  }

  if (failures.empty()) return {true, "all invariances hold"};
  std::string detail = "failed:";
  for (const auto& f : failures) detail += " [" + f + "]";
  return {false, detail};
}

struct Criterion {
  const char* name;
  const char* budget;
  double limit_s;
  Outcome (*fn)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"A1 solver exactness", "< 5 s", 5.0, a1},
      {"A2 gradient fidelity", "< 30 s", 30.0, a2},
      {"A3 normalizer oracle", "< 60 s", 60.0, a3},
      {"A4 ambiguity capture", "< 60 s", 60.0, a4},
      {"A5 distribution correctness", "< 120 s", 120.0, a5},
      {"A6 end-to-end learning", "< 600 s", 600.0, a6},
      {"A7 invariance suite", "< 30 s", 30.0, a7},
  };
  bool all_pass = true;
  for (const auto& c : criteria) {
    const double t0 = now_s();
    const Outcome out = c.fn();
    const double elapsed = now_s() - t0;
    const bool in_budget = elapsed < c.limit_s;
    const bool pass = out.pass && in_budget;
    all_pass = all_pass && pass;
    std::printf("%-30s %s  (%.2f s, budget %s)  %s\n", c.name,
                pass ? "PASS" : "FAIL", elapsed, c.budget,
                out.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %s\n", all_pass ? "ALL PASS" : "FAILURES");
  return all_pass ? 0 : 1;
}
