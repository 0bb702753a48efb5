#include "propnp/distributions.hpp"

#include <cmath>

namespace propnp {

namespace {

// Cholesky with a strict PD check: the factor diagonal must be safely
// positive, or downstream triangular solves produce inf/NaN densities.
bool cholesky(const Eigen::MatrixXd& m, Eigen::MatrixXd* lower) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) return false;
  *lower = llt.matrixL();
  if (!lower->allFinite() || (lower->diagonal().array() <= 1e-154).any()) {
    return false;
  }
  return true;
}

}  // namespace

MvT3 MvT3::make(const Vec3& mu, const Mat3& sigma, double nu) {
  MvT3 d;
  d.mu_ = mu;
  d.sigma_ = 0.5 * (sigma + sigma.transpose());
  d.nu_ = nu;
  Eigen::MatrixXd lower;
  if (!d.sigma_.allFinite() || !cholesky(d.sigma_, &lower)) {
    throw DegenerateFit("MvT3 scale matrix is not positive definite");
  }
  d.chol_ = lower;
  const double log_det = 2.0 * lower.diagonal().array().log().sum();
  d.log_norm_ = std::lgamma(0.5 * (nu + 3.0)) - std::lgamma(0.5 * nu) -
                1.5 * std::log(nu * M_PI) - 0.5 * log_det;
  return d;
}

double MvT3::log_density(const Vec3& t) const {
  const Vec3 z = chol_.triangularView<Eigen::Lower>().solve(t - mu_);
  const double maha = z.squaredNorm();
  return log_norm_ - 0.5 * (nu_ + 3.0) * std::log1p(maha / nu_);
}

Vec3 MvT3::sample(Rng& rng) const {
  const Vec3 z(rng.normal(), rng.normal(), rng.normal());
  const double u = rng.chi_squared(nu_);
  return mu_ + chol_ * z * std::sqrt(nu_ / u);
}

MvT3 mvt_fit(const std::vector<Vec3>& samples, const Eigen::VectorXd& weights,
             double nu) {
  const int n = static_cast<int>(samples.size());
  if (n < 4 || weights.size() != n) {
    throw DegenerateFit("mvt_fit needs at least 4 weighted samples");
  }
  const double wsum = weights.sum();
  if (!(wsum > 0.0) || !std::isfinite(wsum)) {
    throw DegenerateFit("mvt_fit weights must sum to a positive value");
  }
  Vec3 mu = Vec3::Zero();
  for (int j = 0; j < n; ++j) mu += weights[j] * samples[j];
  mu /= wsum;
  Mat3 cov = Mat3::Zero();
  for (int j = 0; j < n; ++j) {
    const Vec3 d = samples[j] - mu;
    cov += weights[j] * d * d.transpose();
  }
  cov /= wsum;
  cov += (1e-9 * cov.trace() / 3.0) * Mat3::Identity();
  return MvT3::make(mu, cov, nu);
}

double log_bessel_i0(double kappa) {
  if (kappa < 0.0) kappa = -kappa;
  if (kappa <= 50.0) {
    return std::log(std::cyl_bessel_i(0.0, kappa));
  }
  const double iz = 1.0 / kappa;
  const double series =
      iz * (0.125 +
            iz * (9.0 / 128.0 + iz * (75.0 / 1024.0 + iz * 11025.0 / 98304.0)));
  return kappa - 0.5 * std::log(2.0 * M_PI * kappa) + std::log1p(series);
}

double VonMisesUniformMix::log_density(double theta) const {
  if (kappa <= 0.0) return -std::log(2.0 * M_PI);
  const double vm_log =
      kappa * std::cos(theta - mu) - log_bessel_i0(kappa);
  return std::log((1.0 - alpha) * std::exp(vm_log) + alpha) -
         std::log(2.0 * M_PI);
}

double VonMisesUniformMix::sample(Rng& rng) const {
  if (rng.uniform() < alpha || kappa < 1e-8) {
    return wrap_angle(rng.uniform(-M_PI, M_PI));
  }
  // Best-Fisher rejection sampling.
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  double f = 0.0;
  for (;;) {
    const double z = std::cos(M_PI * rng.uniform());
    f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    const double u2 = rng.uniform();
    if (c * (2.0 - c) - u2 > 0.0) break;
    if (u2 > 0.0 && std::log(c / u2) + 1.0 - c >= 0.0) break;
  }
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  return wrap_angle(mu + side * std::acos(std::clamp(f, -1.0, 1.0)));
}

VonMisesUniformMix vm_fit(const std::vector<double>& thetas,
                          const Eigen::VectorXd& weights, double alpha) {
  const int n = static_cast<int>(thetas.size());
  if (n < 1 || weights.size() != n) {
    throw DegenerateFit("vm_fit needs weighted samples");
  }
  const double wsum = weights.sum();
  if (!(wsum > 0.0)) throw DegenerateFit("vm_fit weights sum to zero");
  double s = 0.0, c = 0.0;
  for (int j = 0; j < n; ++j) {
    s += weights[j] * std::sin(thetas[j]);
    c += weights[j] * std::cos(thetas[j]);
  }
  VonMisesUniformMix out;
  out.alpha = alpha;
  out.mu = wrap_angle(std::atan2(s, c));
  const double rbar = std::sqrt(s * s + c * c) / wsum;
  if (rbar >= 1.0 - 1e-9) {
    out.kappa = kKappaMax;
  } else {
    const double kappa_hat = rbar * (2.0 - rbar * rbar) / (1.0 - rbar * rbar);
    out.kappa = std::min(kappa_hat / 3.0, kKappaMax);
  }
  return out;
}

Acg4 Acg4::make(const Mat4& lambda) {
  Acg4 d;
  Mat4 sym = 0.5 * (lambda + lambda.transpose());
  const double tr = sym.trace();
  if (!(tr > 0.0) || !sym.allFinite()) {
    throw DegenerateFit("ACG parameter matrix must have positive trace");
  }
  d.lambda_ = sym * (4.0 / tr);
  Eigen::MatrixXd lower;
  if (!cholesky(d.lambda_, &lower)) {
    throw DegenerateFit("ACG parameter matrix is not positive definite");
  }
  d.chol_ = lower;
  d.log_det_ = 2.0 * lower.diagonal().array().log().sum();
  return d;
}

double Acg4::log_density(const Vec4& l) const {
  // l' Lambda^-1 l = |L^-1 l|^2 via a triangular solve
  const Vec4 z =
      chol_.triangularView<Eigen::Lower>().solve(l);
  return -2.0 * std::log(z.squaredNorm()) - std::log(2.0 * M_PI * M_PI) -
         0.5 * log_det_;
}

Vec4 Acg4::sample(Rng& rng) const {
  for (;;) {
    const Vec4 z(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    const Vec4 x = chol_ * z;
    const double norm = x.norm();
    if (norm > 0.0) return x / norm;
  }
}

Acg4 acg_fit(const std::vector<Vec4>& samples,
             const Eigen::VectorXd& weights) {
  const int n = static_cast<int>(samples.size());
  if (n < 5 || weights.size() != n) {
    throw DegenerateFit("acg_fit needs at least 5 weighted samples");
  }
  const double wsum = weights.sum();
  if (!(wsum > 0.0)) throw DegenerateFit("acg_fit weights sum to zero");

  Mat4 lambda = Mat4::Identity();
  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    Eigen::LLT<Mat4> llt(lambda);
    if (llt.info() != Eigen::Success) break;
    Mat4 next = Mat4::Zero();
    for (int j = 0; j < n; ++j) {
      const Vec4& l = samples[j];
      const double q = l.dot(llt.solve(l));
      if (!(q > 0.0)) continue;
      next.noalias() += (weights[j] / q) * l * l.transpose();
    }
    next *= 4.0 / wsum;
    const double tr = next.trace();
    if (!(tr > 0.0)) break;
    next *= 4.0 / tr;
    const double change = (next - lambda).norm();
    lambda = next;
    if (change < 1e-8) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw FixedPointDivergence(
        "ACG fixed-point estimation did not converge in 100 iterations");
  }
  const double det = lambda.determinant();
  lambda += kAcgDispersion * std::pow(std::max(det, 0.0), 0.25) *
            Mat4::Identity();
  return Acg4::make(lambda);
}

Proposal<Pose4> proposal_init(const PnPSolution<Pose4>& sol) {
  Proposal<Pose4> p;
  p.position = MvT3::make(sol.pose.t, sol.cov.topLeftCorner<3, 3>());
  p.orientation.mu = sol.pose.theta;
  const double var = sol.cov(3, 3);
  p.orientation.kappa =
      var > 0.0 ? std::min(1.0 / (3.0 * var), kKappaMax) : kKappaMax;
  p.orientation.alpha = 0.25;
  return p;
}

Mat4 quat_inverse_covariance(const PnPSolution<Pose6>& sol) {
  const Eigen::Matrix<double, 4, 3> tb = quat_tangent_basis(sol.pose.q);
  const Mat4 sigma_l = sol.cov.block<4, 4>(3, 3);
  const Mat3 reduced = tb.transpose() * sigma_l * tb;
  Eigen::LLT<Mat3> llt(reduced);
  if (llt.info() != Eigen::Success) {
    throw DegenerateFit("quaternion covariance block is not positive definite");
  }
  const Mat3 reduced_inv = llt.solve(Mat3::Identity());
  return tb * reduced_inv * tb.transpose();
}

Proposal<Pose6> proposal_init(const PnPSolution<Pose6>& sol) {
  Proposal<Pose6> p;
  p.position = MvT3::make(sol.pose.t, sol.cov.topLeftCorner<3, 3>());
  const Mat4 info = quat_inverse_covariance(sol);
  const Mat4 lambda_hat = (info + Mat4::Identity()).inverse();
  const double det = lambda_hat.determinant();
  const Mat4 lambda = lambda_hat + kAcgDispersion *
                                       std::pow(std::max(det, 0.0), 0.25) *
                                       Mat4::Identity();
  p.orientation = Acg4::make(lambda);
  return p;
}

Proposal<Pose4> proposal_refit(const std::vector<Pose4>& samples,
                               const Eigen::VectorXd& weights,
                               const Proposal<Pose4>& previous) {
  std::vector<Vec3> ts(samples.size());
  std::vector<double> thetas(samples.size());
  for (size_t j = 0; j < samples.size(); ++j) {
    ts[j] = samples[j].t;
    thetas[j] = samples[j].theta;
  }
  Proposal<Pose4> p;
  p.position = mvt_fit(ts, weights);
  p.orientation = vm_fit(thetas, weights, previous.orientation.alpha);
  return p;
}

Proposal<Pose6> proposal_refit(const std::vector<Pose6>& samples,
                               const Eigen::VectorXd& weights,
                               const Proposal<Pose6>& previous) {
  (void)previous;
  std::vector<Vec3> ts(samples.size());
  std::vector<Vec4> qs(samples.size());
  for (size_t j = 0; j < samples.size(); ++j) {
    ts[j] = samples[j].t;
    qs[j] = samples[j].q;
  }
  Proposal<Pose6> p;
  p.position = mvt_fit(ts, weights);
  p.orientation = acg_fit(qs, weights);
  return p;
}

}  // namespace propnp
