#pragma once

#include <Eigen/Dense>
#include <vector>

#include "propnp/geometry.hpp"
#include "propnp/rng.hpp"
#include "propnp/solver.hpp"

namespace propnp {

using Mat4 = Eigen::Matrix4d;

// Concentration cap for the von Mises fit; the moment formula diverges as
// the resultant length approaches 1.
inline constexpr double kKappaMax = 1e6;
// Dispersion floor coefficient for the ACG parameter matrix.
inline constexpr double kAcgDispersion = 1e-3;

// 3D multivariate t distribution (position proposal).
class MvT3 {
 public:
  // Throws DegenerateFit when sigma is not positive definite.
  static MvT3 make(const Vec3& mu, const Mat3& sigma, double nu = 3.0);

  double log_density(const Vec3& t) const;
  double density(const Vec3& t) const { return std::exp(log_density(t)); }
  Vec3 sample(Rng& rng) const;

  const Vec3& mu() const { return mu_; }
  const Mat3& sigma() const { return sigma_; }
  double nu() const { return nu_; }

 private:
  Vec3 mu_ = Vec3::Zero();
  Mat3 sigma_ = Mat3::Identity();
  double nu_ = 3.0;
  Mat3 chol_ = Mat3::Identity();  // lower-triangular factor of sigma
  double log_norm_ = 0.0;
};

// Weighted first/second-moment fit; covariance regularized to PD by adding
// 1e-9 * trace/3 * I. Throws DegenerateFit when that is not repairable.
MvT3 mvt_fit(const std::vector<Vec3>& samples, const Eigen::VectorXd& weights,
             double nu = 3.0);

// Mixture of von Mises and uniform on (-pi, pi] (1D orientation proposal).
struct VonMisesUniformMix {
  double mu = 0.0;
  double kappa = 0.0;
  double alpha = 0.25;  // uniform mixture weight

  double log_density(double theta) const;
  double density(double theta) const { return std::exp(log_density(theta)); }
  double sample(Rng& rng) const;
};

// log I0(kappa), stable for large kappa.
double log_bessel_i0(double kappa);

// Circular-mean location, concentration kappa_hat/3 from the weighted
// resultant length, capped at kKappaMax.
VonMisesUniformMix vm_fit(const std::vector<double>& thetas,
                          const Eigen::VectorXd& weights,
                          double alpha = 0.25);

// Angular central Gaussian on the unit 3-sphere (quaternion proposal).
// The parameter matrix is trace-normalized to 4 on construction; the density
// is invariant to that scaling.
class Acg4 {
 public:
  static Acg4 make(const Mat4& lambda);

  double log_density(const Vec4& l) const;
  double density(const Vec4& l) const { return std::exp(log_density(l)); }
  Vec4 sample(Rng& rng) const;

  const Mat4& lambda() const { return lambda_; }

 private:
  Mat4 lambda_ = Mat4::Identity();
  Mat4 chol_ = Mat4::Identity();
  double log_det_ = 0.0;
};

// Weighted maximum likelihood via fixed-point iteration (tolerance 1e-8,
// at most 100 iterations, trace-normalized each iteration), followed by the
// dispersion floor lambda + 0.001 |lambda|^(1/4) I. Needs >= 5 samples.
Acg4 acg_fit(const std::vector<Vec4>& samples, const Eigen::VectorXd& weights);

// Factored pose proposal: position x orientation.
template <class PoseT>
struct Proposal;

template <>
struct Proposal<Pose4> {
  MvT3 position;
  VonMisesUniformMix orientation;

  double log_density(const Pose4& y) const {
    return position.log_density(y.t) + orientation.log_density(y.theta);
  }
  Pose4 sample(Rng& rng) const {
    return Pose4::make(position.sample(rng), orientation.sample(rng));
  }
};

template <>
struct Proposal<Pose6> {
  MvT3 position;
  Acg4 orientation;

  double log_density(const Pose6& y) const {
    return position.log_density(y.t) + orientation.log_density(y.q);
  }
  Pose6 sample(Rng& rng) const {
    return Pose6::make(position.sample(rng), orientation.sample(rng));
  }
};

// Initial proposal from a PnP solution: position from the translation block
// of the covariance; orientation from the yaw variance (kappa = 1/(3 s^2))
// or from the quaternion inverse-covariance block.
Proposal<Pose4> proposal_init(const PnPSolution<Pose4>& sol);
Proposal<Pose6> proposal_init(const PnPSolution<Pose6>& sol);

// Tangent-space inverse covariance of the quaternion block, rank 3 with
// q^T M q = 0.
Mat4 quat_inverse_covariance(const PnPSolution<Pose6>& sol);

Proposal<Pose4> proposal_refit(const std::vector<Pose4>& samples,
                               const Eigen::VectorXd& weights,
                               const Proposal<Pose4>& previous);
Proposal<Pose6> proposal_refit(const std::vector<Pose6>& samples,
                               const Eigen::VectorXd& weights,
                               const Proposal<Pose6>& previous);

}  // namespace propnp
