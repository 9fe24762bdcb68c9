#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stacksurv/dataset.hpp"
#include "stacksurv/draws.hpp"
#include "stacksurv/failure_models.hpp"

namespace stacksurv {

// Per-family priors: b0 ~ Cauchy(0, 1); b_j ~ N(center, sd = sqrt(z)) with
// center b0 (or 0 for the generalized Pareto row); z ~ IG(a, b), optionally
// truncated to (0, z_upper); lambda ~ log-normal or gamma.
struct PriorSpec {
  enum class LambdaKind { LogNormal, Gamma };

  bool effects_centered_at_b0 = true;
  double z_shape = 1.0;
  double z_scale = 1.0;
  double z_upper = 0.0;  // 0 means untruncated
  LambdaKind lambda_kind = LambdaKind::LogNormal;
  double lambda_a = 0.0;  // log-mean, or gamma shape
  double lambda_b = 1.0;  // log-sd, or gamma rate

  bool z_truncated() const { return z_upper > 0.0; }
};

PriorSpec prior_spec(Family family);

// How the sampler sees the study effects. NonCentered samples
// eps_j with b_j = center + sqrt(z) eps_j.
enum class Parameterization { Auto, Centered, NonCentered };

// Unconstrained parameter layout: [b0, b_1..b_J, u_z, log_lambda], where
// z = exp(u_z), or z_upper * logistic(u_z) for truncated priors.
class ParamVector {
 public:
  explicit ParamVector(int num_studies)
      : values_(Eigen::VectorXd::Zero(num_studies + 3)), num_studies_(num_studies) {}
  explicit ParamVector(Eigen::VectorXd values)
      : values_(std::move(values)), num_studies_(static_cast<int>(values_.size()) - 3) {}

  int num_studies() const { return num_studies_; }
  int size() const { return num_studies_ + 3; }
  double& b0() { return values_[0]; }
  double b0() const { return values_[0]; }
  double& b(int j) { return values_[1 + j]; }
  double b(int j) const { return values_[1 + j]; }
  double& u_z() { return values_[num_studies_ + 1]; }
  double u_z() const { return values_[num_studies_ + 1]; }
  double& log_lambda() { return values_[num_studies_ + 2]; }
  double log_lambda() const { return values_[num_studies_ + 2]; }

  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }

 private:
  Eigen::VectorXd values_;
  int num_studies_;
};

struct ValueAndGradient {
  double value;
  Eigen::VectorXd grad;
};

// Joint log-posterior of one family over one normalized dataset.
class LogPosterior {
 public:
  LogPosterior(Family family, StudyDataset data,
               Parameterization parameterization = Parameterization::Auto);

  Family family() const { return family_; }
  const StudyDataset& data() const { return data_; }
  const PriorSpec& prior() const { return prior_; }
  int num_studies() const { return static_cast<int>(data_.num_studies()); }
  int dimension() const { return num_studies() + 3; }
  bool non_centered() const { return non_centered_; }
  std::vector<std::string> param_names() const;

  // All four evaluate at the unconstrained ParamVector; values are finite or
  // -inf, never NaN.
  double log_likelihood(const ParamVector& theta) const;
  double log_prior(const ParamVector& theta) const;
  ValueAndGradient log_posterior_grad(const ParamVector& theta) const;
  double log_posterior(const ParamVector& theta) const;

  double z_of(double u_z) const;
  double u_z_of(double z) const;
  // [b0, b_1..b_J, z, lambda]
  Eigen::VectorXd to_constrained(const ParamVector& theta) const;
  ParamVector from_constrained(const Eigen::VectorXd& constrained) const;

  // log[F(t_i2) - F(t_i1)] per observation at constrained parameters.
  Eigen::VectorXd pointwise_loglik(const Eigen::VectorXd& constrained) const;
  // S x n matrix over the rows of draws.theta.
  Eigen::MatrixXd pointwise_loglik_matrix(const PosteriorDraws& draws) const;
  Eigen::MatrixXd pointwise_loglik_matrix(const Eigen::MatrixXd& constrained_draws) const;

  // Draw from the prior, returned on the unconstrained scale.
  ParamVector sample_prior(Rng& rng) const;

  // Coordinates the sampler moves in; identical to ParamVector when centered,
  // eps_j in place of b_j when non-centered. The density includes the
  // reparameterization Jacobian.
  ParamVector sampler_to_theta(const Eigen::VectorXd& x) const;
  Eigen::VectorXd theta_to_sampler(const ParamVector& theta) const;
  double sampler_log_density_grad(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const;

 private:
  double log_likelihood_impl(const ParamVector& theta, Eigen::VectorXd* grad) const;
  double log_prior_impl(const ParamVector& theta, Eigen::VectorXd* grad) const;
  double dlogz_du(double u_z) const;

  Family family_;
  StudyDataset data_;
  PriorSpec prior_;
  const FailureDistribution* dist_;
  bool non_centered_;
  double log_z_truncation_mass_ = 0.0;
};

}  // namespace stacksurv
