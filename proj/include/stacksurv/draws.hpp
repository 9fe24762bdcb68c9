#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stacksurv/failure_models.hpp"

namespace stacksurv {

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double rhat = 0.0;      // NaN when unavailable
  double ess_bulk = 0.0;  // NaN when unavailable
};

struct SamplerDiagnostics {
  std::vector<ParameterSummary> params;
  std::vector<int> divergences_per_chain;
  std::vector<double> step_size_per_chain;
  std::vector<int> max_depth_hits_per_chain;
  double mean_accept_stat = 0.0;
  bool divergence_warning = false;  // > 10% divergent transitions after warmup
  std::vector<std::string> warnings;
};

// Post-warmup draws of one model. Rows are chain-major: row c * samples + s.
// theta columns are b0, b_1..b_J, z, lambda on the constrained scale.
struct PosteriorDraws {
  Family family = Family::Weibull;
  int chains = 0;
  int samples_per_chain = 0;
  std::vector<std::string> param_names;
  Eigen::MatrixXd theta;
  Eigen::MatrixXd loglik;  // S x n pointwise interval log-likelihood
  SamplerDiagnostics diagnostics;

  int num_draws() const { return static_cast<int>(theta.rows()); }
  int num_studies() const { return static_cast<int>(theta.cols()) - 3; }
  double b0(int s) const { return theta(s, 0); }
  double b(int s, int j) const { return theta(s, 1 + j); }
  double z(int s) const { return theta(s, theta.cols() - 2); }
  double lambda(int s) const { return theta(s, theta.cols() - 1); }
};

}  // namespace stacksurv
