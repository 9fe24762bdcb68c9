#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace stacksurv {

// Generalized Pareto fit to tail excesses, F(x) = 1 - (1 + k x / sigma)^{-1/k}.
struct GeneralizedParetoFit {
  double k;
  double sigma;
};

// Probability-weighted-moment estimator (Hosking & Wallis). `excesses` must be
// nonnegative; they are sorted internally. k < 1 always.
GeneralizedParetoFit fit_gpd_pwm(std::vector<double> excesses);
double gpd_quantile(const GeneralizedParetoFit& fit, double p);

struct LooResult {
  Eigen::VectorXd elpd_pointwise;
  Eigen::VectorXd k_hat;  // NaN where the tail fit is degenerate
  double elpd_total = 0.0;
  std::vector<int> high_k;  // observations with k_hat > 0.7
  std::vector<std::string> warnings;
};

// Number of draws smoothed in the upper tail of the importance ratios.
int psis_tail_length(int num_draws);

// Smoothed log importance weights for one observation (unnormalized, on the
// scale of the input log ratios). Sets `k_hat` (NaN if degenerate).
Eigen::VectorXd psis_smooth(const Eigen::VectorXd& log_ratios, double& k_hat);

// PSIS-LOO from an S x n pointwise log-likelihood matrix. Throws
// std::invalid_argument when a column is -inf for every draw.
LooResult psis_loo(const Eigen::MatrixXd& loglik);

struct StackingWeights {
  Eigen::VectorXd w;
  double objective = 0.0;  // mean log score at w
  Eigen::VectorXd per_model_elpd;
  int iterations = 0;
  std::vector<double> objective_trace;
};

struct StackingOptions {
  double gradient_tolerance = 1e-10;
  int max_iterations = 100000;
};

// Mean log score (1/n) sum_i log sum_m w_m exp(elpd[i, m]) for an n x M matrix.
double stacking_objective(const Eigen::MatrixXd& elpd, const Eigen::VectorXd& w);

// Maximizes the stacking objective over the simplex by exponentiated
// gradient with step-size backtracking, starting from uniform weights.
StackingWeights stack(const std::vector<LooResult>& loos, const StackingOptions& options = {});
StackingWeights stack_matrix(const Eigen::MatrixXd& elpd, const StackingOptions& options = {});

}  // namespace stacksurv
