#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stacksurv/draws.hpp"

namespace stacksurv {

// Each element is one chain's draws of a scalar quantity; all chains must
// have the same length.
using ChainSeries = std::vector<Eigen::VectorXd>;

// Rank-normalized split-Rhat. NaN when the draws have zero variance or fewer
// than 2 split halves are available.
double split_rhat(const ChainSeries& chains);
// Bulk effective sample size (rank-normalized, split chains, Geyer's initial
// monotone sequence). NaN for zero-variance draws.
double ess_bulk(const ChainSeries& chains);
// Plain (non-rank) ESS of the draws as given; used for Monte Carlo standard errors.
double ess_basic(const ChainSeries& chains);

// Splits column `col` of a chain-major draw matrix into per-chain series.
ChainSeries chain_series(const Eigen::MatrixXd& draws, int chains, Eigen::Index col);

std::vector<ParameterSummary> summarize_parameters(const Eigen::MatrixXd& draws, int chains,
                                                   const std::vector<std::string>& names);

struct ConvergenceThresholds {
  double max_rhat = 1.01;
  double min_ess = 400.0;
};

struct ConvergenceReport {
  bool rhat_available = false;
  std::vector<std::string> names;
  std::vector<double> rhat;
  std::vector<double> ess_bulk;
  std::vector<int> divergences_per_chain;
  bool pass = false;
  std::vector<std::string> messages;
};

ConvergenceReport check_convergence(const Eigen::MatrixXd& draws, int chains,
                                    const std::vector<std::string>& names,
                                    const std::vector<int>& divergences_per_chain = {},
                                    const ConvergenceThresholds& thresholds = {});
ConvergenceReport check_convergence(const PosteriorDraws& draws,
                                    const ConvergenceThresholds& thresholds = {});

}  // namespace stacksurv
