#include "stacksurv/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "stacksurv/failure_models.hpp"

namespace stacksurv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ChainSeries split_chains(const ChainSeries& chains) {
  ChainSeries out;
  for (const Eigen::VectorXd& c : chains) {
    const Eigen::Index half = c.size() / 2;
    if (half < 2) continue;
    out.push_back(c.head(half));
    out.push_back(c.tail(half));
  }
  return out;
}

ChainSeries rank_normalize(const ChainSeries& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  std::size_t total = 0;
  for (const Eigen::VectorXd& c : chains) total += static_cast<std::size_t>(c.size());
  pooled.reserve(total);
  std::size_t k = 0;
  for (const Eigen::VectorXd& c : chains) {
    for (Eigen::Index i = 0; i < c.size(); ++i) pooled.emplace_back(c[i], k++);
  }
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> ranks(total);
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j + 1 < total && pooled[j + 1].first == pooled[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t r = i; r <= j; ++r) ranks[pooled[r].second] = avg;
    i = j + 1;
  }
  ChainSeries out;
  k = 0;
  const double n = static_cast<double>(total);
  for (const Eigen::VectorXd& c : chains) {
    Eigen::VectorXd z(c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      z[i] = std_normal_quantile((ranks[k++] - 0.375) / (n + 0.25));
    }
    out.push_back(std::move(z));
  }
  return out;
}

double rhat_basic(const ChainSeries& chains) {
  const std::size_t m = chains.size();
  if (m < 2) return kNaN;
  const double n = static_cast<double>(chains[0].size());
  Eigen::VectorXd means(m);
  Eigen::VectorXd vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = chains[c].mean();
    vars[c] = (chains[c].array() - means[c]).square().sum() / (n - 1.0);
  }
  const double w = vars.mean();
  const double b_over_n = (means.array() - means.mean()).square().sum() / (m - 1.0);
  if (!(w > 0.0) || !std::isfinite(w)) return kNaN;
  return std::sqrt(((n - 1.0) / n * w + b_over_n) / w);
}

double ess_impl(const ChainSeries& chains) {
  const std::size_t m = chains.size();
  if (m == 0) return kNaN;
  const Eigen::Index n = chains[0].size();
  if (n < 4) return kNaN;
  std::vector<Eigen::VectorXd> centered;
  Eigen::VectorXd means(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = chains[c].mean();
    centered.push_back(chains[c].array() - means[c]);
  }
  std::vector<double> acov_mean;
  auto acov = [&](Eigen::Index lag) {
    while (static_cast<Eigen::Index>(acov_mean.size()) <= lag) {
      const Eigen::Index t = static_cast<Eigen::Index>(acov_mean.size());
      double sum = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        sum += centered[c].head(n - t).dot(centered[c].tail(n - t)) / static_cast<double>(n);
      }
      acov_mean.push_back(sum / static_cast<double>(m));
    }
    return acov_mean[lag];
  };
  const double dn = static_cast<double>(n);
  const double mean_var = acov(0) * dn / (dn - 1.0);
  double var_plus = mean_var * (dn - 1.0) / dn;
  if (m > 1) var_plus += (means.array() - means.mean()).square().sum() / (m - 1.0);
  if (!(var_plus > 0.0) || !std::isfinite(var_plus)) return kNaN;

  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - acov(1)) / var_plus;
  rho[1] = rho_odd;
  Eigen::Index t = 1;
  while (t < n - 5 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - acov(t + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - acov(t + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[t + 1] = rho_even;
      rho[t + 2] = rho_odd;
    }
    t += 2;
  }
  const Eigen::Index max_t = t;
  if (rho_even > 0.0) rho[max_t + 1] = rho_even;
  // initial monotone sequence
  for (Eigen::Index s = 1; s <= max_t - 3; s += 2) {
    if (rho[s + 1] + rho[s + 2] > rho[s - 1] + rho[s]) {
      rho[s + 1] = 0.5 * (rho[s - 1] + rho[s]);
      rho[s + 2] = rho[s + 1];
    }
  }
  double tau = -1.0;
  for (Eigen::Index s = 0; s <= max_t; ++s) tau += 2.0 * rho[s];
  tau += rho[max_t + 1];
  const double total = static_cast<double>(m) * dn;
  const double ess = total / tau;
  return std::min(ess, total * std::log10(total));
}

}  // namespace

double split_rhat(const ChainSeries& chains) {
  const ChainSeries split = split_chains(chains);
  if (split.size() < 2) return kNaN;
  return rhat_basic(rank_normalize(split));
}

double ess_bulk(const ChainSeries& chains) {
  const ChainSeries split = split_chains(chains);
  if (split.empty()) return kNaN;
  return ess_impl(rank_normalize(split));
}

double ess_basic(const ChainSeries& chains) { return ess_impl(split_chains(chains)); }

ChainSeries chain_series(const Eigen::MatrixXd& draws, int chains, Eigen::Index col) {
  if (chains < 1 || draws.rows() % chains != 0) {
    throw std::invalid_argument("draw matrix rows are not a multiple of the chain count");
  }
  const Eigen::Index n = draws.rows() / chains;
  ChainSeries out;
  for (int c = 0; c < chains; ++c) out.push_back(draws.col(col).segment(c * n, n));
  return out;
}

std::vector<ParameterSummary> summarize_parameters(const Eigen::MatrixXd& draws, int chains,
                                                   const std::vector<std::string>& names) {
  std::vector<ParameterSummary> out;
  for (Eigen::Index k = 0; k < draws.cols(); ++k) {
    ParameterSummary s;
    s.name = k < static_cast<Eigen::Index>(names.size()) ? names[k] : "p" + std::to_string(k);
    const Eigen::VectorXd col = draws.col(k);
    s.mean = col.mean();
    s.sd = col.size() > 1 ? std::sqrt((col.array() - s.mean).square().sum() / (col.size() - 1.0))
                          : 0.0;
    const ChainSeries series = chain_series(draws, chains, k);
    s.rhat = chains >= 2 ? split_rhat(series) : kNaN;
    s.ess_bulk = ess_bulk(series);
    out.push_back(std::move(s));
  }
  return out;
}

ConvergenceReport check_convergence(const Eigen::MatrixXd& draws, int chains,
                                    const std::vector<std::string>& names,
                                    const std::vector<int>& divergences_per_chain,
                                    const ConvergenceThresholds& thresholds) {
  ConvergenceReport report;
  report.divergences_per_chain = divergences_per_chain;
  report.rhat_available = chains >= 2;
  if (!report.rhat_available) {
    report.messages.push_back("Rhat unavailable: fewer than 2 chains");
  }
  bool pass = report.rhat_available;
  for (Eigen::Index k = 0; k < draws.cols(); ++k) {
    const std::string name =
        k < static_cast<Eigen::Index>(names.size()) ? names[k] : "p" + std::to_string(k);
    const ChainSeries series = chain_series(draws, chains, k);
    const double rhat = report.rhat_available ? split_rhat(series) : kNaN;
    const double ess = ess_bulk(series);
    report.names.push_back(name);
    report.rhat.push_back(rhat);
    report.ess_bulk.push_back(ess);
    if (report.rhat_available) {
      if (std::isnan(rhat)) {
        report.messages.push_back(name + ": Rhat is NaN (zero variance)");
        pass = false;
      } else if (!(rhat < thresholds.max_rhat)) {
        std::ostringstream ss;
        ss << name << ": Rhat " << rhat << " >= " << thresholds.max_rhat;
        report.messages.push_back(ss.str());
        pass = false;
      }
    }
    if (!(ess > thresholds.min_ess)) {
      std::ostringstream ss;
      ss << name << ": bulk ESS " << ess << " <= " << thresholds.min_ess;
      report.messages.push_back(ss.str());
      pass = false;
    }
  }
  report.pass = pass;
  return report;
}

ConvergenceReport check_convergence(const PosteriorDraws& draws,
                                    const ConvergenceThresholds& thresholds) {
  return check_convergence(draws.theta, draws.chains, draws.param_names,
                           draws.diagnostics.divergences_per_chain, thresholds);
}

}  // namespace stacksurv
