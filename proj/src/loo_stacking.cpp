#include "stacksurv/loo_stacking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace stacksurv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kHighK = 0.7;

double log_sum_exp(const Eigen::VectorXd& x) {
  const double m = x.maxCoeff();
  if (m == -kInf) return -kInf;
  return m + std::log((x.array() - m).exp().sum());
}

}  // namespace

GeneralizedParetoFit fit_gpd_pwm(std::vector<double> excesses) {
  const std::size_t n = excesses.size();
  if (n < 2) return {kNaN, kNaN};
  std::sort(excesses.begin(), excesses.end());
  double b0 = 0.0;
  double b1 = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    b0 += excesses[j];
    b1 += static_cast<double>(n - 1 - j) / static_cast<double>(n - 1) * excesses[j];
  }
  b0 /= static_cast<double>(n);
  b1 /= static_cast<double>(n);
  const double denom = b0 - 2.0 * b1;
  if (!(b0 > 0.0) || !(denom > 0.0)) return {kNaN, kNaN};
  return {2.0 - b0 / denom, 2.0 * b0 * b1 / denom};
}

double gpd_quantile(const GeneralizedParetoFit& fit, double p) {
  if (std::abs(fit.k) < 1e-12) return -fit.sigma * std::log1p(-p);
  return fit.sigma / fit.k * std::expm1(-fit.k * std::log1p(-p));
}

int psis_tail_length(int num_draws) {
  const double s = static_cast<double>(num_draws);
  return static_cast<int>(std::ceil(std::min(0.2 * s, 3.0 * std::sqrt(s))));
}

Eigen::VectorXd psis_smooth(const Eigen::VectorXd& log_ratios, double& k_hat) {
  const Eigen::Index S = log_ratios.size();
  const double max_lr = log_ratios.maxCoeff();
  Eigen::VectorXd lw = log_ratios.array() - max_lr;
  k_hat = kNaN;
  const int tail_len = psis_tail_length(static_cast<int>(S));
  if (tail_len < 5 || tail_len >= S) return lw;

  std::vector<Eigen::Index> order(S);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return lw[a] < lw[b]; });
  const Eigen::Index first_tail = S - tail_len;
  const double cutoff = lw[order[first_tail - 1]];
  if (std::abs(lw[order[S - 1]] - lw[order[first_tail]]) < 1e-300) return lw;

  const double exp_cutoff = std::exp(cutoff);
  std::vector<double> excesses(tail_len);
  for (int i = 0; i < tail_len; ++i) {
    excesses[i] = std::max(0.0, std::exp(lw[order[first_tail + i]]) - exp_cutoff);
  }
  const GeneralizedParetoFit fit = fit_gpd_pwm(excesses);
  if (!std::isfinite(fit.k) || !std::isfinite(fit.sigma)) return lw;
  k_hat = fit.k;
  for (int i = 0; i < tail_len; ++i) {
    const double p = (static_cast<double>(i) + 0.5) / tail_len;
    const double smoothed = std::log(exp_cutoff + gpd_quantile(fit, p));
    // truncate at the largest raw weight (0 after the shift)
    lw[order[first_tail + i]] = std::min(smoothed, 0.0);
  }
  return lw;
}

LooResult psis_loo(const Eigen::MatrixXd& loglik) {
  const Eigen::Index S = loglik.rows();
  const Eigen::Index n = loglik.cols();
  if (S < 2) throw std::invalid_argument("psis_loo needs at least 2 draws");
  LooResult out;
  out.elpd_pointwise.resize(n);
  out.k_hat.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd ll = loglik.col(i);
    int neg_inf = 0;
    for (Eigen::Index s = 0; s < S; ++s) {
      if (std::isnan(ll[s]) || ll[s] == kInf) {
        throw std::invalid_argument("log-likelihood matrix contains NaN or +inf");
      }
      if (ll[s] == -kInf) ++neg_inf;
    }
    if (neg_inf == S) {
      throw std::invalid_argument("observation " + std::to_string(i) +
                                  " is impossible under every draw");
    }
    if (neg_inf > 0) {
      // importance ratios are infinite; the harmonic-mean limit is zero density
      out.elpd_pointwise[i] = -kInf;
      out.k_hat[i] = kInf;
      out.high_k.push_back(static_cast<int>(i));
      out.warnings.push_back("observation " + std::to_string(i) +
                             ": zero likelihood under some draws");
      continue;
    }
    double k = kNaN;
    const Eigen::VectorXd lw = psis_smooth(-ll, k);
    out.elpd_pointwise[i] = log_sum_exp(lw + ll) - log_sum_exp(lw);
    out.k_hat[i] = k;
    if (std::isnan(k)) {
      out.warnings.push_back("observation " + std::to_string(i) +
                             ": degenerate importance-ratio tail, no smoothing applied");
    } else if (k > kHighK) {
      out.high_k.push_back(static_cast<int>(i));
      std::ostringstream ss;
      ss << "observation " << i << ": Pareto k-hat " << k << " > 0.7";
      out.warnings.push_back(ss.str());
    }
  }
  out.elpd_total = out.elpd_pointwise.sum();
  return out;
}

double stacking_objective(const Eigen::MatrixXd& elpd, const Eigen::VectorXd& w) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < elpd.rows(); ++i) {
    const double a = elpd.row(i).maxCoeff();
    if (a == -kInf) return -kInf;
    total += a + std::log((elpd.row(i).array() - a).exp().matrix().dot(w));
  }
  return total / static_cast<double>(elpd.rows());
}

StackingWeights stack_matrix(const Eigen::MatrixXd& elpd, const StackingOptions& options) {
  const Eigen::Index n = elpd.rows();
  const Eigen::Index M = elpd.cols();
  if (M == 0) throw std::invalid_argument("stacking needs at least one model");
  if (n == 0) throw std::invalid_argument("stacking needs at least one observation");

  StackingWeights out;
  out.per_model_elpd = elpd.colwise().sum().transpose();

  // rows shifted by their max; the shift adds a constant to the objective
  Eigen::VectorXd shift(n);
  Eigen::MatrixXd P(n, M);
  for (Eigen::Index i = 0; i < n; ++i) {
    shift[i] = elpd.row(i).maxCoeff();
    if (shift[i] == -kInf) {
      throw std::invalid_argument("observation " + std::to_string(i) +
                                  " has zero predictive density under every model");
    }
    P.row(i) = (elpd.row(i).array() - shift[i]).exp();
  }
  const double mean_shift = shift.mean();
  auto objective = [&](const Eigen::VectorXd& w) {
    const Eigen::VectorXd mix = P * w;
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += std::log(mix[i]);
    return mean_shift + s / static_cast<double>(n);
  };
  auto gradient = [&](const Eigen::VectorXd& w) {
    const Eigen::VectorXd mix = P * w;
    Eigen::VectorXd inv = mix.cwiseInverse();
    return Eigen::VectorXd((P.transpose() * inv) / static_cast<double>(n));
  };

  Eigen::VectorXd w = Eigen::VectorXd::Constant(M, 1.0 / static_cast<double>(M));
  if (M == 1) {
    w[0] = 1.0;
    out.w = w;
    out.objective = objective(w);
    out.objective_trace.push_back(out.objective);
    return out;
  }

  double f = objective(w);
  out.objective_trace.push_back(f);
  double eta = 1.0;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    const Eigen::VectorXd g = gradient(w);
    // KKT residual: sum_m w_m g_m = 1, so optimal weights have g_m = 1 on the
    // support and g_m <= 1 off it
    double residual = 0.0;
    for (Eigen::Index m = 0; m < M; ++m) {
      residual += std::pow(w[m] * (g[m] - 1.0), 2) + std::pow(std::max(0.0, g[m] - 1.0), 2);
    }
    if (std::sqrt(residual) < options.gradient_tolerance) break;

    const double g_max = g.maxCoeff();
    bool accepted = false;
    for (int halving = 0; halving < 80; ++halving) {
      Eigen::VectorXd w_new = w.array() * (eta * (g.array() - g_max)).exp();
      w_new /= w_new.sum();
      const double f_new = objective(w_new);
      const double predicted = g.dot(w_new - w);
      if (std::isfinite(f_new) && f_new >= f + 1e-4 * predicted && f_new >= f) {
        w = w_new;
        f = f_new;
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) break;  // no representable ascent remains
    out.objective_trace.push_back(f);
    eta = std::min(eta * 2.0, 1e8);
  }
  w = w.cwiseMax(0.0);
  w /= w.sum();
  out.w = w;
  out.objective = objective(w);
  out.iterations = it;
  return out;
}

StackingWeights stack(const std::vector<LooResult>& loos, const StackingOptions& options) {
  if (loos.empty()) throw std::invalid_argument("stacking needs at least one model");
  const Eigen::Index n = loos.front().elpd_pointwise.size();
  Eigen::MatrixXd elpd(n, static_cast<Eigen::Index>(loos.size()));
  for (std::size_t m = 0; m < loos.size(); ++m) {
    if (loos[m].elpd_pointwise.size() != n) {
      throw std::invalid_argument("LOO results cover different numbers of observations");
    }
    elpd.col(static_cast<Eigen::Index>(m)) = loos[m].elpd_pointwise;
  }
  return stack_matrix(elpd, options);
}

}  // namespace stacksurv
