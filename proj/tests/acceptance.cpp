// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit when any
// criterion fails. `acceptance 3 7` runs only the listed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stacksurv/failure_models.hpp"
#include "stacksurv/loo_stacking.hpp"
#include "stacksurv/pipeline.hpp"
#include "stacksurv/posterior.hpp"
#include "stacksurv/sampler.hpp"
#include "stacksurv/simulation.hpp"
#include "stacksurv/survival_estimator.hpp"
#include "test_support.hpp"

using namespace stacksurv;
namespace st = stacksurv::testing;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<void(Outcome&)> run;
};

ModelParams random_params(Family f, Rng& rng) {
  std::uniform_real_distribution<double> loc(-2.0, 2.0);
  std::uniform_real_distribution<double> shape(-1.2, 1.2);
  const double l = loc(rng);
  return {distribution(f).positive_location() ? std::exp(l) : l, std::exp(shape(rng))};
}

void distributions(Outcome& out) {
  Rng rng(101);
  std::uniform_real_distribution<double> u(1e-4, 1.0 - 1e-4);
  std::uniform_real_distribution<double> mid(0.01, 0.99);
  double worst_round = 0.0, worst_pdf = 0.0;
  int monotone_breaks = 0;
  for (Family f : kAllFamilies) {
    for (int i = 0; i < 100; ++i) {
      const ModelParams p = random_params(f, rng);
      const double prob = u(rng);
      const double t = quantile(f, p, prob);
      worst_round = std::max(worst_round, std::abs(cdf(f, p, t) - prob));
      worst_round = std::max(worst_round, std::abs(quantile(f, p, cdf(f, p, t)) - t) / t);

      const double s = quantile(f, p, mid(rng));
      const double h = 1e-4 * s;
      // fourth-order central difference of the CDF
      const double fd = (-cdf(f, p, s + 2 * h) + 8 * cdf(f, p, s + h) - 8 * cdf(f, p, s - h) +
                         cdf(f, p, s - 2 * h)) /
                        (12 * h);
      worst_pdf = std::max(worst_pdf, std::abs(std::exp(log_pdf(f, p, s)) - fd) / fd);
    }
    for (int rep = 0; rep < 10; ++rep) {
      const ModelParams p = random_params(f, rng);
      const double lo = std::log(quantile(f, p, 1e-6));
      const double hi = std::log(quantile(f, p, 1.0 - 1e-6));
      double prev = 0.0;
      for (int g = 0; g < 1000; ++g) {
        const double v = cdf(f, p, std::exp(lo + (hi - lo) * g / 999.0));
        if (v < prev) ++monotone_breaks;
        prev = v;
      }
    }
  }
  out.detail << "worst round trip " << worst_round << ", worst density vs CDF slope " << worst_pdf
             << ", monotonicity breaks " << monotone_breaks;
  out.require(worst_round <= 1e-8, "round trip within 1e-8");
  out.require(worst_pdf <= 1e-5, "density within 1e-5 relative");
  out.require(monotone_breaks == 0, "monotone CDF");
}

void gradients(Outcome& out) {
  const StudyDataset data = normalize(st::simulate_weibull_data({}, 4, 8, 202));
  Rng rng(203);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  int points = 0, bad = 0;
  for (Family f : kAllFamilies) {
    for (Parameterization param : {Parameterization::Centered, Parameterization::NonCentered}) {
      const LogPosterior lp(f, data, param);
      for (int rep = 0; rep < 100; ++rep) {
        Eigen::VectorXd x(lp.dimension());
        for (int k = 0; k < x.size(); ++k) x[k] = normal(rng);
        x[lp.num_studies() + 2] *= 0.5;
        Eigen::VectorXd grad, scratch;
        if (!std::isfinite(lp.sampler_log_density_grad(x, grad))) continue;
        ++points;
        auto value = [&](Eigen::VectorXd y) { return lp.sampler_log_density_grad(y, scratch); };
        for (int k = 0; k < x.size(); ++k) {
          auto at = [&](double step) {
            Eigen::VectorXd y = x;
            y[k] += step;
            return value(y);
          };
          // fourth-order central differences over a ladder of steps; keep the
          // pair of neighbouring steps that agree best, since neither a large
          // step (curvature kinks, steep terms) nor a small one (rounding at
          // large |log density|) is safe everywhere
          std::vector<double> ladder;
          for (int e = 0; e < 10; ++e) {
            const double h = 0.1 * std::max(1.0, std::abs(x[k])) * std::pow(10.0, -0.5 * e);
            ladder.push_back((-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h));
          }
          double fd = ladder[0], spread = kInf;
          for (std::size_t e = 1; e < ladder.size(); ++e) {
            if (std::abs(ladder[e] - ladder[e - 1]) < spread) {
              spread = std::abs(ladder[e] - ladder[e - 1]);
              fd = ladder[e];
            }
          }
          const double err = std::abs(grad[k] - fd);
          const double tol = std::max(1e-4 * std::abs(fd), 1e-6);
          worst = std::max(worst, err / std::max(std::abs(fd), 1e-2));
          if (err > tol) ++bad;
        }
      }
    }
  }
  out.detail << points << " points over 5 families x 2 parameterizations, " << bad
             << " components outside tolerance, worst scaled error " << worst;
  out.require(points >= 5 * 2 * 100, "100 finite points per family and parameterization");
  out.require(bad == 0, "gradients within 1e-4 relative / 1e-6 absolute");
}

void sampler_calibration(Outcome& out) {
  {
    const st::GaussianTarget target(Eigen::VectorXd::Zero(5), Eigen::MatrixXd::Identity(5, 5));
    SamplerConfig cfg;
    cfg.seed = 301;
    const Eigen::MatrixXd draws = st::stack_draws(run_nuts(target, cfg));
    double worst = 0.0;
    for (int k = 0; k < 5; ++k) {
      worst = std::max(worst, std::abs(draws.col(k).mean()) / st::mcse_mean(draws, cfg.chains, k));
    }
    out.detail << "5-d mean error up to " << worst << " MCSE";
    out.require(worst < 3.0, "5-d means within 3 MCSE");
  }
  {
    Eigen::Matrix2d cov;
    cov << 4.0, 1.2, 1.2, 0.5;
    const st::GaussianTarget target(Eigen::Vector2d(1.0, -2.0), cov.inverse());
    SamplerConfig cfg;
    cfg.samples = 2500;
    cfg.seed = 302;
    const Eigen::MatrixXd draws = st::stack_draws(run_nuts(target, cfg));
    const Eigen::MatrixXd c = draws.rowwise() - draws.colwise().mean();
    const Eigen::MatrixXd emp = c.transpose() * c / (draws.rows() - 1.0);
    const double rel = (emp - cov).norm() / cov.norm();
    out.detail << "; 2-d covariance error " << rel << " on " << draws.rows() << " draws";
    out.require(draws.rows() == 10000 && rel < 0.10, "covariance within 10%");
  }
  {
    const st::WeibullTruth truth;
    int cover_b0 = 0, cover_lambda = 0, cover_both = 0;
    const int reps = 20;
    for (int r = 0; r < reps; ++r) {
      const StudyDataset data = st::simulate_weibull_data(truth, 5, 50, 3100 + r);
      const LogPosterior lp(Family::Weibull, data);
      SamplerConfig cfg;
      cfg.seed = 3200 + r;
      const PosteriorDraws d = sample_posterior(lp, cfg);
      auto covers = [&](Eigen::Index col, double value) {
        std::vector<double> v(d.theta.col(col).data(), d.theta.col(col).data() + d.theta.rows());
        std::sort(v.begin(), v.end());
        auto q = [&](double p) {
          const double h = (v.size() - 1.0) * p;
          const auto lo = static_cast<std::size_t>(h);
          return v[lo] + (h - lo) * (v[std::min(lo + 1, v.size() - 1)] - v[lo]);
        };
        return q(0.05) <= value && value <= q(0.95);
      };
      const bool b = covers(0, truth.b0);
      const bool l = covers(d.theta.cols() - 1, truth.lambda);
      cover_b0 += b;
      cover_lambda += l;
      cover_both += b && l;
    }
    out.detail << "; Weibull recovery: b0 covered " << cover_b0 << "/20, lambda " << cover_lambda
               << "/20, both " << cover_both << "/20";
    out.require(cover_b0 >= 16 && cover_lambda >= 16, "coverage >= 16 of 20");
  }
}

void loo_oracle(Outcome& out) {
  const StudyDataset data = st::simulate_weibull_data({}, 3, 5, 401);
  const std::size_t n = data.size();
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup = 1000;
  cfg.samples = 500;
  cfg.seed = 402;
  const LogPosterior full(Family::Weibull, data);
  const PosteriorDraws d = sample_posterior(full, cfg);
  const LooResult loo = psis_loo(d.loglik);

  double worst = 0.0;
  int high_k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<IntervalObservation> rest;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) rest.push_back(data.observations()[k]);
    }
    const LogPosterior lp(Family::Weibull, StudyDataset(rest));
    cfg.seed = 410 + i;
    const PosteriorDraws di = sample_posterior(lp, cfg);
    // held-out term under the leave-one-out posterior; study order is unchanged
    Eigen::VectorXd ll(di.num_draws());
    for (int s = 0; s < di.num_draws(); ++s) ll[s] = full.pointwise_loglik(di.theta.row(s).transpose())[i];
    const double m = ll.maxCoeff();
    const double exact = m + std::log((ll.array() - m).exp().mean());
    if (loo.k_hat[i] > 0.7) {
      ++high_k;
      continue;
    }
    worst = std::max(worst, std::abs(exact - loo.elpd_pointwise[i]));
  }
  out.detail << "n=" << n << ", S=" << d.num_draws() << ", worst |PSIS - exact| " << worst
             << ", k_hat > 0.7 at " << high_k << " points, max k_hat " << loo.k_hat.maxCoeff();
  out.require(d.num_draws() == 2000, "S = 2000");
  out.require(worst <= 0.1, "within 0.1 per observation");
  out.require(high_k <= 3, "at most 3 high k_hat");
}

void stacking_oracle(Outcome& out) {
  Rng rng(501);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_elpd = [&](int rows, int M) {
    Eigen::MatrixXd e(rows, M);
    for (int i = 0; i < rows; ++i) {
      const double common = normal(rng);
      for (int m = 0; m < M; ++m) e(i, m) = -1.0 + 0.5 * common + 0.8 * normal(rng);
    }
    return e;
  };
  double worst_gap = -kInf, worst_w = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd e = random_elpd(30, 2);
    const StackingWeights w = stack_matrix(e);
    double best = -kInf, best_w = 0.0, best01 = -kInf;
    for (int g = 0; g <= 10000; ++g) {
      const double a = g / 10000.0;
      const double obj = stacking_objective(e, Eigen::Vector2d(a, 1 - a));
      if (obj > best) {
        best = obj;
        best_w = a;
      }
      if (g % 100 == 0) best01 = std::max(best01, obj);
    }
    worst_gap = std::max(worst_gap, best01 - w.objective);
    worst_w = std::max(worst_w, std::abs(w.w[0] - best_w));
  }
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd e = random_elpd(40, 3);
    const StackingWeights w = stack_matrix(e);
    double best = -kInf;
    for (int a = 0; a <= 100; ++a) {
      for (int b = 0; a + b <= 100; ++b) {
        best = std::max(best, stacking_objective(e, Eigen::Vector3d(a / 100.0, b / 100.0, (100 - a - b) / 100.0)));
      }
    }
    worst_gap = std::max(worst_gap, best - w.objective);
  }
  const StackingWeights one = stack_matrix(random_elpd(25, 1));
  out.detail << "grid objective minus optimizer objective at most " << worst_gap
             << ", M=2 weight off the fine grid by " << worst_w << ", M=1 weight " << one.w[0];
  out.require(worst_gap <= 1e-6, "objective >= grid - 1e-6");
  out.require(worst_w <= 1e-3, "M=2 weight within 1e-3");
  out.require(one.w.size() == 1 && one.w[0] == 1.0, "M=1 weight exactly 1");
}

void marginal_survival(Outcome& out) {
  // posterior-looking Weibull draws around a known frailty model
  Rng rng(601);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int rows = 2000, studies = 4;
  PosteriorDraws d;
  d.family = Family::Weibull;
  d.chains = 1;
  d.samples_per_chain = rows;
  d.theta.resize(rows, studies + 3);
  for (int s = 0; s < rows; ++s) {
    const double b0 = 0.2 + 0.1 * normal(rng);
    const double z = 0.15 * std::exp(0.3 * normal(rng));
    d.theta(s, 0) = b0;
    for (int j = 0; j < studies; ++j) d.theta(s, 1 + j) = b0 + std::sqrt(z) * normal(rng);
    d.theta(s, studies + 1) = z;
    d.theta(s, studies + 2) = 1.5 * std::exp(0.1 * normal(rng));
  }
  DoseGrid grid;
  grid.scale_factor = 1.0;
  for (int g = 0; g < 50; ++g) grid.normalized.push_back(0.05 * std::pow(6.0 / 0.05, g / 49.0));
  CurveOptions opt;
  opt.effects_per_draw = 50;
  const SurvivalCurveEstimate c = population_survival({d}, Eigen::VectorXd::Ones(1), grid, opt);

  std::uniform_int_distribution<int> row(0, rows - 1);
  const int N = 1000000;
  std::vector<double> times(N);
  for (int i = 0; i < N; ++i) {
    const int s = row(rng);
    const double b = d.b0(s) + std::sqrt(d.z(s)) * normal(rng);
    times[i] = std::weibull_distribution<double>(d.lambda(s), std::exp(-(d.b0(s) + b)))(rng);
  }
  std::sort(times.begin(), times.end());
  double worst = 0.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto past = times.end() - std::upper_bound(times.begin(), times.end(), grid.normalized[g]);
    worst = std::max(worst, std::abs(c.mean_survival[g] - static_cast<double>(past) / N));
  }
  out.detail << "worst pointwise gap to 10^6 brute-force draws " << worst << " on 50 points";
  out.require(worst <= 0.005, "within 0.005");
}

void mse_reproduction(Outcome& out) {
  const SimulationPlan plan = SimulationPlan::desk_scale();
  const auto studies = {std::pair{TruthKind::IGSkewT, "ig_skewt"}, std::pair{TruthKind::WeibullIG, "weibull_ig"}};
  for (auto [kind, name] : studies) {
    MseStudyConfig cfg = plan.base;
    cfg.truth = make_truth(kind, plan.ig_shape);
    cfg.design.n_centers = 5;
    const MseStudyResult r = run_mse_study(cfg);
    out.detail << (kind == TruthKind::IGSkewT ? "" : "; ") << name << " (" << r.used << " used, "
               << r.excluded << " excluded):";
    for (const MseRatioRow& row : r.rows) {
      char buf[96];
      std::snprintf(buf, sizeof buf, " ED%02d %.3f [%.3f, %.3f]", static_cast<int>(std::lround(100 * row.y)),
                    row.ratio, row.lower, row.upper);
      out.detail << buf;
      if (kind == TruthKind::IGSkewT) {
        out.require(row.ratio < 0.9, std::string(name) + " ratio < 0.9");
      } else {
        out.require(row.ratio >= 0.7 && row.ratio <= 1.5, std::string(name) + " ratio in [0.7, 1.5]");
      }
    }
  }
}

bool curve_nonincreasing(const SurvivalCurveEstimate& c) {
  for (std::size_t g = 1; g < c.grid.size(); ++g) {
    if (c.mean_survival[g] > c.mean_survival[g - 1]) return false;
  }
  for (Eigen::Index d = 0; d < c.per_draw.rows(); ++d) {
    for (Eigen::Index g = 1; g < c.per_draw.cols(); ++g) {
      if (c.per_draw(d, g) > c.per_draw(d, g - 1)) return false;
    }
  }
  return true;
}

bool eds_ordered(const std::vector<std::optional<EdEstimate>>& eds) {
  for (std::size_t k = 1; k < eds.size(); ++k) {
    if (eds[k - 1] && eds[k] && eds[k - 1]->dose_mean > eds[k]->dose_mean) return false;
  }
  return true;
}

void pipeline_invariants(Outcome& out) {
  const RunConfig cfg = load_run_config(std::filesystem::path(STACKSURV_SOURCE_DIR) / "data" / "example_config.json");
  const StudyDataset data = load_csv(cfg.data_path);
  const AnalysisResult a = analyze(cfg, data);

  const double total = a.weights.w.sum();
  bool monotone = curve_nonincreasing(a.estimates.population);
  bool ordered = eds_ordered(a.estimates.population_eds);
  for (const auto& s : a.estimates.studies) monotone = monotone && curve_nonincreasing(s);
  for (const auto& e : a.estimates.study_eds) ordered = ordered && eds_ordered(e);
  int bracketed = 0;
  for (const auto& e : a.estimates.population_eds) bracketed += e.has_value();

  std::vector<IntervalObservation> obs = data.observations();
  for (IntervalObservation& o : obs) {
    o.t1 *= 1000.0;
    if (std::isfinite(o.t2)) o.t2 *= 1000.0;
  }
  const AnalysisResult b = analyze(cfg, StudyDataset(obs));
  double worst_scale = 0.0;
  bool same_bracketing = true;
  auto compare = [&](const std::vector<std::optional<EdEstimate>>& x, const std::vector<std::optional<EdEstimate>>& y) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      if (x[k].has_value() != y[k].has_value()) {
        same_bracketing = false;
        continue;
      }
      if (!x[k]) continue;
      for (auto [u, v] : {std::pair{x[k]->dose_mean, y[k]->dose_mean}, std::pair{x[k]->lower, y[k]->lower},
                          std::pair{x[k]->upper, y[k]->upper}}) {
        worst_scale = std::max(worst_scale, std::abs(v - 1000.0 * u) / (1000.0 * u));
      }
    }
  };
  compare(a.estimates.population_eds, b.estimates.population_eds);
  for (std::size_t j = 0; j < a.estimates.study_eds.size(); ++j) compare(a.estimates.study_eds[j], b.estimates.study_eds[j]);
  const bool same_weights = a.weights.w == b.weights.w;

  const AnalysisResult again = analyze(cfg, data);
  const bool deterministic = again.report.dump() == a.report.dump();

  out.detail << "weights sum to 1 " << (total == 1.0 ? "exactly" : "within " + std::to_string(std::abs(total - 1.0)))
             << ", curves " << (monotone ? "nonincreasing" : "NOT monotone") << ", EDs "
             << (ordered ? "ordered" : "NOT ordered") << " (" << bracketed << "/3 population EDs bracketed)"
             << ", x1000 relative ED error " << worst_scale << (same_weights ? ", identical weights" : ", weights differ")
             << ", rerun " << (deterministic ? "byte-identical" : "DIFFERS") << (a.converged ? "" : ", not converged");
  out.require(std::abs(total - 1.0) <= 1e-12, "weights sum to 1");
  out.require(monotone, "monotone curves");
  out.require(ordered && bracketed == 3, "ED01 <= ED05 <= ED10");
  out.require(same_bracketing && worst_scale <= 1e-12 && same_weights, "scale equivariance");
  out.require(deterministic, "determinism");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "distribution correctness", 10, distributions},
      {2, "gradient oracle", 60, gradients},
      {3, "sampler calibration", 15 * 60, sampler_calibration},
      {4, "PSIS-LOO oracle", 20 * 60, loo_oracle},
      {5, "stacking optimizer oracle", 60, stacking_oracle},
      {6, "marginal survival oracle", 5 * 60, marginal_survival},
      {7, "desk-scale MSE ratio reproduction", 4 * 3600, mse_reproduction},
      {8, "pipeline invariants on the bundled dataset", 30 * 60, pipeline_invariants},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome out;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << " [threw: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.require(secs <= c.budget_seconds, "runtime budget");
    if (!out.pass) ++failed;
    char head[160];
    std::snprintf(head, sizeof head, "%s criterion %d (%s, %.1f s of %.0f s): ", out.pass ? "PASS" : "FAIL", c.id,
                  c.name.c_str(), secs, c.budget_seconds);
    std::cout << head << out.detail.str() << std::endl;
  }
  std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criterion(s) FAILED" : "acceptance: all criteria passed")
            << std::endl;
  return failed ? 1 : 0;
}
