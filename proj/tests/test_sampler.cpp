#include "doctest.h"

#include <cmath>
#include <limits>

#include "stacksurv/posterior.hpp"
#include "stacksurv/sampler.hpp"
#include "test_support.hpp"

using namespace stacksurv;
using stacksurv::testing::GaussianTarget;

namespace {

// x = log y with y ~ Exponential(1): log p(x) = x - e^x.
class LogExponentialTarget final : public DensityTarget {
 public:
  int dimension() const override { return 1; }
  double log_density_grad(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const override {
    grad.resize(1);
    grad[0] = 1.0 - std::exp(x[0]);
    return x[0] - std::exp(x[0]);
  }
};

class NowhereTarget final : public DensityTarget {
 public:
  int dimension() const override { return 2; }
  double log_density_grad(const Eigen::VectorXd&, Eigen::VectorXd& grad) const override {
    grad = Eigen::VectorXd::Zero(2);
    return -std::numeric_limits<double>::infinity();
  }
};

double energy_error(const DensityTarget& target, double eps, int steps) {
  PhasePoint z;
  z.q = Eigen::Vector2d(1.0, 0.5);
  z.p = Eigen::Vector2d(0.3, -0.7);
  z.log_density = target.log_density_grad(z.q, z.grad);
  const Eigen::VectorXd inv_metric = Eigen::VectorXd::Ones(2);
  const double h0 = hamiltonian(z, inv_metric);
  for (int i = 0; i < steps; ++i) leapfrog(target, inv_metric, eps, z);
  return std::abs(hamiltonian(z, inv_metric) - h0);
}

}  // namespace

TEST_CASE("config validation") {
  SamplerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.warmup = 99;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.samples = 10;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.target_accept = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.target_accept = 0.49;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.chains = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("standard Gaussian means within three Monte Carlo standard errors") {
  const GaussianTarget target(Eigen::VectorXd::Zero(5), Eigen::MatrixXd::Identity(5, 5));
  SamplerConfig cfg;
  cfg.seed = 21;
  const auto chains = run_nuts(target, cfg);
  const Eigen::MatrixXd draws = stacksurv::testing::stack_draws(chains);
  for (int k = 0; k < 5; ++k) {
    CAPTURE(k);
    CHECK(std::abs(draws.col(k).mean()) < 3.0 * stacksurv::testing::mcse_mean(draws, cfg.chains, k));
  }
  const ConvergenceReport report = check_convergence(draws, cfg.chains, {});
  CHECK(report.pass);
  for (const ChainResult& c : chains) {
    CHECK(c.divergences == 0);
    CHECK(c.step_size > 0.3);
  }
}

TEST_CASE("log-transformed exponential has mean one") {
  const LogExponentialTarget target;
  SamplerConfig cfg;
  cfg.seed = 22;
  const auto chains = run_nuts(target, cfg);
  Eigen::MatrixXd y = stacksurv::testing::stack_draws(chains).array().exp();
  CHECK(std::abs(y.col(0).mean() - 1.0) < 3.0 * stacksurv::testing::mcse_mean(y, cfg.chains, 0));
}

TEST_CASE("correlated Gaussian covariance is recovered") {
  Eigen::Matrix2d cov;
  cov << 4.0, 1.2, 1.2, 0.5;
  const GaussianTarget target(Eigen::Vector2d(1.0, -2.0), cov.inverse());
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.samples = 2500;
  cfg.seed = 23;
  const Eigen::MatrixXd draws = stacksurv::testing::stack_draws(run_nuts(target, cfg));
  REQUIRE(draws.rows() == 10000);
  const Eigen::MatrixXd centered = draws.rowwise() - draws.colwise().mean();
  const Eigen::MatrixXd emp = centered.transpose() * centered / (draws.rows() - 1.0);
  CHECK((emp - cov).norm() / cov.norm() < 0.1);
}

TEST_CASE("seeded runs are bit-identical and thread-count independent") {
  const GaussianTarget target(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  SamplerConfig cfg;
  cfg.warmup = 200;
  cfg.samples = 200;
  cfg.seed = 24;
  const Eigen::MatrixXd a = stacksurv::testing::stack_draws(run_nuts(target, cfg));
  const Eigen::MatrixXd b = stacksurv::testing::stack_draws(run_nuts(target, cfg));
  cfg.threads = 3;
  const Eigen::MatrixXd c = stacksurv::testing::stack_draws(run_nuts(target, cfg));
  CHECK(a == b);
  CHECK(a == c);
  cfg.seed = 25;
  CHECK_FALSE(a == stacksurv::testing::stack_draws(run_nuts(target, cfg)));
}

TEST_CASE("chains use distinct streams") {
  Rng a = make_stream(1, 0);
  Rng b = make_stream(1, 1);
  Rng c = make_stream(1, 0);
  const auto x = a();
  CHECK(x != b());
  CHECK(x == c());
}

TEST_CASE("leapfrog energy error is second order over a fixed trajectory") {
  Eigen::Matrix2d precision;
  precision << 1.0, 0.3, 0.3, 2.0;
  const GaussianTarget target(Eigen::Vector2d::Zero(), precision);
  std::vector<double> log_eps;
  std::vector<double> log_err;
  for (double eps : {1e-1, 3e-2, 1e-2, 3e-3, 1e-3}) {
    const int steps = static_cast<int>(std::lround(1.0 / eps));
    log_eps.push_back(std::log(eps));
    log_err.push_back(std::log(energy_error(target, eps, steps)));
  }
  const double n = static_cast<double>(log_eps.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < log_eps.size(); ++i) {
    mx += log_eps[i] / n;
    my += log_err[i] / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < log_eps.size(); ++i) {
    sxy += (log_eps[i] - mx) * (log_err[i] - my);
    sxx += (log_eps[i] - mx) * (log_eps[i] - mx);
  }
  CHECK(sxy / sxx == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("a target with no finite point fails after the retry budget") {
  const NowhereTarget target;
  SamplerConfig cfg;
  CHECK_THROWS_AS(run_nuts(target, cfg), std::runtime_error);
}

TEST_CASE("sample_posterior returns constrained draws with diagnostics") {
  const StudyDataset data = normalize(stacksurv::testing::simulate_weibull_data({}, 4, 12, 31));
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup = 300;
  cfg.samples = 300;
  cfg.seed = 32;
  for (Family f : {Family::Weibull, Family::LogLogistic}) {
    const LogPosterior lp(f, data);
    const PosteriorDraws d = sample_posterior(lp, cfg);
    CHECK(d.family == f);
    CHECK(d.num_draws() == 600);
    CHECK(d.num_studies() == 4);
    CHECK(d.loglik.rows() == 600);
    CHECK(d.loglik.cols() == static_cast<Eigen::Index>(data.size()));
    CHECK(d.param_names.size() == 7);
    CHECK(d.diagnostics.params.size() == 7);
    CHECK(d.diagnostics.divergences_per_chain.size() == 2);
    for (int s = 0; s < d.num_draws(); ++s) {
      CHECK(d.z(s) > 0.0);
      CHECK(d.lambda(s) > 0.0);
      if (lp.prior().z_truncated()) CHECK(d.z(s) < 4.0);
    }
    CHECK(d.loglik.row(17).sum() ==
          doctest::Approx(lp.log_likelihood(lp.from_constrained(d.theta.row(17).transpose()))).epsilon(1e-10));
    const PosteriorDraws again = sample_posterior(lp, cfg);
    CHECK(again.theta == d.theta);
  }
}
