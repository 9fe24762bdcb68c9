#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "stacksurv/failure_models.hpp"
#include "stacksurv/loo_stacking.hpp"

using namespace stacksurv;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double normal_logpdf(double x, double mean, double var) {
  return -0.5 * std::log(2 * M_PI * var) - 0.5 * (x - mean) * (x - mean) / var;
}

Eigen::MatrixXd random_elpd(int n, int M, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd e(n, M);
  for (int i = 0; i < n; ++i) {
    const double common = normal(rng);
    for (int m = 0; m < M; ++m) e(i, m) = -1.0 + 0.5 * common + 0.8 * normal(rng);
  }
  return e;
}

}  // namespace

TEST_CASE("PWM fit reference values") {
  // uniform excesses {1,2,3,4}: a0 = 2.5, a1 = 5/6
  const GeneralizedParetoFit fit = fit_gpd_pwm({4, 2, 3, 1});
  CHECK(fit.k == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(fit.sigma == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(std::isnan(fit_gpd_pwm({1.0}).k));
  CHECK(std::isnan(fit_gpd_pwm({0.0, 0.0, 0.0}).k));
}

TEST_CASE("PWM fit recovers a known shape") {
  Rng rng(1);
  for (double k : {-0.2, 0.0, 0.3}) {
    std::vector<double> x(100000);
    for (double& v : x) {
      const double u = uniform_open01(rng);
      v = (k == 0.0) ? -2.0 * std::log(u) : 2.0 / k * (std::pow(u, -k) - 1.0);
    }
    const GeneralizedParetoFit fit = fit_gpd_pwm(x);
    CHECK(fit.k == doctest::Approx(k).epsilon(0.03).scale(1.0));
    CHECK(fit.sigma == doctest::Approx(2.0).epsilon(0.03));
    CHECK(gpd_quantile({k, 2.0}, 0.5) ==
          doctest::Approx(k == 0.0 ? 2.0 * std::log(2.0) : 2.0 / k * (std::pow(2.0, k) - 1)));
  }
}

TEST_CASE("tail length") {
  CHECK(psis_tail_length(2000) == 135);
  CHECK(psis_tail_length(100) == 20);
  CHECK(psis_tail_length(4000) == 190);
}

TEST_CASE("smoothed weights keep order and the raw maximum") {
  Rng rng(2);
  Eigen::VectorXd lr(1000);
  for (Eigen::Index s = 0; s < lr.size(); ++s) lr[s] = 2.0 * std::log(uniform_open01(rng)) * -0.7;
  double k = 0.0;
  const Eigen::VectorXd lw = psis_smooth(lr, k);
  CHECK(std::isfinite(k));
  CHECK(lw.maxCoeff() <= 1e-15);
  std::vector<Eigen::Index> order(lr.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return lr[a] < lr[b]; });
  for (std::size_t i = 1; i < order.size(); ++i) CHECK(lw[order[i]] >= lw[order[i - 1]] - 1e-12);
}

TEST_CASE("constant column gives its value and a degenerate tail") {
  Eigen::MatrixXd ll = Eigen::MatrixXd::Constant(500, 3, -1.25);
  const LooResult r = psis_loo(ll);
  for (int i = 0; i < 3; ++i) {
    CHECK(r.elpd_pointwise[i] == doctest::Approx(-1.25).epsilon(1e-14));
    CHECK(std::isnan(r.k_hat[i]));
  }
  CHECK(r.warnings.size() == 3);
  CHECK(r.elpd_total == doctest::Approx(-3.75));
}

TEST_CASE("conjugate normal model matches analytic leave-one-out") {
  const int n = 10;
  const int S = 2000;
  const double tau2 = 100.0;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> y(n);
  for (double& v : y) v = 1.5 + normal(rng);
  double sum = 0.0;
  for (double v : y) sum += v;
  const double post_var = 1.0 / (1.0 / tau2 + n);
  const double post_mean = post_var * sum;
  Eigen::MatrixXd ll(S, n);
  for (int s = 0; s < S; ++s) {
    const double theta = post_mean + std::sqrt(post_var) * normal(rng);
    for (int i = 0; i < n; ++i) ll(s, i) = normal_logpdf(y[i], theta, 1.0);
  }
  const LooResult r = psis_loo(ll);
  for (int i = 0; i < n; ++i) {
    const double v = 1.0 / (1.0 / tau2 + n - 1);
    const double m = v * (sum - y[i]);
    CHECK(r.elpd_pointwise[i] == doctest::Approx(normal_logpdf(y[i], m, 1.0 + v)).epsilon(0.05).scale(1.0));
    CHECK(r.k_hat[i] < 0.7);
  }
  // leave-one-out never beats in-sample on aggregate
  double in_sample = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = ll.col(i).maxCoeff();
    in_sample += a + std::log((ll.col(i).array() - a).exp().mean());
  }
  CHECK(r.elpd_total <= in_sample);
}

TEST_CASE("impossible observations") {
  Eigen::MatrixXd ll = Eigen::MatrixXd::Constant(200, 2, -1.0);
  ll(5, 1) = -kInf;
  const LooResult r = psis_loo(ll);
  CHECK(r.elpd_pointwise[1] == -kInf);
  CHECK(r.k_hat[1] == kInf);
  CHECK(r.high_k == std::vector<int>{1});
  ll.col(0).setConstant(-kInf);
  CHECK_THROWS_AS(psis_loo(ll), std::invalid_argument);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(200, 1);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(psis_loo(bad), std::invalid_argument);
}

TEST_CASE("single model gets weight one exactly") {
  std::mt19937_64 rng(4);
  const StackingWeights w = stack_matrix(random_elpd(20, 1, rng));
  CHECK(w.w.size() == 1);
  CHECK(w.w[0] == 1.0);
}

TEST_CASE("identical models split evenly") {
  std::mt19937_64 rng(5);
  Eigen::MatrixXd e(25, 2);
  e.col(0) = random_elpd(25, 1, rng).col(0);
  e.col(1) = e.col(0);
  const StackingWeights w = stack_matrix(e);
  CHECK(w.w[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w.w[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("two models: matches a fine grid search") {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd e = random_elpd(30, 2, rng);
    const StackingWeights w = stack_matrix(e);
    double best = -kInf;
    double best_w = 0.0;
    for (int g = 0; g <= 10000; ++g) {
      const double a = g / 10000.0;
      const double obj = stacking_objective(e, Eigen::Vector2d(a, 1 - a));
      if (obj > best) {
        best = obj;
        best_w = a;
      }
    }
    CHECK(std::abs(w.w[0] - best_w) < 1e-3);
    CHECK(w.objective >= best - 1e-12);
  }
}

TEST_CASE("three models: at least as good as a simplex grid") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::MatrixXd e = random_elpd(40, 3, rng);
    const StackingWeights w = stack_matrix(e);
    double best = -kInf;
    for (int a = 0; a <= 100; ++a) {
      for (int b = 0; a + b <= 100; ++b) {
        best = std::max(best, stacking_objective(e, Eigen::Vector3d(a / 100.0, b / 100.0, (100 - a - b) / 100.0)));
      }
    }
    CHECK(w.objective >= best - 1e-6);
  }
}

TEST_CASE("stacking invariants") {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd e = random_elpd(30, 4, rng);
    const StackingWeights w = stack_matrix(e);
    CHECK(std::abs(w.w.sum() - 1.0) < 1e-12);
    CHECK(w.w.minCoeff() >= 0.0);
    const double best_single = (e.colwise().sum() / e.rows()).maxCoeff();
    CHECK(w.objective >= best_single - 1e-9);
    for (std::size_t t = 1; t < w.objective_trace.size(); ++t) {
      CHECK(w.objective_trace[t] >= w.objective_trace[t - 1]);
    }
    // adding a constant shifts the objective only
    const StackingWeights shifted = stack_matrix(e.array() + 3.5);
    CHECK(shifted.objective == doctest::Approx(w.objective + 3.5).epsilon(1e-10));
    CHECK((shifted.w - w.w).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(w.per_model_elpd[2] == doctest::Approx(e.col(2).sum()));
  }
}

TEST_CASE("a dominated model gets no weight") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd e(30, 2);
    e.col(0) = random_elpd(30, 1, rng).col(0);
    for (int i = 0; i < 30; ++i) e(i, 1) = e(i, 0) - (i == 0 ? 0.1 : u(rng));
    const StackingWeights w = stack_matrix(e);
    CHECK(w.w[1] <= 1e-6);
  }
}

TEST_CASE("stacking from LOO results and input errors") {
  LooResult a;
  a.elpd_pointwise = Eigen::VectorXd::Constant(4, -1.0);
  LooResult b;
  b.elpd_pointwise = Eigen::VectorXd::Constant(4, -2.0);
  const StackingWeights w = stack({a, b});
  CHECK(w.w[0] > 0.999999);
  LooResult c;
  c.elpd_pointwise = Eigen::VectorXd::Constant(3, -1.0);
  CHECK_THROWS_AS(stack({a, c}), std::invalid_argument);
  CHECK_THROWS_AS(stack({}), std::invalid_argument);
  Eigen::MatrixXd dead = Eigen::MatrixXd::Constant(3, 2, -1.0);
  dead.row(1).setConstant(-kInf);
  CHECK_THROWS_AS(stack_matrix(dead), std::invalid_argument);
}
