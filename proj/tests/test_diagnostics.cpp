#include "doctest.h"

#include <cmath>
#include <random>

#include "stacksurv/diagnostics.hpp"

using namespace stacksurv;

namespace {

ChainSeries iid_chains(int chains, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ChainSeries out;
  for (int c = 0; c < chains; ++c) {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = normal(rng);
    out.push_back(x);
  }
  return out;
}

ChainSeries ar1_chains(int chains, int n, double rho, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ChainSeries out;
  for (int c = 0; c < chains; ++c) {
    Eigen::VectorXd x(n);
    double v = normal(rng) / std::sqrt(1 - rho * rho);
    for (int i = 0; i < n; ++i) {
      v = rho * v + normal(rng);
      x[i] = v;
    }
    out.push_back(x);
  }
  return out;
}

Eigen::MatrixXd to_matrix(const ChainSeries& chains) {
  const Eigen::Index n = chains[0].size();
  Eigen::MatrixXd m(n * static_cast<Eigen::Index>(chains.size()), 1);
  for (std::size_t c = 0; c < chains.size(); ++c) m.col(0).segment(c * n, n) = chains[c];
  return m;
}

}  // namespace

TEST_CASE("independent draws: Rhat near one and ESS near the draw count") {
  const ChainSeries chains = iid_chains(4, 1000, 1);
  const double rhat = split_rhat(chains);
  CHECK(rhat > 0.99);
  CHECK(rhat < 1.01);
  CHECK(ess_bulk(chains) == doctest::Approx(4000).epsilon(0.15));
  CHECK(ess_basic(chains) == doctest::Approx(4000).epsilon(0.15));
}

TEST_CASE("AR(1) draws: ESS follows the integrated autocorrelation time") {
  const double rho = 0.9;
  const ChainSeries chains = ar1_chains(4, 5000, rho, 2);
  const double expected = 20000 * (1 - rho) / (1 + rho);
  CHECK(ess_basic(chains) == doctest::Approx(expected).epsilon(0.25));
  CHECK(ess_bulk(chains) == doctest::Approx(expected).epsilon(0.25));
}

TEST_CASE("degenerate and shifted chains") {
  ChainSeries constant(4, Eigen::VectorXd::Constant(200, 3.0));
  CHECK(std::isnan(split_rhat(constant)));
  CHECK(std::isnan(ess_bulk(constant)));

  ChainSeries shifted = iid_chains(4, 500, 3);
  shifted[2].array() += 10.0;
  CHECK(split_rhat(shifted) > 1.5);
  const ConvergenceReport report = check_convergence(to_matrix(shifted), 4, {"x"});
  CHECK_FALSE(report.pass);
  CHECK(report.rhat_available);
  CHECK_FALSE(report.messages.empty());

  const ConvergenceReport flat = check_convergence(to_matrix(constant), 4, {"c"});
  CHECK_FALSE(flat.pass);
  CHECK(std::isnan(flat.rhat[0]));
}

TEST_CASE("a trend inside one chain is caught by splitting") {
  ChainSeries chains = iid_chains(2, 1000, 4);
  for (Eigen::Index i = 0; i < 1000; ++i) chains[0][i] += 3.0 * i / 1000.0;
  CHECK(split_rhat(chains) > 1.05);
}

TEST_CASE("single chain reports Rhat unavailable") {
  const ChainSeries one = iid_chains(1, 1000, 5);
  const ConvergenceReport report = check_convergence(to_matrix(one), 1, {"x"});
  CHECK_FALSE(report.rhat_available);
  CHECK_FALSE(report.pass);
  CHECK(report.messages.front().find("unavailable") != std::string::npos);
}

TEST_CASE("well-mixed draws pass the default thresholds") {
  const ConvergenceReport report = check_convergence(to_matrix(iid_chains(4, 1000, 6)), 4, {"x"});
  CHECK(report.pass);
  CHECK(report.names == std::vector<std::string>{"x"});
  ConvergenceThresholds strict;
  strict.min_ess = 1e6;
  CHECK_FALSE(check_convergence(to_matrix(iid_chains(4, 1000, 6)), 4, {"x"}, {}, strict).pass);
}

TEST_CASE("parameter summaries") {
  Eigen::MatrixXd draws(400, 2);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 400; ++i) {
    draws(i, 0) = 5.0 + 2.0 * normal(rng);
    draws(i, 1) = normal(rng);
  }
  const auto s = summarize_parameters(draws, 2, {"a", "b"});
  REQUIRE(s.size() == 2);
  CHECK(s[0].name == "a");
  CHECK(s[0].mean == doctest::Approx(5.0).epsilon(0.05));
  CHECK(s[0].sd == doctest::Approx(2.0).epsilon(0.15));
  CHECK(s[1].rhat < 1.02);
  CHECK_THROWS_AS(chain_series(draws, 3, 0), std::invalid_argument);
}
