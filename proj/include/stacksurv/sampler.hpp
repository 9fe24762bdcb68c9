#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "stacksurv/draws.hpp"
#include "stacksurv/failure_models.hpp"
#include "stacksurv/posterior.hpp"

namespace stacksurv {

// Log-density with gradient on an unconstrained space.
class DensityTarget {
 public:
  virtual ~DensityTarget() = default;
  virtual int dimension() const = 0;
  // Returns -inf (gradient ignored) outside the support.
  virtual double log_density_grad(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const = 0;
};

// Sampler view of a LogPosterior (non-centered coordinates when selected).
class PosteriorTarget final : public DensityTarget {
 public:
  explicit PosteriorTarget(const LogPosterior& lp) : lp_(lp) {}
  int dimension() const override { return lp_.dimension(); }
  double log_density_grad(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const override {
    return lp_.sampler_log_density_grad(x, grad);
  }

 private:
  const LogPosterior& lp_;
};

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int samples = 1000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 1;
  // Chains are run on up to this many threads; results do not depend on it.
  int threads = 1;

  // Throws std::invalid_argument on out-of-range settings.
  void validate() const;
};

struct ChainResult {
  Eigen::MatrixXd draws;  // samples x dim, sampler coordinates
  std::vector<double> accept_stat;
  std::vector<int> tree_depth;
  std::vector<int> n_leapfrog;
  std::vector<char> divergent;
  std::vector<double> energy;
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  int divergences = 0;
  int max_depth_hits = 0;
};

// Phase-space point for one leapfrog trajectory.
struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double log_density = 0.0;
};

// One leapfrog step with a diagonal inverse metric; updates `z` in place.
void leapfrog(const DensityTarget& target, const Eigen::VectorXd& inv_metric, double step_size,
              PhasePoint& z);
double hamiltonian(const PhasePoint& z, const Eigen::VectorXd& inv_metric);

// Deterministic per-stream generator: the same (seed, stream) always yields
// the same sequence and distinct streams do not overlap in practice.
Rng make_stream(std::uint64_t seed, std::uint64_t stream);

// Runs cfg.chains independent adaptive NUTS chains. `init` returns a starting
// point for a chain (called with the chain's stream); when empty, each chain
// starts uniform in [-2, 2]^d. Up to 100 starts are tried per chain before
// std::runtime_error is thrown.
std::vector<ChainResult> run_nuts(const DensityTarget& target, const SamplerConfig& cfg,
                                  const std::function<Eigen::VectorXd(Rng&)>& init = {});

// Fits one family: NUTS in sampler coordinates, draws mapped to the
// constrained scale, pointwise log-likelihood and diagnostics attached.
PosteriorDraws sample_posterior(const LogPosterior& lp, const SamplerConfig& cfg);

}  // namespace stacksurv
