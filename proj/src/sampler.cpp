#include "stacksurv/sampler.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>

#include "stacksurv/diagnostics.hpp"

namespace stacksurv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMaxDeltaH = 1000.0;

// Dual averaging of log step size toward a target mean acceptance statistic.
class StepSizeAdaptation {
 public:
  explicit StepSizeAdaptation(double target) : target_(target) {}

  void set_mu(double mu) { mu_ = mu; }
  void restart() {
    counter_ = 0.0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  void learn(double& step_size, double accept_stat) {
    counter_ += 1.0;
    accept_stat = accept_stat > 1.0 ? 1.0 : accept_stat;
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (target_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / gamma_;
    const double x_eta = std::pow(counter_, -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    step_size = std::exp(x);
  }

  double final_step_size() const { return std::exp(x_bar_); }

 private:
  double target_;
  double mu_ = 0.0;
  double counter_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  static constexpr double gamma_ = 0.05;
  static constexpr double kappa_ = 0.75;
  static constexpr double t0_ = 10.0;
};

// Diagonal metric estimation over expanding windows: an initial fast buffer,
// doubling slow windows, and a terminal fast buffer.
class WindowedVarianceAdaptation {
 public:
  WindowedVarianceAdaptation(int num_warmup, int dim) : num_warmup_(num_warmup), dim_(dim) {
    if (init_buffer_ + base_window_ + term_buffer_ > num_warmup_) {
      init_buffer_ = static_cast<int>(0.15 * num_warmup_);
      term_buffer_ = static_cast<int>(0.1 * num_warmup_);
      base_window_ = num_warmup_ - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
    reset_estimator();
  }

  // Returns true when a window closed and `inv_metric` was updated.
  bool learn(Eigen::VectorXd& inv_metric, const Eigen::VectorXd& q) {
    const bool in_window = counter_ >= init_buffer_ && counter_ < num_warmup_ - term_buffer_ &&
                           counter_ != num_warmup_;
    if (in_window) add_sample(q);
    const bool window_end = counter_ == next_window_ && counter_ != num_warmup_;
    if (window_end) {
      compute_next_window();
      const double n = static_cast<double>(n_);
      if (n_ > 1) {
        Eigen::VectorXd var = m2_ / (n - 1.0);
        inv_metric = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
      }
      reset_estimator();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  void compute_next_window() {
    if (next_window_ == num_warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != num_warmup_ - term_buffer_ - 1) {
      const int boundary = next_window_ + 2 * window_size_;
      if (boundary >= num_warmup_ - term_buffer_) next_window_ = num_warmup_ - term_buffer_ - 1;
    }
  }

  void reset_estimator() {
    n_ = 0;
    mean_ = Eigen::VectorXd::Zero(dim_);
    m2_ = Eigen::VectorXd::Zero(dim_);
  }

  void add_sample(const Eigen::VectorXd& q) {
    ++n_;
    const Eigen::VectorXd delta = q - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += (delta.array() * (q - mean_).array()).matrix();
  }

  int num_warmup_;
  int dim_;
  int init_buffer_ = 75;
  int term_buffer_ = 50;
  int base_window_ = 25;
  int window_size_;
  int next_window_;
  int counter_ = 0;
  long n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

struct TransitionInfo {
  double accept_stat;
  int depth;
  int n_leapfrog;
  bool divergent;
  double energy;
};

// Multinomial NUTS with the generalized no-U-turn criterion, checked across
// merged subtrees and between adjacent subtrees.
class NutsKernel {
 public:
  NutsKernel(const DensityTarget& target, int max_depth, Rng& rng)
      : target_(target), max_depth_(max_depth), rng_(rng),
        inv_metric_(Eigen::VectorXd::Ones(target.dimension())) {}

  double step_size = 1.0;
  Eigen::VectorXd& inv_metric() { return inv_metric_; }
  const Eigen::VectorXd& inv_metric() const { return inv_metric_; }

  void sample_momentum(PhasePoint& z) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < z.p.size(); ++i) z.p[i] = normal(rng_) / std::sqrt(inv_metric_[i]);
  }

  // Heuristic: double or halve until a single step crosses acceptance 0.8.
  void init_step_size(const PhasePoint& start) {
    if (!(step_size > 0.0) || step_size > 1e7 || std::isnan(step_size)) return;
    PhasePoint z = start;
    sample_momentum(z);
    double h0 = hamiltonian(z, inv_metric_);
    leapfrog(target_, inv_metric_, step_size, z);
    double h = hamiltonian(z, inv_metric_);
    if (std::isnan(h)) h = kInf;
    const double log_08 = std::log(0.8);
    const int direction = (h0 - h) > log_08 ? 1 : -1;
    for (int iter = 0; iter < 200; ++iter) {
      z = start;
      sample_momentum(z);
      h0 = hamiltonian(z, inv_metric_);
      leapfrog(target_, inv_metric_, step_size, z);
      h = hamiltonian(z, inv_metric_);
      if (std::isnan(h)) h = kInf;
      const double delta = h0 - h;
      if (direction == 1 && !(delta > log_08)) break;
      if (direction == -1 && !(delta < log_08)) break;
      step_size = direction == 1 ? 2.0 * step_size : 0.5 * step_size;
      if (step_size > 1e7) throw std::runtime_error("step size diverged during initialization");
      if (step_size == 0.0) throw std::runtime_error("step size collapsed to zero");
    }
  }

  TransitionInfo transition(PhasePoint& current) {
    z_ = current;
    sample_momentum(z_);
    const double h0 = hamiltonian(z_, inv_metric_);

    PhasePoint z_fwd = z_;
    PhasePoint z_bck = z_;
    PhasePoint z_sample = z_;
    PhasePoint z_propose = z_;

    Eigen::VectorXd p_fwd_fwd = z_.p;
    Eigen::VectorXd p_sharp_fwd_fwd = inv_metric_.cwiseProduct(z_.p);
    Eigen::VectorXd p_fwd_bck = z_.p;
    Eigen::VectorXd p_sharp_fwd_bck = p_sharp_fwd_fwd;
    Eigen::VectorXd p_bck_fwd = z_.p;
    Eigen::VectorXd p_sharp_bck_fwd = p_sharp_fwd_fwd;
    Eigen::VectorXd p_bck_bck = z_.p;
    Eigen::VectorXd p_sharp_bck_bck = p_sharp_fwd_fwd;
    Eigen::VectorXd rho = z_.p;

    double log_sum_weight = 0.0;
    int n_leapfrog = 0;
    double sum_metro_prob = 0.0;
    int depth = 0;
    divergent_ = false;
    const Eigen::Index dim = z_.p.size();

    while (depth < max_depth_) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(dim);
      Eigen::VectorXd rho_bck = Eigen::VectorXd::Zero(dim);
      bool valid = false;
      double log_sum_weight_subtree = -kInf;

      if (uniform_open01(rng_) > 0.5) {
        z_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck,
                           p_fwd_fwd, h0, 1.0, n_leapfrog, log_sum_weight_subtree, sum_metro_prob);
        z_fwd = z_;
      } else {
        z_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd,
                           p_bck_bck, h0, -1.0, n_leapfrog, log_sum_weight_subtree, sum_metro_prob);
        z_bck = z_;
      }
      if (!valid) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform_open01(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      Eigen::VectorXd rho_ext = rho_bck + p_fwd_bck;
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_ext);
      rho_ext = rho_fwd + p_bck_fwd;
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_ext);
      if (!persist) break;
    }

    current = z_sample;
    TransitionInfo info;
    info.accept_stat = n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
    info.depth = depth;
    info.n_leapfrog = n_leapfrog;
    info.divergent = divergent_;
    info.energy = hamiltonian(z_sample, inv_metric_);
    return info;
  }

 private:
  static bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                        const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
  }

  bool build_tree(int depth, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg,
                  Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg,
                  Eigen::VectorXd& p_end, double h0, double sign, int& n_leapfrog,
                  double& log_sum_weight, double& sum_metro_prob) {
    if (depth == 0) {
      leapfrog(target_, inv_metric_, sign * step_size, z_);
      ++n_leapfrog;
      double h = hamiltonian(z_, inv_metric_);
      if (std::isnan(h)) h = kInf;
      if (h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = z_;
      p_sharp_beg = inv_metric_.cwiseProduct(z_.p);
      p_sharp_end = p_sharp_beg;
      rho += z_.p;
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }

    const Eigen::Index dim = z_.p.size();
    double log_sum_weight_init = -kInf;
    Eigen::VectorXd p_init_end(dim);
    Eigen::VectorXd p_sharp_init_end(dim);
    Eigen::VectorXd rho_init = Eigen::VectorXd::Zero(dim);
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
                    p_init_end, h0, sign, n_leapfrog, log_sum_weight_init, sum_metro_prob)) {
      return false;
    }

    PhasePoint z_propose_final = z_;
    double log_sum_weight_final = -kInf;
    Eigen::VectorXd p_final_beg(dim);
    Eigen::VectorXd p_sharp_final_beg(dim);
    Eigen::VectorXd rho_final = Eigen::VectorXd::Zero(dim);
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
                    p_final_beg, p_end, h0, sign, n_leapfrog, log_sum_weight_final,
                    sum_metro_prob)) {
      return false;
    }

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (uniform_open01(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = z_propose_final;
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    Eigen::VectorXd rho_ext = rho_init + p_final_beg;
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_ext);
    rho_ext = rho_final + p_init_end;
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_ext);
    return persist;
  }

  const DensityTarget& target_;
  int max_depth_;
  Rng& rng_;
  Eigen::VectorXd inv_metric_;
  PhasePoint z_;
  bool divergent_ = false;
};

PhasePoint find_initial_point(const DensityTarget& target, Rng& rng,
                              const std::function<Eigen::VectorXd(Rng&)>& init) {
  const int dim = target.dimension();
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  PhasePoint z;
  z.p = Eigen::VectorXd::Zero(dim);
  z.grad = Eigen::VectorXd::Zero(dim);
  for (int attempt = 0; attempt < 100; ++attempt) {
    if (init) {
      z.q = init(rng);
    } else {
      z.q.resize(dim);
      for (int i = 0; i < dim; ++i) z.q[i] = unif(rng);
    }
    z.log_density = target.log_density_grad(z.q, z.grad);
    if (std::isfinite(z.log_density) && z.grad.allFinite()) return z;
  }
  throw std::runtime_error("no finite initial log-density after 100 attempts");
}

ChainResult run_chain(const DensityTarget& target, const SamplerConfig& cfg, int chain,
                      const std::function<Eigen::VectorXd(Rng&)>& init) {
  Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(chain));
  const int dim = target.dimension();
  PhasePoint z = find_initial_point(target, rng, init);

  NutsKernel kernel(target, cfg.max_tree_depth, rng);
  kernel.init_step_size(z);
  StepSizeAdaptation step_adapt(cfg.target_accept);
  step_adapt.set_mu(std::log(10.0 * kernel.step_size));
  step_adapt.restart();
  WindowedVarianceAdaptation metric_adapt(cfg.warmup, dim);

  ChainResult out;
  out.draws.resize(cfg.samples, dim);
  out.accept_stat.reserve(cfg.samples);
  out.tree_depth.reserve(cfg.samples);
  out.n_leapfrog.reserve(cfg.samples);
  out.divergent.reserve(cfg.samples);
  out.energy.reserve(cfg.samples);

  for (int it = 0; it < cfg.warmup; ++it) {
    const TransitionInfo info = kernel.transition(z);
    step_adapt.learn(kernel.step_size, info.accept_stat);
    if (metric_adapt.learn(kernel.inv_metric(), z.q)) {
      kernel.init_step_size(z);
      step_adapt.set_mu(std::log(10.0 * kernel.step_size));
      step_adapt.restart();
    }
  }
  kernel.step_size = step_adapt.final_step_size();

  for (int it = 0; it < cfg.samples; ++it) {
    const TransitionInfo info = kernel.transition(z);
    out.draws.row(it) = z.q.transpose();
    out.accept_stat.push_back(info.accept_stat);
    out.tree_depth.push_back(info.depth);
    out.n_leapfrog.push_back(info.n_leapfrog);
    out.divergent.push_back(info.divergent ? 1 : 0);
    out.energy.push_back(info.energy);
    if (info.divergent) ++out.divergences;
    if (info.depth >= cfg.max_tree_depth) ++out.max_depth_hits;
  }
  out.step_size = kernel.step_size;
  out.inv_metric = kernel.inv_metric();
  return out;
}

}  // namespace

void SamplerConfig::validate() const {
  if (chains < 1) throw std::invalid_argument("sampler: chains must be >= 1");
  if (warmup < 100) throw std::invalid_argument("sampler: warmup must be >= 100");
  if (samples < 100) throw std::invalid_argument("sampler: samples must be >= 100");
  if (!(target_accept >= 0.5 && target_accept < 1.0)) {
    throw std::invalid_argument("sampler: target_accept must lie in [0.5, 1)");
  }
  if (max_tree_depth < 1) throw std::invalid_argument("sampler: max_tree_depth must be >= 1");
  if (threads < 1) throw std::invalid_argument("sampler: threads must be >= 1");
}

void leapfrog(const DensityTarget& target, const Eigen::VectorXd& inv_metric, double step_size,
              PhasePoint& z) {
  z.p += 0.5 * step_size * z.grad;
  z.q += step_size * inv_metric.cwiseProduct(z.p);
  z.log_density = target.log_density_grad(z.q, z.grad);
  if (!std::isfinite(z.log_density)) {
    z.log_density = -kInf;
    return;
  }
  z.p += 0.5 * step_size * z.grad;
}

double hamiltonian(const PhasePoint& z, const Eigen::VectorXd& inv_metric) {
  if (!(z.log_density > -kInf)) return kInf;
  return -z.log_density + 0.5 * z.p.dot(inv_metric.cwiseProduct(z.p));
}

Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x5eedu};
  return Rng(seq);
}

std::vector<ChainResult> run_nuts(const DensityTarget& target, const SamplerConfig& cfg,
                                  const std::function<Eigen::VectorXd(Rng&)>& init) {
  cfg.validate();
  std::vector<ChainResult> results(cfg.chains);
  if (cfg.threads <= 1 || cfg.chains == 1) {
    for (int c = 0; c < cfg.chains; ++c) results[c] = run_chain(target, cfg, c, init);
    return results;
  }
  std::vector<std::exception_ptr> errors(cfg.chains);
  for (int start = 0; start < cfg.chains; start += cfg.threads) {
    std::vector<std::thread> workers;
    for (int c = start; c < std::min(cfg.chains, start + cfg.threads); ++c) {
      workers.emplace_back([&, c] {
        try {
          results[c] = run_chain(target, cfg, c, init);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    }
    for (std::thread& w : workers) w.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

PosteriorDraws sample_posterior(const LogPosterior& lp, const SamplerConfig& cfg) {
  const PosteriorTarget target(lp);
  const std::vector<ChainResult> chains = run_nuts(target, cfg);

  PosteriorDraws out;
  out.family = lp.family();
  out.chains = cfg.chains;
  out.samples_per_chain = cfg.samples;
  out.param_names = lp.param_names();
  const int dim = lp.dimension();
  out.theta.resize(static_cast<Eigen::Index>(cfg.chains) * cfg.samples, dim);
  for (int c = 0; c < cfg.chains; ++c) {
    for (int s = 0; s < cfg.samples; ++s) {
      const ParamVector theta = lp.sampler_to_theta(chains[c].draws.row(s).transpose());
      out.theta.row(static_cast<Eigen::Index>(c) * cfg.samples + s) =
          lp.to_constrained(theta).transpose();
    }
  }
  out.loglik = lp.pointwise_loglik_matrix(out.theta);

  SamplerDiagnostics& diag = out.diagnostics;
  int total_divergent = 0;
  double accept_sum = 0.0;
  for (const ChainResult& ch : chains) {
    diag.divergences_per_chain.push_back(ch.divergences);
    diag.step_size_per_chain.push_back(ch.step_size);
    diag.max_depth_hits_per_chain.push_back(ch.max_depth_hits);
    total_divergent += ch.divergences;
    for (double a : ch.accept_stat) accept_sum += a;
  }
  const double total = static_cast<double>(cfg.chains) * cfg.samples;
  diag.mean_accept_stat = accept_sum / total;
  if (total_divergent > 0.1 * total) {
    diag.divergence_warning = true;
    diag.warnings.push_back(std::string(family_name(lp.family())) + ": " +
                            std::to_string(total_divergent) +
                            " divergent transitions after warmup (>10%)");
  }
  for (int c = 0; c < cfg.chains; ++c) {
    if (chains[c].max_depth_hits > 0) {
      diag.warnings.push_back(std::string(family_name(lp.family())) + ": chain " +
                              std::to_string(c) + " hit max tree depth " +
                              std::to_string(chains[c].max_depth_hits) + " times");
    }
  }
  diag.params = summarize_parameters(out.theta, cfg.chains, out.param_names);
  return out;
}

}  // namespace stacksurv
