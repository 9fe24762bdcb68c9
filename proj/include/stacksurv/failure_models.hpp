#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string_view>
#include <vector>

namespace stacksurv {

using Rng = std::mt19937_64;

enum class Family { Weibull, GeneralizedPareto, LogGaussian, LogLogistic, LogLaplace };

// Maps the linear predictor eta = b0 + b_j to the location mu.
enum class Link { Identity, Exp, NegExp };

inline constexpr std::array<Family, 5> kAllFamilies = {
    Family::Weibull, Family::GeneralizedPareto, Family::LogGaussian,
    Family::LogLogistic, Family::LogLaplace};

std::string_view family_name(Family family);
// Accepts the canonical names ("weibull", "generalized_pareto", "log_gaussian",
// "log_logistic", "log_laplace"), case-insensitive. Throws std::invalid_argument.
Family parse_family(std::string_view name);

Link family_link(Family family);
double apply_link(Link link, double eta);
// d mu / d eta evaluated at mu = apply_link(link, eta).
double link_slope(Link link, double mu);

struct ModelParams {
  double mu;
  double lambda;
};

// log F(t), log S(t) and their derivatives with respect to (mu, lambda).
struct TailTerms {
  double log_cdf;
  double log_surv;
  double dlog_cdf_dmu;
  double dlog_cdf_dlambda;
  double dlog_surv_dmu;
  double dlog_surv_dlambda;
};

struct IntervalLogLik {
  double value;
  double d_mu;
  double d_lambda;
};

// One parametric failure-time family. Implementations are stateless; the
// parameter checks live in the free functions below so that the hot path used
// by the posterior can skip them.
class FailureDistribution {
 public:
  virtual ~FailureDistribution() = default;

  virtual Family family() const = 0;
  virtual Link link() const = 0;
  // True when mu enters as a ratio t / mu and must be positive.
  virtual bool positive_location() const = 0;

  // Defined for t in [0, inf]; t = 0 and t = inf give the exact limits.
  virtual TailTerms tails(ModelParams p, double t) const = 0;
  virtual double log_pdf(ModelParams p, double t) const = 0;
  // Default is the bracketed root find; families override with closed forms.
  virtual double quantile(ModelParams p, double prob) const;
  virtual double median_guess(ModelParams p) const;
};

const FailureDistribution& distribution(Family family);

// Throws std::domain_error on lambda <= 0, non-finite values, or mu <= 0 for
// ratio-location families.
void validate_params(Family family, ModelParams params);

double cdf(Family family, ModelParams params, double t);
double survival(Family family, ModelParams params, double t);
double log_pdf(Family family, ModelParams params, double t);
double quantile(Family family, ModelParams params, double p);
std::vector<double> sample(Family family, ModelParams params, Rng& rng, std::size_t n);

// log[F(t2) - F(t1)] with F(0) = 0 and F(inf) = 1, plus parameter gradient.
// Returns {-inf, 0, 0} when the interval carries no probability numerically.
IntervalLogLik interval_loglik_grad(Family family, ModelParams params, double t1, double t2);

// Combines the endpoint terms. t1_is_zero / t2_is_inf select the one-sided forms.
IntervalLogLik combine_interval(const TailTerms& lo, const TailTerms& hi, bool t1_is_zero,
                                bool t2_is_inf);

// Inverts a continuous CDF on (0, inf): geometric bracket expansion on log t
// from `start`, bisection, then safeguarded Newton when a log-density is given.
double quantile_by_root_find(const std::function<double(double)>& cdf_fn,
                             const std::function<double(double)>& log_pdf_fn, double p,
                             double start);

// Uniform on the open interval (0, 1).
double uniform_open01(Rng& rng);

// Numerically careful helpers shared with other modules.
double log1mexp(double x);  // log(1 - exp(-x)) for x >= 0
double log_sum_exp(double a, double b);
double log_std_normal_cdf(double z);
double std_normal_quantile(double p);

}  // namespace stacksurv
