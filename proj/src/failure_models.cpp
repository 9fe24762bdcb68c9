#include "stacksurv/failure_models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <boost/math/special_functions/erf.hpp>

namespace stacksurv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLogHalf = -0.69314718055994530942;
constexpr double kSqrt2 = 1.41421356237309504880;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kLogSqrtPi = 0.57236494292470008707;

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// x / expm1(x) with the removable singularity at 0 and the limit 0 at +inf.
double x_over_expm1(double x) {
  if (x == 0.0) return 1.0;
  if (x == kInf) return 0.0;
  return x / std::expm1(x);
}

// phi(z) / Phi(z), the reversed Mills ratio.
double normal_mills(double z) {
  return std::exp(-0.5 * z * z - kLogSqrt2Pi - log_std_normal_cdf(z));
}

TailTerms zero_time_tails() { return {-kInf, 0.0, 0.0, 0.0, 0.0, 0.0}; }
TailTerms infinite_time_tails() { return {0.0, -kInf, 0.0, 0.0, 0.0, 0.0}; }

// Weibull: F = 1 - exp(-(t/mu)^lambda), mu = exp(-eta).
class WeibullDistribution final : public FailureDistribution {
 public:
  Family family() const override { return Family::Weibull; }
  Link link() const override { return Link::NegExp; }
  bool positive_location() const override { return true; }

  TailTerms tails(ModelParams p, double t) const override {
    if (t <= 0.0) return zero_time_tails();
    if (t == kInf) return infinite_time_tails();
    const double log_ratio = std::log(t) - std::log(p.mu);
    const double lw = p.lambda * log_ratio;
    const double w = std::exp(lw);
    const double dlw_dmu = -p.lambda / p.mu;
    const double dlw_dlambda = log_ratio;
    TailTerms out;
    out.log_surv = -w;
    out.dlog_surv_dmu = -w * dlw_dmu;
    out.dlog_surv_dlambda = -w * dlw_dlambda;
    // 1 - e^{-w} = w (1 - w/2 + ...) once w is tiny
    out.log_cdf = lw < -30.0 ? lw + std::log1p(-0.5 * w) : log1mexp(w);
    const double factor = x_over_expm1(w);
    out.dlog_cdf_dmu = factor * dlw_dmu;
    out.dlog_cdf_dlambda = factor * dlw_dlambda;
    return out;
  }

  double log_pdf(ModelParams p, double t) const override {
    const double log_ratio = std::log(t) - std::log(p.mu);
    return std::log(p.lambda) - std::log(p.mu) + (p.lambda - 1.0) * log_ratio -
           std::exp(p.lambda * log_ratio);
  }

  double quantile(ModelParams p, double prob) const override {
    return p.mu * std::pow(-std::log1p(-prob), 1.0 / p.lambda);
  }

  double median_guess(ModelParams p) const override { return p.mu; }
};

// Generalized Pareto in the Lomax (Pareto-II) form F = 1 - (1 + t/mu)^{-lambda},
// whose density is (lambda/mu)(1 + t/mu)^{-(lambda+1)}. mu = exp(eta).
class LomaxDistribution final : public FailureDistribution {
 public:
  Family family() const override { return Family::GeneralizedPareto; }
  Link link() const override { return Link::Exp; }
  bool positive_location() const override { return true; }

  TailTerms tails(ModelParams p, double t) const override {
    if (t <= 0.0) return zero_time_tails();
    if (t == kInf) return infinite_time_tails();
    const double a = std::log1p(t / p.mu);
    const double x = p.lambda * a;  // -log S
    const double frac = t / (t + p.mu);
    TailTerms out;
    out.log_surv = -x;
    out.dlog_surv_dmu = p.lambda * frac / p.mu;
    out.dlog_surv_dlambda = -a;
    out.log_cdf = log1mexp(x);
    // dlog F = -dlog S * S / F
    const double ratio = x > 0.0 ? 1.0 / std::expm1(x) : kInf;
    out.dlog_cdf_dmu = -out.dlog_surv_dmu * ratio;
    out.dlog_cdf_dlambda = -out.dlog_surv_dlambda * ratio;
    return out;
  }

  double log_pdf(ModelParams p, double t) const override {
    return std::log(p.lambda) - std::log(p.mu) - (p.lambda + 1.0) * std::log1p(t / p.mu);
  }

  double quantile(ModelParams p, double prob) const override {
    return p.mu * std::expm1(-std::log1p(-prob) / p.lambda);
  }

  double median_guess(ModelParams p) const override { return p.mu; }
};

// Log-Gaussian: F = Phi((log t - mu) / lambda), mu = eta.
class LogGaussianDistribution final : public FailureDistribution {
 public:
  Family family() const override { return Family::LogGaussian; }
  Link link() const override { return Link::Identity; }
  bool positive_location() const override { return false; }

  TailTerms tails(ModelParams p, double t) const override {
    if (t <= 0.0) return zero_time_tails();
    if (t == kInf) return infinite_time_tails();
    const double z = (std::log(t) - p.mu) / p.lambda;
    const double dz_dmu = -1.0 / p.lambda;
    const double dz_dlambda = -z / p.lambda;
    const double m_lo = normal_mills(z);
    const double m_hi = normal_mills(-z);
    TailTerms out;
    out.log_cdf = log_std_normal_cdf(z);
    out.log_surv = log_std_normal_cdf(-z);
    out.dlog_cdf_dmu = m_lo * dz_dmu;
    out.dlog_cdf_dlambda = m_lo * dz_dlambda;
    out.dlog_surv_dmu = -m_hi * dz_dmu;
    out.dlog_surv_dlambda = -m_hi * dz_dlambda;
    return out;
  }

  double log_pdf(ModelParams p, double t) const override {
    const double u = std::log(t);
    const double z = (u - p.mu) / p.lambda;
    return -0.5 * z * z - kLogSqrt2Pi - std::log(p.lambda) - u;
  }

  double quantile(ModelParams p, double prob) const override {
    return std::exp(p.mu + p.lambda * std_normal_quantile(prob));
  }

  double median_guess(ModelParams p) const override { return std::exp(p.mu); }
};

// Log-logistic: F = 1 / (1 + (t/mu)^{-lambda}), mu = exp(-eta).
class LogLogisticDistribution final : public FailureDistribution {
 public:
  Family family() const override { return Family::LogLogistic; }
  Link link() const override { return Link::NegExp; }
  bool positive_location() const override { return true; }

  TailTerms tails(ModelParams p, double t) const override {
    if (t <= 0.0) return zero_time_tails();
    if (t == kInf) return infinite_time_tails();
    const double log_ratio = std::log(t) - std::log(p.mu);
    const double v = p.lambda * log_ratio;
    const double dv_dmu = -p.lambda / p.mu;
    const double dv_dlambda = log_ratio;
    TailTerms out;
    out.log_cdf = -softplus(-v);
    out.log_surv = -softplus(v);
    const double s = std::exp(out.log_surv);
    const double f = std::exp(out.log_cdf);
    out.dlog_cdf_dmu = s * dv_dmu;
    out.dlog_cdf_dlambda = s * dv_dlambda;
    out.dlog_surv_dmu = -f * dv_dmu;
    out.dlog_surv_dlambda = -f * dv_dlambda;
    return out;
  }

  double log_pdf(ModelParams p, double t) const override {
    const double u = std::log(t);
    const double v = p.lambda * (u - std::log(p.mu));
    return std::log(p.lambda) - u - softplus(-v) - softplus(v);
  }

  double quantile(ModelParams p, double prob) const override {
    return p.mu * std::exp((std::log(prob) - std::log1p(-prob)) / p.lambda);
  }

  double median_guess(ModelParams p) const override { return p.mu; }
};

// Log-Laplace: Laplace(mu, lambda) CDF applied to log t, mu = eta.
class LogLaplaceDistribution final : public FailureDistribution {
 public:
  Family family() const override { return Family::LogLaplace; }
  Link link() const override { return Link::Identity; }
  bool positive_location() const override { return false; }

  TailTerms tails(ModelParams p, double t) const override {
    if (t <= 0.0) return zero_time_tails();
    if (t == kInf) return infinite_time_tails();
    const double z = (std::log(t) - p.mu) / p.lambda;
    const double dz_dmu = -1.0 / p.lambda;
    const double dz_dlambda = -z / p.lambda;
    double dlog_cdf_dz;
    double dlog_surv_dz;
    TailTerms out;
    if (z < 0.0) {
      const double half_e = 0.5 * std::exp(z);
      out.log_cdf = kLogHalf + z;
      out.log_surv = std::log1p(-half_e);
      dlog_cdf_dz = 1.0;
      dlog_surv_dz = -half_e / (1.0 - half_e);
    } else {
      const double half_e = 0.5 * std::exp(-z);
      out.log_surv = kLogHalf - z;
      out.log_cdf = std::log1p(-half_e);
      dlog_surv_dz = -1.0;
      dlog_cdf_dz = half_e / (1.0 - half_e);
    }
    out.dlog_cdf_dmu = dlog_cdf_dz * dz_dmu;
    out.dlog_cdf_dlambda = dlog_cdf_dz * dz_dlambda;
    out.dlog_surv_dmu = dlog_surv_dz * dz_dmu;
    out.dlog_surv_dlambda = dlog_surv_dz * dz_dlambda;
    return out;
  }

  double log_pdf(ModelParams p, double t) const override {
    const double u = std::log(t);
    return -std::log(2.0 * p.lambda) - std::abs(u - p.mu) / p.lambda - u;
  }

  double quantile(ModelParams p, double prob) const override {
    if (prob < 0.5) return std::exp(p.mu + p.lambda * std::log(2.0 * prob));
    return std::exp(p.mu - p.lambda * std::log(2.0 * (1.0 - prob)));
  }

  double median_guess(ModelParams p) const override { return std::exp(p.mu); }
};

void require_probability(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("probability must lie in (0, 1), got " + std::to_string(p));
  }
}

void require_time(double t) {
  if (!(t >= 0.0)) throw std::domain_error("time must be nonnegative, got " + std::to_string(t));
}

}  // namespace

double FailureDistribution::median_guess(ModelParams) const { return 1.0; }

double FailureDistribution::quantile(ModelParams p, double prob) const {
  auto cdf_fn = [&](double t) {
    const TailTerms tt = tails(p, t);
    return tt.log_cdf < kLogHalf ? std::exp(tt.log_cdf) : -std::expm1(tt.log_surv);
  };
  auto pdf_fn = [&](double t) { return log_pdf(p, t); };
  return quantile_by_root_find(cdf_fn, pdf_fn, prob, median_guess(p));
}

std::string_view family_name(Family family) {
  switch (family) {
    case Family::Weibull: return "weibull";
    case Family::GeneralizedPareto: return "generalized_pareto";
    case Family::LogGaussian: return "log_gaussian";
    case Family::LogLogistic: return "log_logistic";
    case Family::LogLaplace: return "log_laplace";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  std::string key(name);
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return c == '-' ? '_' : std::tolower(c); });
  for (Family f : kAllFamilies) {
    if (key == family_name(f)) return f;
  }
  if (key == "gp" || key == "lomax" || key == "pareto") return Family::GeneralizedPareto;
  if (key == "lognormal" || key == "log_normal") return Family::LogGaussian;
  throw std::invalid_argument("unknown model family '" + std::string(name) + "'");
}

Link family_link(Family family) { return distribution(family).link(); }

double apply_link(Link link, double eta) {
  switch (link) {
    case Link::Identity: return eta;
    case Link::Exp: return std::exp(eta);
    case Link::NegExp: return std::exp(-eta);
  }
  return eta;
}

double link_slope(Link link, double mu) {
  switch (link) {
    case Link::Identity: return 1.0;
    case Link::Exp: return mu;
    case Link::NegExp: return -mu;
  }
  return 1.0;
}

const FailureDistribution& distribution(Family family) {
  static const WeibullDistribution weibull;
  static const LomaxDistribution lomax;
  static const LogGaussianDistribution log_gaussian;
  static const LogLogisticDistribution log_logistic;
  static const LogLaplaceDistribution log_laplace;
  switch (family) {
    case Family::Weibull: return weibull;
    case Family::GeneralizedPareto: return lomax;
    case Family::LogGaussian: return log_gaussian;
    case Family::LogLogistic: return log_logistic;
    case Family::LogLaplace: return log_laplace;
  }
  throw std::invalid_argument("unknown model family");
}

void validate_params(Family family, ModelParams params) {
  if (!std::isfinite(params.lambda) || params.lambda <= 0.0) {
    throw std::domain_error(std::string(family_name(family)) +
                            ": lambda must be positive and finite");
  }
  if (!std::isfinite(params.mu)) {
    throw std::domain_error(std::string(family_name(family)) + ": mu must be finite");
  }
  if (distribution(family).positive_location() && params.mu <= 0.0) {
    throw std::domain_error(std::string(family_name(family)) + ": mu must be positive");
  }
}

double cdf(Family family, ModelParams params, double t) {
  validate_params(family, params);
  require_time(t);
  const TailTerms tt = distribution(family).tails(params, t);
  return tt.log_cdf < kLogHalf ? std::exp(tt.log_cdf) : -std::expm1(tt.log_surv);
}

double survival(Family family, ModelParams params, double t) {
  validate_params(family, params);
  require_time(t);
  const TailTerms tt = distribution(family).tails(params, t);
  return tt.log_surv < kLogHalf ? std::exp(tt.log_surv) : -std::expm1(tt.log_cdf);
}

double log_pdf(Family family, ModelParams params, double t) {
  validate_params(family, params);
  if (!(t > 0.0)) throw std::domain_error("log_pdf requires t > 0");
  return distribution(family).log_pdf(params, t);
}

double quantile(Family family, ModelParams params, double p) {
  validate_params(family, params);
  require_probability(p);
  return distribution(family).quantile(params, p);
}

std::vector<double> sample(Family family, ModelParams params, Rng& rng, std::size_t n) {
  validate_params(family, params);
  const FailureDistribution& dist = distribution(family);
  std::vector<double> out(n);
  for (double& x : out) x = dist.quantile(params, uniform_open01(rng));
  return out;
}

IntervalLogLik combine_interval(const TailTerms& lo, const TailTerms& hi, bool t1_is_zero,
                                bool t2_is_inf) {
  constexpr IntervalLogLik kImpossible{-kInf, 0.0, 0.0};
  if (t1_is_zero && t2_is_inf) return {0.0, 0.0, 0.0};
  if (t1_is_zero) {
    if (hi.log_cdf == -kInf) return kImpossible;
    return {hi.log_cdf, hi.dlog_cdf_dmu, hi.dlog_cdf_dlambda};
  }
  if (t2_is_inf) {
    if (lo.log_surv == -kInf) return kImpossible;
    return {lo.log_surv, lo.dlog_surv_dmu, lo.dlog_surv_dlambda};
  }
  if (lo.log_cdf < kLogHalf) {
    // F2 - F1 = F2 (1 - F1/F2)
    const double log_r = lo.log_cdf - hi.log_cdf;
    if (!(log_r < 0.0) || hi.log_cdf == -kInf) return kImpossible;
    const double r = std::exp(log_r);
    const double one_minus_r = -std::expm1(log_r);
    return {hi.log_cdf + log1mexp(-log_r),
            (hi.dlog_cdf_dmu - r * lo.dlog_cdf_dmu) / one_minus_r,
            (hi.dlog_cdf_dlambda - r * lo.dlog_cdf_dlambda) / one_minus_r};
  }
  // S1 - S2 = S1 (1 - S2/S1), accurate when both endpoints sit in the upper tail
  const double log_r = hi.log_surv - lo.log_surv;
  if (!(log_r < 0.0) || lo.log_surv == -kInf) return kImpossible;
  const double r = std::exp(log_r);
  const double one_minus_r = -std::expm1(log_r);
  return {lo.log_surv + log1mexp(-log_r),
          (lo.dlog_surv_dmu - r * hi.dlog_surv_dmu) / one_minus_r,
          (lo.dlog_surv_dlambda - r * hi.dlog_surv_dlambda) / one_minus_r};
}

IntervalLogLik interval_loglik_grad(Family family, ModelParams params, double t1, double t2) {
  validate_params(family, params);
  if (!(t1 >= 0.0) || !(t2 > t1)) {
    throw std::domain_error("interval requires 0 <= t1 < t2");
  }
  const FailureDistribution& dist = distribution(family);
  const bool t1_zero = t1 == 0.0;
  const bool t2_inf = t2 == kInf;
  const TailTerms lo = t1_zero ? zero_time_tails() : dist.tails(params, t1);
  const TailTerms hi = t2_inf ? infinite_time_tails() : dist.tails(params, t2);
  return combine_interval(lo, hi, t1_zero, t2_inf);
}

double quantile_by_root_find(const std::function<double(double)>& cdf_fn,
                             const std::function<double(double)>& log_pdf_fn, double p,
                             double start) {
  require_probability(p);
  constexpr double kTol = 1e-12;
  if (!(start > 0.0) || !std::isfinite(start)) start = 1.0;
  double lo = std::log(start);
  double hi = lo;
  double step = 1.0;
  for (int i = 0; i < 64 && cdf_fn(std::exp(lo)) > p; ++i) {
    lo -= step;
    step *= 2.0;
  }
  step = 1.0;
  for (int i = 0; i < 64 && cdf_fn(std::exp(hi)) < p; ++i) {
    hi += step;
    step *= 2.0;
  }
  double u = 0.5 * (lo + hi);
  for (int i = 0; i < 200; ++i) {
    u = 0.5 * (lo + hi);
    const double f = cdf_fn(std::exp(u)) - p;
    if (std::abs(f) <= kTol || hi - lo < 1e-15 * std::max(1.0, std::abs(u))) return std::exp(u);
    if (f < 0.0) lo = u; else hi = u;
    if (log_pdf_fn && hi - lo < 1e-2) break;
  }
  // dF/du = f(t) t on the log scale
  for (int i = 0; i < 100; ++i) {
    const double t = std::exp(u);
    const double f = cdf_fn(t) - p;
    if (std::abs(f) <= kTol) break;
    if (f < 0.0) lo = u; else hi = u;
    const double slope = std::exp(log_pdf_fn(t) + u);
    double next = u - f / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - u) < 1e-16 * std::max(1.0, std::abs(u))) {
      u = next;
      break;
    }
    u = next;
  }
  return std::exp(u);
}

double uniform_open01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

double log1mexp(double x) {
  if (x <= 0.0) return -kInf;
  return x < 0.69314718055994530942 ? std::log(-std::expm1(-x)) : std::log1p(-std::exp(-x));
}

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

double log_std_normal_cdf(double z) {
  if (z > 0.0) return std::log1p(-0.5 * std::erfc(z / kSqrt2));
  const double x = -z / kSqrt2;
  if (x < 25.0) return std::log(0.5 * std::erfc(x));
  // erfc(x) = exp(-x^2) / (x sqrt(pi)) * (1 - 1/(2x^2) + 3/(4x^4) - ...)
  const double inv = 1.0 / (x * x);
  const double series =
      1.0 + inv * (-0.5 + inv * (0.75 + inv * (-1.875 + inv * 6.5625)));
  return -x * x - std::log(x) - kLogSqrtPi + std::log(series) + kLogHalf;
}

double std_normal_quantile(double p) {
  require_probability(p);
  return -kSqrt2 * boost::math::erfc_inv(2.0 * p);
}

}  // namespace stacksurv
