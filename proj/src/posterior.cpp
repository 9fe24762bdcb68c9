#include "stacksurv/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/special_functions/gamma.hpp>

namespace stacksurv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = 3.14159265358979323846;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double logistic(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Non-centered sampling pays off with few studies or thin studies.
bool prefer_non_centered(const StudyDataset& data) {
  if (data.num_studies() < 15) return true;
  const auto& n = data.n_per_study();
  return *std::min_element(n.begin(), n.end()) < 10;
}

}  // namespace

PriorSpec prior_spec(Family family) {
  PriorSpec p;
  switch (family) {
    case Family::Weibull:
      p.lambda_kind = PriorSpec::LambdaKind::LogNormal;
      p.lambda_a = 0.0;
      p.lambda_b = 0.5;  // sqrt(0.25)
      break;
    case Family::GeneralizedPareto:
      p.effects_centered_at_b0 = false;
      p.lambda_kind = PriorSpec::LambdaKind::Gamma;
      p.lambda_a = 2.0;
      p.lambda_b = 1.0;
      break;
    case Family::LogGaussian:
      p.lambda_kind = PriorSpec::LambdaKind::Gamma;
      p.lambda_a = 1.0;
      p.lambda_b = 1.0;
      break;
    case Family::LogLogistic:
    case Family::LogLaplace:
      p.z_shape = 0.1;
      p.z_scale = 0.1;
      p.z_upper = 4.0;
      p.lambda_kind = PriorSpec::LambdaKind::LogNormal;
      p.lambda_a = 0.0;
      p.lambda_b = 1.0;
      break;
  }
  return p;
}

LogPosterior::LogPosterior(Family family, StudyDataset data, Parameterization parameterization)
    : family_(family),
      data_(std::move(data)),
      prior_(prior_spec(family)),
      dist_(&distribution(family)) {
  if (data_.size() == 0) throw DataError("posterior needs at least one observation");
  switch (parameterization) {
    case Parameterization::Auto: non_centered_ = prefer_non_centered(data_); break;
    case Parameterization::Centered: non_centered_ = false; break;
    case Parameterization::NonCentered: non_centered_ = true; break;
  }
  if (prior_.z_truncated()) {
    // P(Z < upper) for Z ~ IG(a, b) equals P(G > 1/upper), G ~ Gamma(a, rate b)
    log_z_truncation_mass_ =
        std::log(boost::math::gamma_q(prior_.z_shape, prior_.z_scale / prior_.z_upper));
  }
}

std::vector<std::string> LogPosterior::param_names() const {
  std::vector<std::string> names{"b0"};
  for (const std::string& s : data_.studies()) names.push_back("b[" + s + "]");
  names.push_back("z");
  names.push_back("lambda");
  return names;
}

double LogPosterior::z_of(double u_z) const {
  if (prior_.z_truncated()) return prior_.z_upper * logistic(u_z);
  return std::exp(u_z);
}

double LogPosterior::u_z_of(double z) const {
  if (prior_.z_truncated()) return std::log(z) - std::log(prior_.z_upper - z);
  return std::log(z);
}

double LogPosterior::dlogz_du(double u_z) const {
  if (prior_.z_truncated()) return 1.0 - logistic(u_z);
  return 1.0;
}

double LogPosterior::log_likelihood_impl(const ParamVector& theta, Eigen::VectorXd* grad) const {
  const int J = num_studies();
  const double lambda = std::exp(theta.log_lambda());
  if (!(lambda > 0.0) || !std::isfinite(lambda)) return -kInf;
  const Link link = dist_->link();
  const bool positive = dist_->positive_location();

  std::vector<double> dmu(J, 0.0);
  std::vector<double> mu(J);
  for (int j = 0; j < J; ++j) {
    mu[j] = apply_link(link, theta.b0() + theta.b(j));
    if (!std::isfinite(mu[j]) || (positive && !(mu[j] > 0.0))) return -kInf;
  }

  double total = 0.0;
  double dlambda = 0.0;
  const auto& obs = data_.observations();
  const auto& idx = data_.study_index();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const int j = static_cast<int>(idx[i]);
    const ModelParams p{mu[j], lambda};
    const bool lo_zero = obs[i].t1 == 0.0;
    const bool hi_inf = obs[i].t2 == kInf;
    if (lo_zero && hi_inf) continue;
    const TailTerms lo = lo_zero ? TailTerms{} : dist_->tails(p, obs[i].t1);
    const TailTerms hi = hi_inf ? TailTerms{} : dist_->tails(p, obs[i].t2);
    const IntervalLogLik term = combine_interval(lo, hi, lo_zero, hi_inf);
    if (!(term.value > -kInf)) return -kInf;
    total += term.value;
    dmu[j] += term.d_mu;
    dlambda += term.d_lambda;
  }
  if (!std::isfinite(total)) return -kInf;

  if (grad) {
    double& g_b0 = (*grad)[0];
    for (int j = 0; j < J; ++j) {
      const double d_eta = link_slope(link, mu[j]) * dmu[j];
      (*grad)[1 + j] += d_eta;
      g_b0 += d_eta;
    }
    (*grad)[J + 2] += lambda * dlambda;
  }
  return total;
}

double LogPosterior::log_prior_impl(const ParamVector& theta, Eigen::VectorXd* grad) const {
  const int J = num_studies();
  const double b0 = theta.b0();
  double lp = -std::log(kPi) - std::log1p(b0 * b0);
  double g_b0 = -2.0 * b0 / (1.0 + b0 * b0);

  const double u = theta.u_z();
  const double z = z_of(u);
  const double log_z =
      prior_.z_truncated() ? std::log(prior_.z_upper) - softplus(-u) : u;
  if (!(z > 0.0) || !std::isfinite(z)) return -kInf;

  const double center = prior_.effects_centered_at_b0 ? b0 : 0.0;
  double dlp_dz = 0.0;
  for (int j = 0; j < J; ++j) {
    const double d = theta.b(j) - center;
    lp += -kLogSqrt2Pi - 0.5 * log_z - d * d / (2.0 * z);
    if (grad) (*grad)[1 + j] += -d / z;
    if (prior_.effects_centered_at_b0) g_b0 += d / z;
    dlp_dz += -0.5 / z + d * d / (2.0 * z * z);
  }

  const double a = prior_.z_shape;
  const double b = prior_.z_scale;
  lp += a * std::log(b) - std::lgamma(a) - (a + 1.0) * log_z - b / z - log_z_truncation_mass_;
  dlp_dz += -(a + 1.0) / z + b / (z * z);

  double g_u;
  if (prior_.z_truncated()) {
    const double sig = logistic(u);
    lp += std::log(prior_.z_upper) - softplus(-u) - softplus(u);
    g_u = dlp_dz * z * (1.0 - sig) + (1.0 - 2.0 * sig);
  } else {
    lp += u;
    g_u = dlp_dz * z + 1.0;
  }

  const double l = theta.log_lambda();
  double g_l;
  if (prior_.lambda_kind == PriorSpec::LambdaKind::LogNormal) {
    const double m = prior_.lambda_a;
    const double s = prior_.lambda_b;
    lp += -(l - m) * (l - m) / (2.0 * s * s) - std::log(s) - kLogSqrt2Pi;
    g_l = -(l - m) / (s * s);
  } else {
    const double shape = prior_.lambda_a;
    const double rate = prior_.lambda_b;
    const double lambda = std::exp(l);
    lp += shape * std::log(rate) - std::lgamma(shape) + shape * l - rate * lambda;
    g_l = shape - rate * lambda;
  }
  if (!std::isfinite(lp)) return -kInf;

  if (grad) {
    (*grad)[0] += g_b0;
    (*grad)[J + 1] += g_u;
    (*grad)[J + 2] += g_l;
  }
  return lp;
}

double LogPosterior::log_likelihood(const ParamVector& theta) const {
  return log_likelihood_impl(theta, nullptr);
}

double LogPosterior::log_prior(const ParamVector& theta) const {
  return log_prior_impl(theta, nullptr);
}

double LogPosterior::log_posterior(const ParamVector& theta) const {
  const double prior = log_prior_impl(theta, nullptr);
  if (prior == -kInf) return -kInf;
  const double ll = log_likelihood_impl(theta, nullptr);
  if (ll == -kInf) return -kInf;
  return ll + prior;
}

ValueAndGradient LogPosterior::log_posterior_grad(const ParamVector& theta) const {
  ValueAndGradient out{0.0, Eigen::VectorXd::Zero(dimension())};
  const double prior = log_prior_impl(theta, &out.grad);
  const double ll = prior == -kInf ? -kInf : log_likelihood_impl(theta, &out.grad);
  out.value = ll == -kInf ? -kInf : ll + prior;
  if (out.value == -kInf || !out.grad.allFinite()) {
    out.value = -kInf;
    out.grad.setZero();
  }
  return out;
}

Eigen::VectorXd LogPosterior::to_constrained(const ParamVector& theta) const {
  const int J = num_studies();
  Eigen::VectorXd c(J + 3);
  c[0] = theta.b0();
  for (int j = 0; j < J; ++j) c[1 + j] = theta.b(j);
  c[J + 1] = z_of(theta.u_z());
  c[J + 2] = std::exp(theta.log_lambda());
  return c;
}

ParamVector LogPosterior::from_constrained(const Eigen::VectorXd& constrained) const {
  const int J = num_studies();
  if (constrained.size() != J + 3) throw std::invalid_argument("constrained vector has wrong size");
  ParamVector theta(J);
  theta.b0() = constrained[0];
  for (int j = 0; j < J; ++j) theta.b(j) = constrained[1 + j];
  theta.u_z() = u_z_of(constrained[J + 1]);
  theta.log_lambda() = std::log(constrained[J + 2]);
  return theta;
}

Eigen::VectorXd LogPosterior::pointwise_loglik(const Eigen::VectorXd& constrained) const {
  const auto& obs = data_.observations();
  const auto& idx = data_.study_index();
  const Link link = dist_->link();
  const double lambda = constrained[num_studies() + 2];
  Eigen::VectorXd out(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double mu = apply_link(link, constrained[0] + constrained[1 + idx[i]]);
    const ModelParams p{mu, lambda};
    const bool lo_zero = obs[i].t1 == 0.0;
    const bool hi_inf = obs[i].t2 == kInf;
    if (lo_zero && hi_inf) {
      out[i] = 0.0;
      continue;
    }
    const TailTerms lo = lo_zero ? TailTerms{} : dist_->tails(p, obs[i].t1);
    const TailTerms hi = hi_inf ? TailTerms{} : dist_->tails(p, obs[i].t2);
    const double v = combine_interval(lo, hi, lo_zero, hi_inf).value;
    out[i] = std::isnan(v) ? -kInf : v;
  }
  return out;
}

Eigen::MatrixXd LogPosterior::pointwise_loglik_matrix(const Eigen::MatrixXd& constrained_draws) const {
  if (constrained_draws.rows() == 0) throw std::invalid_argument("no draws supplied");
  Eigen::MatrixXd out(constrained_draws.rows(), data_.size());
  for (Eigen::Index s = 0; s < constrained_draws.rows(); ++s) {
    out.row(s) = pointwise_loglik(constrained_draws.row(s).transpose()).transpose();
  }
  return out;
}

Eigen::MatrixXd LogPosterior::pointwise_loglik_matrix(const PosteriorDraws& draws) const {
  return pointwise_loglik_matrix(draws.theta);
}

ParamVector LogPosterior::sample_prior(Rng& rng) const {
  const int J = num_studies();
  Eigen::VectorXd c(J + 3);
  c[0] = std::tan(kPi * (uniform_open01(rng) - 0.5));
  std::gamma_distribution<double> g(prior_.z_shape, 1.0 / prior_.z_scale);
  double z = 0.0;
  for (int attempt = 0;; ++attempt) {
    z = 1.0 / g(rng);
    if (!prior_.z_truncated() || z < prior_.z_upper) break;
    if (attempt > 100000) throw std::runtime_error("truncated inverse-gamma rejection failed");
  }
  const double center = prior_.effects_centered_at_b0 ? c[0] : 0.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < J; ++j) c[1 + j] = center + std::sqrt(z) * normal(rng);
  c[J + 1] = z;
  if (prior_.lambda_kind == PriorSpec::LambdaKind::LogNormal) {
    c[J + 2] = std::exp(prior_.lambda_a + prior_.lambda_b * normal(rng));
  } else {
    std::gamma_distribution<double> lg(prior_.lambda_a, 1.0 / prior_.lambda_b);
    c[J + 2] = lg(rng);
  }
  return from_constrained(c);
}

ParamVector LogPosterior::sampler_to_theta(const Eigen::VectorXd& x) const {
  ParamVector theta(x);
  if (!non_centered_) return theta;
  const int J = num_studies();
  const double sd = std::sqrt(z_of(theta.u_z()));
  const double center = prior_.effects_centered_at_b0 ? theta.b0() : 0.0;
  for (int j = 0; j < J; ++j) theta.b(j) = center + sd * x[1 + j];
  return theta;
}

Eigen::VectorXd LogPosterior::theta_to_sampler(const ParamVector& theta) const {
  Eigen::VectorXd x = theta.values();
  if (!non_centered_) return x;
  const int J = num_studies();
  const double sd = std::sqrt(z_of(theta.u_z()));
  const double center = prior_.effects_centered_at_b0 ? theta.b0() : 0.0;
  for (int j = 0; j < J; ++j) x[1 + j] = (theta.b(j) - center) / sd;
  return x;
}

double LogPosterior::sampler_log_density_grad(const Eigen::VectorXd& x,
                                              Eigen::VectorXd& grad) const {
  if (!non_centered_) {
    ValueAndGradient vg = log_posterior_grad(ParamVector(x));
    grad = std::move(vg.grad);
    return vg.value;
  }
  const int J = num_studies();
  const ParamVector theta = sampler_to_theta(x);
  const ValueAndGradient vg = log_posterior_grad(theta);
  grad.setZero(x.size());
  if (vg.value == -kInf) return -kInf;
  const double u = theta.u_z();
  const double sd = std::sqrt(z_of(u));
  const double half_dlogz = 0.5 * dlogz_du(u);
  // b_j = center + sd * eps_j; Jacobian sd^J
  double g_b0 = vg.grad[0];
  double g_u = vg.grad[J + 1] + J * half_dlogz;
  for (int j = 0; j < J; ++j) {
    const double gb = vg.grad[1 + j];
    grad[1 + j] = gb * sd;
    if (prior_.effects_centered_at_b0) g_b0 += gb;
    g_u += gb * x[1 + j] * sd * half_dlogz;
  }
  grad[0] = g_b0;
  grad[J + 1] = g_u;
  grad[J + 2] = vg.grad[J + 2];
  const double log_jac = J * 0.5 * std::log(z_of(u));
  const double value = vg.value + log_jac;
  if (!std::isfinite(value) || !grad.allFinite()) {
    grad.setZero();
    return -kInf;
  }
  return value;
}

}  // namespace stacksurv
