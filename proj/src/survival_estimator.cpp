#include "stacksurv/survival_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "stacksurv/monotone_spline.hpp"
#include "stacksurv/posterior.hpp"
#include "stacksurv/sampler.hpp"

namespace stacksurv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double survival_at(const FailureDistribution& dist, double mu, double lambda, double t) {
  if (t <= 0.0) return 1.0;
  const double s = std::exp(dist.tails({mu, lambda}, t).log_surv);
  if (std::isnan(s)) return 0.0;
  return std::clamp(s, 0.0, 1.0);
}

void check_inputs(const std::vector<PosteriorDraws>& models, const Eigen::VectorXd& w) {
  if (models.empty()) throw std::invalid_argument("no fitted models");
  if (w.size() != static_cast<Eigen::Index>(models.size())) {
    throw std::invalid_argument("weight vector does not match the number of models");
  }
  for (const PosteriorDraws& d : models) {
    if (d.num_draws() == 0) throw std::invalid_argument("model has no posterior draws");
    if (d.num_studies() != models.front().num_studies()) {
      throw std::invalid_argument("models were fit to different study sets");
    }
  }
}

double new_effect_center(Family family, double b0) {
  return prior_spec(family).effects_centered_at_b0 ? b0 : 0.0;
}

void make_nonincreasing(double* row, std::size_t n, std::size_t stride) {
  double running = 1.0;
  for (std::size_t g = 0; g < n; ++g) {
    double& v = row[g * stride];
    v = std::clamp(v, 0.0, running);
    running = v;
  }
}

// Type-7 sample quantile of sorted values.
double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::size_t pick_index(Rng& rng, std::size_t n) {
  const auto k = static_cast<std::size_t>(uniform_open01(rng) * static_cast<double>(n));
  return std::min(k, n - 1);
}

// Per-model matrices of per-draw curves (draws x grid) are combined into the
// stacked mean and composite-draw bands.
SurvivalCurveEstimate assemble(const std::vector<Eigen::MatrixXd>& curves,
                               const Eigen::VectorXd& w, const DoseGrid& grid,
                               const CurveOptions& options) {
  if (!(options.level > 0.0 && options.level < 1.0)) {
    throw std::invalid_argument("credible level must lie in (0, 1)");
  }
  const std::size_t G = grid.size();
  const std::size_t M = curves.size();
  SurvivalCurveEstimate out;
  out.grid = grid;
  out.level = options.level;

  Eigen::VectorXd weights = w.cwiseMax(0.0);
  if (!(weights.sum() > 0.0)) throw std::invalid_argument("stacking weights are all zero");
  weights /= weights.sum();

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(G));
  for (std::size_t m = 0; m < M; ++m) {
    if (weights[m] == 0.0) continue;
    mean += weights[m] * curves[m].colwise().mean().transpose();
  }
  out.mean_survival.assign(mean.data(), mean.data() + G);
  make_nonincreasing(out.mean_survival.data(), G, 1);

  int D = options.composite_draws;
  if (D <= 0) {
    for (const Eigen::MatrixXd& c : curves) D = std::max(D, static_cast<int>(c.rows()));
  }
  Rng rng = make_stream(options.seed, 0x636f6d70ULL);
  std::vector<double> cumulative(M);
  double acc = 0.0;
  for (std::size_t m = 0; m < M; ++m) cumulative[m] = (acc += weights[m]);
  out.per_draw.resize(D, static_cast<Eigen::Index>(G));
  out.draw_model.resize(D);
  for (int d = 0; d < D; ++d) {
    const double u = uniform_open01(rng);
    std::size_t m = 0;
    while (m + 1 < M && (u > cumulative[m] || weights[m] == 0.0)) ++m;
    const std::size_t s = pick_index(rng, static_cast<std::size_t>(curves[m].rows()));
    out.per_draw.row(d) = curves[m].row(static_cast<Eigen::Index>(s));
    out.draw_model[d] = static_cast<int>(m);
  }

  const double alpha = 1.0 - options.level;
  out.lower.resize(G);
  out.upper.resize(G);
  std::vector<double> column(D);
  for (std::size_t g = 0; g < G; ++g) {
    for (int d = 0; d < D; ++d) column[d] = out.per_draw(d, static_cast<Eigen::Index>(g));
    std::sort(column.begin(), column.end());
    out.lower[g] = std::min(sorted_quantile(column, 0.5 * alpha), out.mean_survival[g]);
    out.upper[g] = std::max(sorted_quantile(column, 1.0 - 0.5 * alpha), out.mean_survival[g]);
  }
  return out;
}

void check_grid(const DoseGrid& grid) {
  if (grid.normalized.empty()) throw std::invalid_argument("dose grid is empty");
  if (!(grid.scale_factor > 0.0) || !std::isfinite(grid.scale_factor)) {
    throw std::invalid_argument("dose grid scale factor must be positive");
  }
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double v = grid.normalized[g];
    if (!(v >= 0.0) || !std::isfinite(v) || (g > 0 && !(v > grid.normalized[g - 1]))) {
      throw std::invalid_argument("dose grid must be finite, nonnegative and strictly increasing");
    }
  }
}

}  // namespace

std::vector<double> DoseGrid::original() const {
  std::vector<double> out(normalized.size());
  for (std::size_t g = 0; g < normalized.size(); ++g) out[g] = normalized[g] * scale_factor;
  return out;
}

DoseGrid grid_from_original(const std::vector<double>& doses, double scale_factor) {
  DoseGrid grid;
  grid.scale_factor = scale_factor;
  grid.normalized.reserve(doses.size());
  for (double d : doses) grid.normalized.push_back(d / scale_factor);
  check_grid(grid);
  return grid;
}

DoseGrid make_dose_grid(const std::vector<PosteriorDraws>& models, const Eigen::VectorXd& w,
                        double scale_factor, const GridOptions& options) {
  check_inputs(models, w);
  if (options.points < 2) throw std::invalid_argument("grid needs at least 2 points");
  if (!(options.lower_prob > 0.0 && options.lower_prob < options.upper_prob &&
        options.upper_prob < 1.0)) {
    throw std::invalid_argument("grid probabilities must satisfy 0 < lower < upper < 1");
  }

  // Each mixture component: (weight, family, mu, lambda).
  struct Component {
    double weight;
    const FailureDistribution* dist;
    double mu;
    double lambda;
  };
  std::vector<Component> components;
  const int J = models.front().num_studies();
  constexpr int kNewNodes = 5;
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (!(w[m] > 0.0)) continue;
    const PosteriorDraws& d = models[m];
    const FailureDistribution& dist = distribution(d.family);
    const int S = d.num_draws();
    const int used = std::min(S, std::max(1, options.max_draws_per_model));
    const double per = w[m] / static_cast<double>(used * (J + kNewNodes));
    for (int k = 0; k < used; ++k) {
      const int s = static_cast<int>(static_cast<long long>(k) * S / used);
      const double b0 = d.b0(s);
      for (int j = 0; j < J; ++j) {
        components.push_back({per, &dist, apply_link(dist.link(), b0 + d.b(s, j)), d.lambda(s)});
      }
      const double center = new_effect_center(d.family, b0);
      for (int q = 0; q < kNewNodes; ++q) {
        const double e = std_normal_quantile((q + 0.5) / kNewNodes);
        components.push_back(
            {per, &dist, apply_link(dist.link(), b0 + center + std::sqrt(d.z(s)) * e), d.lambda(s)});
      }
    }
  }
  if (components.empty()) throw std::invalid_argument("stacking weights are all zero");
  double total = 0.0;
  for (const Component& c : components) total += c.weight;

  auto pooled_cdf = [&](double t) {
    double f = 0.0;
    for (const Component& c : components) f += c.weight * (1.0 - survival_at(*c.dist, c.mu, c.lambda, t));
    return f / total;
  };
  const double lo = quantile_by_root_find(pooled_cdf, {}, options.lower_prob, 0.5);
  const double hi = quantile_by_root_find(pooled_cdf, {}, options.upper_prob, 0.5);
  if (!(lo > 0.0) || !(hi > lo) || !std::isfinite(hi)) {
    throw std::runtime_error("could not place the dose grid from the pooled predictive");
  }
  DoseGrid grid;
  grid.scale_factor = scale_factor;
  grid.normalized.resize(options.points);
  const double a = std::log(lo);
  const double step = (std::log(hi) - a) / (options.points - 1);
  for (int g = 0; g < options.points; ++g) grid.normalized[g] = std::exp(a + step * g);
  grid.normalized.front() = lo;
  grid.normalized.back() = hi;
  return grid;
}

DoseGrid widen_grid(const DoseGrid& grid, double factor) {
  check_grid(grid);
  if (!(factor > 1.0)) throw std::invalid_argument("widening factor must exceed 1");
  std::vector<double> positive;
  for (double v : grid.normalized) {
    if (v > 0.0) positive.push_back(v);
  }
  if (positive.size() < 2) throw std::invalid_argument("cannot widen a grid without a log span");
  const double a = std::log(positive.front());
  const double b = std::log(positive.back());
  const double step = (b - a) / static_cast<double>(positive.size() - 1);
  const double new_a = a - std::log(factor);
  const double new_b = b + std::log(factor);
  const int points = static_cast<int>(std::ceil((new_b - new_a) / step)) + 1;
  DoseGrid out;
  out.scale_factor = grid.scale_factor;
  out.normalized.resize(points);
  const double new_step = (new_b - new_a) / (points - 1);
  for (int g = 0; g < points; ++g) out.normalized[g] = std::exp(new_a + new_step * g);
  return out;
}

SurvivalCurveEstimate study_survival(const std::vector<PosteriorDraws>& models,
                                     const Eigen::VectorXd& w, int study, const DoseGrid& grid,
                                     const CurveOptions& options) {
  check_inputs(models, w);
  check_grid(grid);
  if (study < 0 || study >= models.front().num_studies()) {
    throw std::out_of_range("unknown study index " + std::to_string(study));
  }
  const std::size_t G = grid.size();
  std::vector<Eigen::MatrixXd> curves;
  for (const PosteriorDraws& d : models) {
    const FailureDistribution& dist = distribution(d.family);
    Eigen::MatrixXd c(d.num_draws(), static_cast<Eigen::Index>(G));
    for (int s = 0; s < d.num_draws(); ++s) {
      const double mu = apply_link(dist.link(), d.b0(s) + d.b(s, study));
      for (std::size_t g = 0; g < G; ++g) c(s, g) = survival_at(dist, mu, d.lambda(s), grid.normalized[g]);
      make_nonincreasing(&c(s, 0), G, static_cast<std::size_t>(c.rows()));
    }
    curves.push_back(std::move(c));
  }
  return assemble(curves, w, grid, options);
}

SurvivalCurveEstimate population_survival(const std::vector<PosteriorDraws>& models,
                                          const Eigen::VectorXd& w, const DoseGrid& grid,
                                          const CurveOptions& options) {
  check_inputs(models, w);
  check_grid(grid);
  if (options.effects_per_draw < 1) throw std::invalid_argument("effects_per_draw must be >= 1");
  const std::size_t G = grid.size();
  const int K = options.effects_per_draw;
  std::vector<Eigen::MatrixXd> curves;
  std::vector<double> row(G);
  for (std::size_t m = 0; m < models.size(); ++m) {
    const PosteriorDraws& d = models[m];
    const FailureDistribution& dist = distribution(d.family);
    Rng rng = make_stream(options.seed, m);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd c(d.num_draws(), static_cast<Eigen::Index>(G));
    for (int s = 0; s < d.num_draws(); ++s) {
      const double b0 = d.b0(s);
      const double center = new_effect_center(d.family, b0);
      const double sd = std::sqrt(d.z(s));
      std::fill(row.begin(), row.end(), 0.0);
      for (int k = 0; k < K; ++k) {
        const double mu = apply_link(dist.link(), b0 + center + sd * normal(rng));
        for (std::size_t g = 0; g < G; ++g) row[g] += survival_at(dist, mu, d.lambda(s), grid.normalized[g]);
      }
      for (std::size_t g = 0; g < G; ++g) c(s, g) = row[g] / K;
      make_nonincreasing(&c(s, 0), G, static_cast<std::size_t>(c.rows()));
    }
    curves.push_back(std::move(c));
  }
  return assemble(curves, w, grid, options);
}

double ed_from_curve(const std::vector<double>& normalized_grid,
                     const std::vector<double>& survival, double y) {
  if (!(y > 0.0 && y < 1.0)) throw std::invalid_argument("ED failure fraction must lie in (0, 1)");
  if (normalized_grid.size() != survival.size()) {
    throw std::invalid_argument("grid and survival lengths differ");
  }
  std::vector<double> x;
  std::vector<double> s;
  for (std::size_t g = 0; g < normalized_grid.size(); ++g) {
    if (normalized_grid[g] > 0.0) {
      x.push_back(std::log(normalized_grid[g]));
      s.push_back(survival[g]);
    }
  }
  const double target = 1.0 - y;
  if (x.size() < 2 || s.front() < target || s.back() > target) {
    std::ostringstream ss;
    ss << "ED" << y << " is not bracketed by the dose grid; widen the grid";
    throw EdNotBracketed(ss.str());
  }
  const MonotoneCubicSpline spline(std::move(x), std::move(s));
  const auto root = spline.solve(target);
  if (!root) throw EdNotBracketed("ED is not bracketed by the dose grid; widen the grid");
  return std::exp(*root);
}

EdEstimate ed_quantile(const SurvivalCurveEstimate& curve, double y) {
  EdEstimate out;
  out.y = y;
  out.level = curve.level;
  const std::vector<double>& grid = curve.grid.normalized;
  const double mean_ed = ed_from_curve(grid, curve.mean_survival, y);

  const double target = 1.0 - y;
  double first_positive = grid.front();
  for (double g : grid) {
    if (g > 0.0) {
      first_positive = g;
      break;
    }
  }
  std::vector<double> eds;
  std::vector<double> row(grid.size());
  for (Eigen::Index d = 0; d < curve.per_draw.rows(); ++d) {
    for (std::size_t g = 0; g < grid.size(); ++g) row[g] = curve.per_draw(d, static_cast<Eigen::Index>(g));
    try {
      eds.push_back(ed_from_curve(grid, row, y));
    } catch (const EdNotBracketed&) {
      ++out.censored_draws;
      eds.push_back(row.back() > target ? grid.back() : first_positive);
    }
  }
  double lo = mean_ed;
  double hi = mean_ed;
  if (!eds.empty()) {
    std::sort(eds.begin(), eds.end());
    const double alpha = 1.0 - curve.level;
    lo = std::min(sorted_quantile(eds, 0.5 * alpha), mean_ed);
    hi = std::max(sorted_quantile(eds, 1.0 - 0.5 * alpha), mean_ed);
  }
  const double scale = curve.grid.scale_factor;
  out.dose_mean = mean_ed * scale;
  out.lower = lo * scale;
  out.upper = hi * scale;
  return out;
}

void write_curve_csv(const SurvivalCurveEstimate& curve, std::ostream& out) {
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "dose,mean_survival,lower,upper\n";
  const std::vector<double> dose = curve.grid.original();
  for (std::size_t g = 0; g < dose.size(); ++g) {
    out << dose[g] << ',' << curve.mean_survival[g] << ',' << curve.lower[g] << ','
        << curve.upper[g] << '\n';
  }
}

void write_curve_csv(const SurvivalCurveEstimate& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_curve_csv(curve, out);
}

CurveTable read_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "dose,mean_survival,lower,upper") {
    throw std::runtime_error(path.string() + ": unexpected curve header");
  }
  CurveTable t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    double v[4];
    for (double& x : v) {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error(path.string() + ": short row");
      x = std::stod(cell);
    }
    t.dose.push_back(v[0]);
    t.mean_survival.push_back(v[1]);
    t.lower.push_back(v[2]);
    t.upper.push_back(v[3]);
  }
  return t;
}

}  // namespace stacksurv
