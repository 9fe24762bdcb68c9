#include "stacksurv/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <boost/math/special_functions/owens_t.hpp>

#include "stacksurv/pipeline.hpp"

namespace stacksurv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double type7_quantile(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string center_label(int c) {
  std::ostringstream ss;
  ss << "center" << (c + 1 < 10 ? "0" : "") << c + 1;
  return ss.str();
}

std::string component_name(ComponentKind k) {
  switch (k) {
    case ComponentKind::Weibull:
      return "weibull";
    case ComponentKind::InverseGaussian:
      return "inverse_gaussian";
    case ComponentKind::LogSkewNormal:
      return "log_skew_normal";
  }
  return "unknown";
}

double ratio_of_means(const std::vector<double>& a, const std::vector<double>& b,
                      const std::vector<std::size_t>& idx) {
  double sa = 0.0, sb = 0.0;
  for (std::size_t i : idx) {
    sa += a[i];
    sb += b[i];
  }
  return sb > 0.0 ? sa / sb : kNaN;
}

}  // namespace

TruthSpec TruthSpec::weibull_ig() {
  return {TruthKind::WeibullIG,
          {{ComponentKind::Weibull, 0.7, 10.0}, {ComponentKind::InverseGaussian, 0.3, 0.25}}};
}

TruthSpec TruthSpec::ig_skew_t() {
  return {TruthKind::IGSkewT,
          {{ComponentKind::InverseGaussian, 0.5, 0.25}, {ComponentKind::LogSkewNormal, 0.5, 3.0}}};
}

TruthSpec TruthSpec::weibull(double shape) {
  return {TruthKind::Weibull, {{ComponentKind::Weibull, 1.0, shape}}};
}

void TruthSpec::validate() const {
  if (components.empty()) throw std::invalid_argument("truth has no components");
  double total = 0.0;
  for (const TruthComponent& c : components) {
    if (!(c.weight >= 0.0)) throw std::invalid_argument("mixture weights must be nonnegative");
    if (c.kind != ComponentKind::LogSkewNormal && !(c.shape > 0.0)) {
      throw std::invalid_argument("component shape must be positive");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture weights must sum to 1");
}

std::string truth_name(TruthKind kind) {
  switch (kind) {
    case TruthKind::WeibullIG:
      return "weibull_ig";
    case TruthKind::IGSkewT:
      return "ig_skewt";
    case TruthKind::Weibull:
      return "weibull";
  }
  return "unknown";
}

TruthKind parse_truth(const std::string& name) {
  for (TruthKind k : {TruthKind::WeibullIG, TruthKind::IGSkewT, TruthKind::Weibull}) {
    if (truth_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown truth '" + name + "' (weibull_ig, ig_skewt, weibull)");
}

void StudyDesignSpec::validate() const {
  if (n_centers < 1) throw std::invalid_argument("need at least one center");
  if (!(subjects_mean > 0.0)) throw std::invalid_argument("subjects_mean must be positive");
  if (doses < 1) throw std::invalid_argument("need at least one dose");
  if (!(center_log_sd >= 0.0) || !(dose_log_sd >= 0.0) || !(dose_shift >= 0.0)) {
    throw std::invalid_argument("design spreads and dose shift must be nonnegative");
  }
  if (!(dose_quantum >= 0.0)) throw std::invalid_argument("dose_quantum must be nonnegative");
  if (replications < 1) throw std::invalid_argument("replications must be >= 1");
}

std::vector<double> draw_center_locations(const StudyDesignSpec& design, const TruthSpec& truth,
                                          Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> mu;
  for (const TruthComponent& c : truth.components) {
    double log_mean = design.log_mean_weibull;
    if (c.kind == ComponentKind::InverseGaussian) log_mean = design.log_mean_ig;
    if (c.kind == ComponentKind::LogSkewNormal) log_mean = design.log_mean_skew;
    mu.push_back(std::exp(log_mean + design.center_log_sd * normal(rng)));
  }
  return mu;
}

double sample_inverse_gaussian(double mean, double shape, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double v = normal(rng);
  const double a = mean * mean * v * v / (2.0 * shape);
  // smaller root of the chi-square transform, written without cancellation
  const double x = mean * mean / (mean + a + std::sqrt(a * a + 2.0 * a * mean));
  return uniform_open01(rng) <= mean / (mean + x) ? x : mean * mean / x;
}

double sample_skew_normal(double location, double scale, double slant, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double delta = slant / std::sqrt(1.0 + slant * slant);
  const double u0 = normal(rng);
  const double u1 = normal(rng);
  return location + scale * (delta * std::abs(u0) + std::sqrt(1.0 - delta * delta) * u1);
}

double draw_truth_sample(const TruthSpec& truth, const std::vector<double>& mu, Rng& rng) {
  std::size_t k = 0;
  if (truth.components.size() > 1) {
    const double u = uniform_open01(rng);
    double acc = 0.0;
    for (k = 0; k + 1 < truth.components.size(); ++k) {
      acc += truth.components[k].weight;
      if (u <= acc) break;
    }
  }
  const TruthComponent& c = truth.components[k];
  switch (c.kind) {
    case ComponentKind::Weibull:
      return std::weibull_distribution<double>(c.shape, mu[k])(rng);
    case ComponentKind::InverseGaussian:
      return sample_inverse_gaussian(mu[k], c.shape, rng);
    case ComponentKind::LogSkewNormal:
      return std::exp(sample_skew_normal(mu[k], 1.0, c.shape, rng));
  }
  return kNaN;
}

double truth_cdf(const TruthSpec& truth, const std::vector<double>& mu, double d) {
  if (!(d > 0.0)) return 0.0;
  if (d == kInf) return 1.0;
  double f = 0.0;
  for (std::size_t k = 0; k < truth.components.size(); ++k) {
    const TruthComponent& c = truth.components[k];
    double fk = 0.0;
    switch (c.kind) {
      case ComponentKind::Weibull:
        fk = -std::expm1(-std::pow(d / mu[k], c.shape));
        break;
      case ComponentKind::InverseGaussian: {
        const double r = std::sqrt(c.shape / d);
        fk = std_normal_cdf(r * (d / mu[k] - 1.0)) +
             std::exp(2.0 * c.shape / mu[k]) * std_normal_cdf(-r * (d / mu[k] + 1.0));
        break;
      }
      case ComponentKind::LogSkewNormal: {
        const double z = std::log(d) - mu[k];
        fk = std_normal_cdf(z) - 2.0 * boost::math::owens_t(z, c.shape);
        break;
      }
    }
    f += c.weight * fk;
  }
  return std::clamp(f, 0.0, 1.0);
}

SimulatedData generate_study_data(const StudyDesignSpec& design, const TruthSpec& truth, Rng& rng) {
  design.validate();
  truth.validate();
  std::poisson_distribution<int> subjects(design.subjects_mean);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<IntervalObservation> obs;
  std::vector<double> latent;
  std::vector<std::vector<double>> doses;
  for (int c = 0; c < design.n_centers; ++c) {
    const std::vector<double> mu = draw_center_locations(design, truth, rng);
    int n = 0;
    while (n == 0) n = subjects(rng);
    std::vector<double> ladder(design.doses);
    for (double& d : ladder) {
      d = std::exp(design.dose_log_mean + design.dose_log_sd * normal(rng)) + design.dose_shift;
    }
    std::sort(ladder.begin(), ladder.end());
    if (design.dose_quantum > 0.0) {
      const double q = design.dose_quantum;
      for (std::size_t k = 0; k < ladder.size(); ++k) {
        ladder[k] = std::max(q, std::round(ladder[k] / q) * q);
        if (k > 0 && ladder[k] <= ladder[k - 1]) ladder[k] = ladder[k - 1] + q;
      }
    }
    for (int i = 0; i < n; ++i) {
      const double t = draw_truth_sample(truth, mu, rng);
      const auto above = std::lower_bound(ladder.begin(), ladder.end(), t);
      const double lo = above == ladder.begin() ? 0.0 : *(above - 1);
      const double hi = above == ladder.end() ? kInf : *above;
      obs.push_back({center_label(c), lo, hi});
      latent.push_back(t);
    }
    doses.push_back(std::move(ladder));
  }
  return {StudyDataset(std::move(obs)), std::move(latent), std::move(doses)};
}

std::vector<double> true_population_eds(const StudyDesignSpec& design, const TruthSpec& truth,
                                        const std::vector<double>& ys, std::uint64_t seed,
                                        int draws) {
  if (draws < 2) throw std::invalid_argument("need at least 2 Monte Carlo draws");
  truth.validate();
  Rng rng = make_stream(seed, 0x7472757468ULL);
  std::vector<double> t(draws);
  for (double& v : t) v = draw_truth_sample(truth, draw_center_locations(design, truth, rng), rng);
  std::sort(t.begin(), t.end());
  std::vector<double> out;
  for (double y : ys) out.push_back(type7_quantile(t, y));
  return out;
}

MseStudyResult run_mse_study(const MseStudyConfig& cfg,
                             const std::function<void(const ReplicationRecord&)>& progress) {
  cfg.design.validate();
  cfg.truth.validate();
  cfg.sampler.validate();
  if (cfg.design.replications < 2) throw std::invalid_argument("an MSE study needs >= 2 replications");
  const std::vector<Family> families(kAllFamilies.begin(), kAllFamilies.end());
  const std::size_t weibull_index = 0;  // kAllFamilies starts with Weibull
  const std::size_t Y = cfg.ed_targets.size();

  const std::vector<double> truth =
      true_population_eds(cfg.design, cfg.truth, cfg.ed_targets, cfg.seed, cfg.truth_draws);

  MseStudyResult result;
  EstimateOptions opt;
  opt.ed_targets = cfg.ed_targets;
  opt.curve.effects_per_draw = cfg.effects_per_draw;
  opt.study_curves = false;
  for (int r = 0; r < cfg.design.replications; ++r) {
    ReplicationRecord rec;
    rec.index = r;
    Rng seeder = make_stream(cfg.seed, 0x7265700000ULL + static_cast<std::uint64_t>(r));
    rec.seed = seeder();
    Rng rng(rec.seed);
    const SimulatedData sim = generate_study_data(cfg.design, cfg.truth, rng);
    rec.subjects = static_cast<int>(sim.data.size());
    try {
      const StudyDataset normalized = normalize(sim.data);
      const std::vector<ModelFit> fits =
          fit_models(normalized, families, cfg.sampler, cfg.convergence, rec.seed);
      for (const ModelFit& f : fits) {
        if (!f.converged()) {
          if (!rec.reason.empty()) rec.reason += "; ";
          rec.reason += std::string(family_name(f.draws.family)) + " did not converge";
        }
      }
      if (rec.reason.empty()) {
        const StackingWeights w = stack_fits(fits);
        rec.weights.assign(w.w.data(), w.w.data() + w.w.size());
        std::vector<PosteriorDraws> draws;
        for (const ModelFit& f : fits) draws.push_back(f.draws);
        opt.curve.seed = rec.seed;
        const Estimates stacked = estimate(draws, w.w, normalized.scale_factor(), opt);
        const Estimates single = estimate({fits[weibull_index].draws}, Eigen::VectorXd::Ones(1),
                                          normalized.scale_factor(), opt);
        for (std::size_t k = 0; k < Y; ++k) {
          if (!stacked.population_eds[k] || !single.population_eds[k]) {
            rec.reason = "ED not bracketed by the dose grid";
            break;
          }
          rec.stacked_ed.push_back(stacked.population_eds[k]->dose_mean);
          rec.weibull_ed.push_back(single.population_eds[k]->dose_mean);
        }
      }
    } catch (const std::exception& e) {
      rec.reason = std::string("fit failed: ") + e.what();
    }
    rec.excluded = !rec.reason.empty();
    if (rec.excluded) {
      rec.stacked_ed.clear();
      rec.weibull_ed.clear();
    }
    if (progress) progress(rec);
    result.replications.push_back(std::move(rec));
  }

  std::vector<std::size_t> used;
  for (std::size_t r = 0; r < result.replications.size(); ++r) {
    if (!result.replications[r].excluded) used.push_back(r);
  }
  result.used = static_cast<int>(used.size());
  result.excluded = static_cast<int>(result.replications.size() - used.size());

  Rng boot = make_stream(cfg.seed, 0x626f6f74ULL);
  for (std::size_t k = 0; k < Y; ++k) {
    MseRatioRow row;
    row.y = cfg.ed_targets[k];
    row.true_ed = truth[k];
    std::vector<double> se_s(result.replications.size(), 0.0);
    std::vector<double> se_w(result.replications.size(), 0.0);
    for (std::size_t r : used) {
      const ReplicationRecord& rec = result.replications[r];
      se_s[r] = std::pow(rec.stacked_ed[k] - truth[k], 2);
      se_w[r] = std::pow(rec.weibull_ed[k] - truth[k], 2);
    }
    if (used.empty()) {
      row.mse_stacked = row.mse_weibull = row.ratio = row.lower = row.upper = kNaN;
      result.rows.push_back(row);
      continue;
    }
    for (std::size_t r : used) {
      row.mse_stacked += se_s[r] / static_cast<double>(used.size());
      row.mse_weibull += se_w[r] / static_cast<double>(used.size());
    }
    row.ratio = ratio_of_means(se_s, se_w, used);
    std::vector<double> ratios;
    std::vector<std::size_t> idx(used.size());
    for (int b = 0; b < cfg.bootstrap; ++b) {
      for (std::size_t& i : idx) {
        const auto pick = std::min(used.size() - 1,
                                   static_cast<std::size_t>(uniform_open01(boot) * used.size()));
        i = used[pick];
      }
      const double v = ratio_of_means(se_s, se_w, idx);
      if (std::isfinite(v)) ratios.push_back(v);
    }
    std::sort(ratios.begin(), ratios.end());
    const double alpha = 1.0 - cfg.bootstrap_level;
    row.lower = ratios.empty() ? kNaN : type7_quantile(ratios, 0.5 * alpha);
    row.upper = ratios.empty() ? kNaN : type7_quantile(ratios, 1.0 - 0.5 * alpha);
    result.rows.push_back(row);
  }
  return result;
}

void write_mse_table(const MseStudyResult& result, const MseStudyConfig& cfg, std::ostream& out) {
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "truth,n_centers,y,true_ed,mse_stacked,mse_weibull,ratio,lower,upper,used,excluded\n";
  for (const MseRatioRow& r : result.rows) {
    out << truth_name(cfg.truth.kind) << ',' << cfg.design.n_centers << ',' << r.y << ','
        << r.true_ed << ',' << r.mse_stacked << ',' << r.mse_weibull << ',' << r.ratio << ','
        << r.lower << ',' << r.upper << ',' << result.used << ',' << result.excluded << '\n';
  }
}

void write_replications(const MseStudyResult& result, std::ostream& out) {
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "replication,seed,subjects,excluded,stacked_ed,weibull_ed,weights,reason\n";
  auto join = [](const std::vector<double>& v) {
    std::ostringstream ss;
    ss.precision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < v.size(); ++i) ss << (i ? ";" : "") << v[i];
    return ss.str();
  };
  for (const ReplicationRecord& r : result.replications) {
    std::string reason = r.reason;
    std::replace(reason.begin(), reason.end(), ',', ' ');
    out << r.index << ',' << r.seed << ',' << r.subjects << ',' << (r.excluded ? 1 : 0) << ','
        << join(r.stacked_ed) << ',' << join(r.weibull_ed) << ',' << join(r.weights) << ','
        << reason << '\n';
  }
}

nlohmann::json mse_manifest(const MseStudyResult& result, const MseStudyConfig& cfg) {
  using nlohmann::json;
  json truth = json::array();
  for (const TruthComponent& c : cfg.truth.components) {
    truth.push_back({{"kind", component_name(c.kind)}, {"weight", c.weight}, {"shape", c.shape}});
  }
  const StudyDesignSpec& d = cfg.design;
  json exclusions = json::array();
  json seeds = json::array();
  for (const ReplicationRecord& r : result.replications) {
    seeds.push_back(r.seed);
    if (r.excluded) exclusions.push_back({{"replication", r.index}, {"reason", r.reason}});
  }
  json rows = json::array();
  for (const MseRatioRow& r : result.rows) {
    rows.push_back({{"y", r.y},
                    {"true_ed", r.true_ed},
                    {"mse_stacked", r.mse_stacked},
                    {"mse_weibull", r.mse_weibull},
                    {"ratio", r.ratio},
                    {"lower", r.lower},
                    {"upper", r.upper}});
  }
  return {{"seed", cfg.seed},
          {"truth", {{"name", truth_name(cfg.truth.kind)}, {"components", truth}}},
          {"design",
           {{"n_centers", d.n_centers},
            {"subjects_mean", d.subjects_mean},
            {"log_mean_weibull", d.log_mean_weibull},
            {"log_mean_ig", d.log_mean_ig},
            {"log_mean_skew", d.log_mean_skew},
            {"center_log_sd", d.center_log_sd},
            {"doses", d.doses},
            {"dose_log_mean", d.dose_log_mean},
            {"dose_log_sd", d.dose_log_sd},
            {"dose_shift", d.dose_shift},
            {"replications", d.replications}}},
          {"sampler",
           {{"chains", cfg.sampler.chains},
            {"warmup", cfg.sampler.warmup},
            {"samples", cfg.sampler.samples},
            {"target_accept", cfg.sampler.target_accept},
            {"max_tree_depth", cfg.sampler.max_tree_depth}}},
          {"convergence", {{"max_rhat", cfg.convergence.max_rhat}, {"min_ess", cfg.convergence.min_ess}}},
          {"ed_targets", cfg.ed_targets},
          {"effects_per_draw", cfg.effects_per_draw},
          {"truth_draws", cfg.truth_draws},
          {"bootstrap", {{"resamples", cfg.bootstrap}, {"level", cfg.bootstrap_level}}},
          {"replication_seeds", seeds},
          {"used", result.used},
          {"excluded", result.excluded},
          {"exclusions", exclusions},
          {"table", rows},
          {"version", kVersion}};
}

TruthSpec make_truth(TruthKind kind, double ig_shape) {
  TruthSpec t;
  switch (kind) {
    case TruthKind::WeibullIG:
      t = TruthSpec::weibull_ig();
      break;
    case TruthKind::IGSkewT:
      t = TruthSpec::ig_skew_t();
      break;
    case TruthKind::Weibull:
      return TruthSpec::weibull();
  }
  for (TruthComponent& c : t.components) {
    if (c.kind == ComponentKind::InverseGaussian) c.shape = ig_shape;
  }
  return t;
}

SimulationPlan SimulationPlan::desk_scale() {
  SimulationPlan plan;
  plan.base.design.replications = 50;
  plan.base.sampler.chains = 2;
  plan.base.sampler.warmup = 500;
  plan.base.sampler.samples = 500;
  plan.base.convergence.max_rhat = 1.05;
  plan.base.convergence.min_ess = 100;
  return plan;
}

SimulationPlan SimulationPlan::full_scale() {
  SimulationPlan plan;
  plan.n_centers = {5, 15, 30};
  plan.base.design.replications = 200;
  return plan;
}

namespace {

template <typename T>
T plan_value(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(std::string("simulation key '") + key + "' has the wrong type");
  }
}

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                         const char* where) {
  if (!j.is_object()) throw std::invalid_argument(std::string(where) + " must be an object");
  for (const auto& item : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; })) {
      throw std::invalid_argument("unknown simulation key '" + item.key() + "' in " + where);
    }
  }
}

}  // namespace

SimulationPlan simulation_plan_from_json(const nlohmann::json& j, SimulationPlan plan) {
  reject_unknown_keys(j,
                      {"truths", "n_centers", "replications", "ig_shape", "seed", "output_dir",
                       "sampler", "convergence", "ed_targets", "effects_per_draw", "truth_draws",
                       "bootstrap", "design"},
                      "simulation config");
  MseStudyConfig& b = plan.base;
  if (j.contains("truths")) {
    plan.truths.clear();
    for (const auto& name : plan_value<std::vector<std::string>>(j, "truths")) {
      plan.truths.push_back(parse_truth(name));
    }
  }
  if (j.contains("n_centers")) plan.n_centers = plan_value<std::vector<int>>(j, "n_centers");
  if (j.contains("replications")) b.design.replications = plan_value<int>(j, "replications");
  if (j.contains("ig_shape")) plan.ig_shape = plan_value<double>(j, "ig_shape");
  if (j.contains("seed")) b.seed = plan_value<std::uint64_t>(j, "seed");
  if (j.contains("output_dir")) plan.output_dir = plan_value<std::string>(j, "output_dir");
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    reject_unknown_keys(s, {"chains", "warmup", "samples", "target_accept", "max_tree_depth", "threads"},
                        "sampler");
    if (s.contains("chains")) b.sampler.chains = plan_value<int>(s, "chains");
    if (s.contains("warmup")) b.sampler.warmup = plan_value<int>(s, "warmup");
    if (s.contains("samples")) b.sampler.samples = plan_value<int>(s, "samples");
    if (s.contains("target_accept")) b.sampler.target_accept = plan_value<double>(s, "target_accept");
    if (s.contains("max_tree_depth")) b.sampler.max_tree_depth = plan_value<int>(s, "max_tree_depth");
    if (s.contains("threads")) b.sampler.threads = plan_value<int>(s, "threads");
  }
  if (j.contains("convergence")) {
    const auto& c = j["convergence"];
    reject_unknown_keys(c, {"max_rhat", "min_ess"}, "convergence");
    if (c.contains("max_rhat")) b.convergence.max_rhat = plan_value<double>(c, "max_rhat");
    if (c.contains("min_ess")) b.convergence.min_ess = plan_value<double>(c, "min_ess");
  }
  if (j.contains("ed_targets")) b.ed_targets = plan_value<std::vector<double>>(j, "ed_targets");
  if (j.contains("effects_per_draw")) b.effects_per_draw = plan_value<int>(j, "effects_per_draw");
  if (j.contains("truth_draws")) b.truth_draws = plan_value<int>(j, "truth_draws");
  if (j.contains("bootstrap")) {
    const auto& bs = j["bootstrap"];
    reject_unknown_keys(bs, {"resamples", "level"}, "bootstrap");
    if (bs.contains("resamples")) b.bootstrap = plan_value<int>(bs, "resamples");
    if (bs.contains("level")) b.bootstrap_level = plan_value<double>(bs, "level");
  }
  if (j.contains("design")) {
    const auto& d = j["design"];
    reject_unknown_keys(d,
                        {"subjects_mean", "log_mean_weibull", "log_mean_ig", "log_mean_skew",
                         "center_log_sd", "doses", "dose_log_mean", "dose_log_sd", "dose_shift",
                         "dose_quantum"},
                        "design");
    StudyDesignSpec& s = b.design;
    if (d.contains("subjects_mean")) s.subjects_mean = plan_value<double>(d, "subjects_mean");
    if (d.contains("log_mean_weibull")) s.log_mean_weibull = plan_value<double>(d, "log_mean_weibull");
    if (d.contains("log_mean_ig")) s.log_mean_ig = plan_value<double>(d, "log_mean_ig");
    if (d.contains("log_mean_skew")) s.log_mean_skew = plan_value<double>(d, "log_mean_skew");
    if (d.contains("center_log_sd")) s.center_log_sd = plan_value<double>(d, "center_log_sd");
    if (d.contains("doses")) s.doses = plan_value<int>(d, "doses");
    if (d.contains("dose_log_mean")) s.dose_log_mean = plan_value<double>(d, "dose_log_mean");
    if (d.contains("dose_log_sd")) s.dose_log_sd = plan_value<double>(d, "dose_log_sd");
    if (d.contains("dose_shift")) s.dose_shift = plan_value<double>(d, "dose_shift");
    if (d.contains("dose_quantum")) s.dose_quantum = plan_value<double>(d, "dose_quantum");
  }
  if (plan.truths.empty()) throw std::invalid_argument("at least one truth is required");
  if (plan.n_centers.empty()) throw std::invalid_argument("at least one center count is required");
  for (int n : plan.n_centers) {
    if (n < 1) throw std::invalid_argument("center counts must be >= 1");
  }
  if (!(plan.ig_shape > 0.0)) throw std::invalid_argument("ig_shape must be positive");
  if (b.truth_draws < 1000) throw std::invalid_argument("truth_draws must be >= 1000");
  if (b.bootstrap < 1) throw std::invalid_argument("bootstrap resamples must be >= 1");
  if (!(b.bootstrap_level > 0.0 && b.bootstrap_level < 1.0)) {
    throw std::invalid_argument("bootstrap level must be in (0, 1)");
  }
  for (double y : b.ed_targets) {
    if (!(y > 0.0 && y < 1.0)) throw std::invalid_argument("ED targets must be in (0, 1)");
  }
  b.design.validate();
  b.sampler.validate();
  return plan;
}

std::vector<MseStudyResult> run_simulation(const SimulationPlan& plan,
                                           const std::function<void(const std::string&)>& log) {
  std::filesystem::create_directories(plan.output_dir);
  std::vector<MseStudyResult> results;
  std::ofstream table(plan.output_dir / "mse_table.csv");
  if (!table) throw std::runtime_error("cannot write " + (plan.output_dir / "mse_table.csv").string());
  nlohmann::json studies = nlohmann::json::array();
  bool header = true;
  for (TruthKind kind : plan.truths) {
    for (int n : plan.n_centers) {
      MseStudyConfig cfg = plan.base;
      cfg.truth = make_truth(kind, plan.ig_shape);
      cfg.design.n_centers = n;
      const std::string tag = truth_name(kind) + "_" + std::to_string(n);
      if (log) log("study " + tag + ": " + std::to_string(cfg.design.replications) + " replications");
      MseStudyResult r = run_mse_study(cfg, [&](const ReplicationRecord& rec) {
        if (log) {
          log("  replication " + std::to_string(rec.index + 1) +
              (rec.excluded ? " excluded: " + rec.reason : std::string(" done")));
        }
      });
      std::ostringstream rows;
      write_mse_table(r, cfg, rows);
      std::string text = rows.str();
      if (!header) text.erase(0, text.find('\n') + 1);
      header = false;
      table << text;
      const std::filesystem::path reps = plan.output_dir / ("replications_" + tag + ".csv");
      std::ofstream rep_out(reps);
      if (!rep_out) throw std::runtime_error("cannot write " + reps.string());
      write_replications(r, rep_out);
      nlohmann::json m = mse_manifest(r, cfg);
      m["replications_file"] = reps.filename().string();
      studies.push_back(std::move(m));
      results.push_back(std::move(r));
    }
  }
  const nlohmann::json manifest{{"version", kVersion}, {"ig_shape", plan.ig_shape}, {"studies", studies}};
  std::ofstream out(plan.output_dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  return results;
}

}  // namespace stacksurv
