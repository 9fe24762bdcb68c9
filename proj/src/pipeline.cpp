#include "stacksurv/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <Eigen/Core>
#include <boost/version.hpp>

#include "stacksurv/posterior.hpp"

namespace stacksurv {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <typename T>
T get_as(const json& j, const char* key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& item : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; })) {
      throw ConfigError(std::string("unknown config key '") + item.key() + "' in " + where);
    }
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string ed_label(double y) {
  const double pct = 100.0 * y;
  std::ostringstream ss;
  if (std::abs(pct - std::round(pct)) < 1e-9) {
    const int p = static_cast<int>(std::lround(pct));
    ss << "ED" << (p < 10 ? "0" : "") << p;
  } else {
    ss << "ED" << pct;
  }
  return ss.str();
}

// NaN-safe maximum; NaN when every entry is NaN.
double finite_max(const std::vector<double>& v) {
  double out = kNaN;
  for (double x : v) {
    if (!std::isnan(x) && (std::isnan(out) || x > out)) out = x;
  }
  return out;
}

double finite_min(const std::vector<double>& v) {
  double out = kNaN;
  for (double x : v) {
    if (!std::isnan(x) && (std::isnan(out) || x < out)) out = x;
  }
  return out;
}

json ed_json(double y, const std::optional<EdEstimate>& e) {
  json j;
  j["y"] = y;
  j["label"] = ed_label(y);
  if (e) {
    j["dose"] = e->dose_mean;
    j["lower"] = e->lower;
    j["upper"] = e->upper;
    j["level"] = e->level;
    j["censored_draws"] = e->censored_draws;
    j["bracketed"] = true;
  } else {
    j["dose"] = nullptr;
    j["lower"] = nullptr;
    j["upper"] = nullptr;
    j["bracketed"] = false;
  }
  return j;
}

std::string study_curve_file(std::size_t j) {
  std::ostringstream ss;
  ss << "study_" << (j + 1 < 10 ? "0" : "") << j + 1 << "_curve.csv";
  return ss.str();
}

std::string dataset_hash(const StudyDataset& data) {
  std::ostringstream ss;
  write_csv(data, ss);
  return hex64(fnv1a64(ss.str()));
}

json model_json(const ModelFit& fit, double weight, double per_model_elpd) {
  const PosteriorDraws& d = fit.draws;
  const SamplerDiagnostics& diag = d.diagnostics;
  json m;
  m["family"] = std::string(family_name(d.family));
  m["weight"] = weight;
  m["elpd_loo"] = per_model_elpd;
  m["parameterization"] = fit.non_centered ? "non_centered" : "centered";
  m["converged"] = fit.converged();

  json dj;
  dj["rhat_max"] = finite_max(fit.convergence.rhat);
  dj["ess_bulk_min"] = finite_min(fit.convergence.ess_bulk);
  dj["divergences_per_chain"] = diag.divergences_per_chain;
  dj["step_size_per_chain"] = diag.step_size_per_chain;
  dj["max_depth_hits_per_chain"] = diag.max_depth_hits_per_chain;
  dj["mean_accept_stat"] = diag.mean_accept_stat;
  dj["divergence_warning"] = diag.divergence_warning;
  dj["messages"] = fit.convergence.messages;
  json params = json::array();
  for (const ParameterSummary& p : diag.params) {
    params.push_back({{"name", p.name}, {"mean", p.mean}, {"sd", p.sd}, {"rhat", p.rhat},
                      {"ess_bulk", p.ess_bulk}});
  }
  dj["parameters"] = params;
  m["diagnostics"] = dj;

  const Eigen::VectorXd& k = fit.loo.k_hat;
  int above_05 = 0, above_07 = 0, degenerate = 0;
  double kmax = kNaN;
  for (Eigen::Index i = 0; i < k.size(); ++i) {
    if (std::isnan(k[i])) {
      ++degenerate;
      continue;
    }
    if (k[i] > 0.5) ++above_05;
    if (k[i] > 0.7) ++above_07;
    if (std::isnan(kmax) || k[i] > kmax) kmax = k[i];
  }
  m["k_hat"] = {{"max", kmax},
                {"above_0_5", above_05},
                {"above_0_7", above_07},
                {"degenerate", degenerate},
                {"observations", k.size()}};
  return m;
}

void append_prefixed(std::vector<std::string>& out, const std::string& prefix,
                     const std::vector<std::string>& msgs) {
  for (const std::string& m : msgs) out.push_back(prefix + m);
}

}  // namespace

void RunConfig::validate() const {
  if (data_path.empty()) throw ConfigError("config has no data path");
  if (models.empty()) throw ConfigError("model list is empty");
  std::set<Family> seen(models.begin(), models.end());
  if (seen.size() != models.size()) throw ConfigError("model list has duplicates");
  if (ed_targets.empty()) throw ConfigError("no ED targets");
  for (double y : ed_targets) {
    if (!(y > 0.0 && y < 1.0)) throw ConfigError("ED targets must lie in (0, 1)");
  }
  if (!(level > 0.5 && level < 1.0)) throw ConfigError("credible level must lie in (0.5, 1)");
  try {
    sampler.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("sampler: ") + e.what());
  }
  if (!(convergence.max_rhat > 1.0) || !(convergence.min_ess >= 0.0)) {
    throw ConfigError("convergence thresholds need max_rhat > 1 and min_ess >= 0");
  }
  if (grid.points < 2 || grid.max_draws_per_model < 1) throw ConfigError("grid needs points >= 2");
  if (!(grid.lower_prob > 0.0 && grid.lower_prob < grid.upper_prob && grid.upper_prob < 1.0)) {
    throw ConfigError("grid probabilities must satisfy 0 < lower < upper < 1");
  }
  if (!(widen_factor > 1.0)) throw ConfigError("widen_factor must exceed 1");
  if (max_widenings < 0) throw ConfigError("max_widenings must be >= 0");
  if (effects_per_draw < 1) throw ConfigError("effects_per_draw must be >= 1");
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j,
                 {"data", "models", "seed", "output_dir", "sampler", "convergence", "ed_targets",
                  "level", "grid", "effects_per_draw", "study_curves"},
                 "config");
  RunConfig cfg;
  if (!j.contains("data")) throw ConfigError("config key 'data' is required");
  std::filesystem::path data = get_as<std::string>(j["data"], "data");
  cfg.data_path = data.is_relative() && !base_dir.empty() ? base_dir / data : data;
  if (j.contains("models")) {
    cfg.models.clear();
    for (const std::string& name : get_as<std::vector<std::string>>(j["models"], "models")) {
      try {
        cfg.models.push_back(parse_family(name));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
  }
  if (j.contains("seed")) cfg.seed = get_as<std::uint64_t>(j["seed"], "seed");
  if (j.contains("output_dir")) {
    std::filesystem::path out = get_as<std::string>(j["output_dir"], "output_dir");
    cfg.output_dir = out.is_relative() && !base_dir.empty() ? base_dir / out : out;
  }
  if (j.contains("sampler")) {
    const json& s = j["sampler"];
    reject_unknown(s, {"chains", "warmup", "samples", "target_accept", "max_tree_depth", "threads"},
                   "sampler");
    if (s.contains("chains")) cfg.sampler.chains = get_as<int>(s["chains"], "chains");
    if (s.contains("warmup")) cfg.sampler.warmup = get_as<int>(s["warmup"], "warmup");
    if (s.contains("samples")) cfg.sampler.samples = get_as<int>(s["samples"], "samples");
    if (s.contains("target_accept")) {
      cfg.sampler.target_accept = get_as<double>(s["target_accept"], "target_accept");
    }
    if (s.contains("max_tree_depth")) {
      cfg.sampler.max_tree_depth = get_as<int>(s["max_tree_depth"], "max_tree_depth");
    }
    if (s.contains("threads")) cfg.sampler.threads = get_as<int>(s["threads"], "threads");
  }
  if (j.contains("convergence")) {
    const json& c = j["convergence"];
    reject_unknown(c, {"max_rhat", "min_ess"}, "convergence");
    if (c.contains("max_rhat")) cfg.convergence.max_rhat = get_as<double>(c["max_rhat"], "max_rhat");
    if (c.contains("min_ess")) cfg.convergence.min_ess = get_as<double>(c["min_ess"], "min_ess");
  }
  if (j.contains("ed_targets")) {
    cfg.ed_targets = get_as<std::vector<double>>(j["ed_targets"], "ed_targets");
  }
  if (j.contains("level")) cfg.level = get_as<double>(j["level"], "level");
  if (j.contains("grid")) {
    const json& g = j["grid"];
    reject_unknown(g,
                   {"points", "lower_prob", "upper_prob", "max_draws_per_model", "widen_factor",
                    "max_widenings"},
                   "grid");
    if (g.contains("points")) cfg.grid.points = get_as<int>(g["points"], "points");
    if (g.contains("lower_prob")) cfg.grid.lower_prob = get_as<double>(g["lower_prob"], "lower_prob");
    if (g.contains("upper_prob")) cfg.grid.upper_prob = get_as<double>(g["upper_prob"], "upper_prob");
    if (g.contains("max_draws_per_model")) {
      cfg.grid.max_draws_per_model = get_as<int>(g["max_draws_per_model"], "max_draws_per_model");
    }
    if (g.contains("widen_factor")) cfg.widen_factor = get_as<double>(g["widen_factor"], "widen_factor");
    if (g.contains("max_widenings")) {
      cfg.max_widenings = get_as<int>(g["max_widenings"], "max_widenings");
    }
  }
  if (j.contains("effects_per_draw")) {
    cfg.effects_per_draw = get_as<int>(j["effects_per_draw"], "effects_per_draw");
  }
  if (j.contains("study_curves")) cfg.study_curves = get_as<bool>(j["study_curves"], "study_curves");
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

json to_json(const RunConfig& cfg) {
  json j;
  j["data"] = cfg.data_path.string();
  std::vector<std::string> models;
  for (Family f : cfg.models) models.emplace_back(family_name(f));
  j["models"] = models;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir.string();
  j["sampler"] = {{"chains", cfg.sampler.chains},
                  {"warmup", cfg.sampler.warmup},
                  {"samples", cfg.sampler.samples},
                  {"target_accept", cfg.sampler.target_accept},
                  {"max_tree_depth", cfg.sampler.max_tree_depth},
                  {"threads", cfg.sampler.threads}};
  j["convergence"] = {{"max_rhat", cfg.convergence.max_rhat}, {"min_ess", cfg.convergence.min_ess}};
  j["ed_targets"] = cfg.ed_targets;
  j["level"] = cfg.level;
  j["grid"] = {{"points", cfg.grid.points},
               {"lower_prob", cfg.grid.lower_prob},
               {"upper_prob", cfg.grid.upper_prob},
               {"max_draws_per_model", cfg.grid.max_draws_per_model},
               {"widen_factor", cfg.widen_factor},
               {"max_widenings", cfg.max_widenings}};
  j["effects_per_draw"] = cfg.effects_per_draw;
  j["study_curves"] = cfg.study_curves;
  return j;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t family_seed(std::uint64_t seed, Family family) {
  Rng rng = make_stream(seed, 0x66616d00ULL + static_cast<std::uint64_t>(family));
  return rng();
}

std::vector<ModelFit> fit_models(const StudyDataset& normalized, const std::vector<Family>& families,
                                 const SamplerConfig& sampler, const ConvergenceThresholds& thresholds,
                                 std::uint64_t seed) {
  std::vector<ModelFit> fits;
  for (Family f : families) {
    const LogPosterior lp(f, normalized);
    SamplerConfig cfg = sampler;
    cfg.seed = family_seed(seed, f);
    ModelFit fit;
    fit.draws = sample_posterior(lp, cfg);
    fit.loo = psis_loo(fit.draws.loglik);
    fit.convergence = check_convergence(fit.draws, thresholds);
    fit.non_centered = lp.non_centered();
    fits.push_back(std::move(fit));
  }
  return fits;
}

StackingWeights stack_fits(const std::vector<ModelFit>& fits) {
  std::vector<LooResult> loos;
  for (const ModelFit& f : fits) loos.push_back(f.loo);
  return stack(loos);
}

Estimates estimate(const std::vector<PosteriorDraws>& models, const Eigen::VectorXd& w,
                   double scale_factor, const EstimateOptions& options) {
  Estimates out;
  DoseGrid grid = make_dose_grid(models, w, scale_factor, options.grid);
  const int J = models.front().num_studies();
  for (int attempt = 0;; ++attempt) {
    bool bracketed = true;
    auto eds_of = [&](const SurvivalCurveEstimate& c) {
      std::vector<std::optional<EdEstimate>> eds;
      for (double y : options.ed_targets) {
        try {
          eds.emplace_back(ed_quantile(c, y));
        } catch (const EdNotBracketed&) {
          bracketed = false;
          eds.emplace_back(std::nullopt);
        }
      }
      return eds;
    };
    out.population = population_survival(models, w, grid, options.curve);
    out.population_eds = eds_of(out.population);
    out.studies.clear();
    out.study_eds.clear();
    if (options.study_curves) {
      for (int j = 0; j < J; ++j) {
        out.studies.push_back(study_survival(models, w, j, grid, options.curve));
        out.study_eds.push_back(eds_of(out.studies.back()));
      }
    }
    if (bracketed || attempt == options.max_widenings) break;
    grid = widen_grid(grid, options.widen_factor);
    ++out.widenings;
  }

  auto note = [&](const std::string& who, const std::vector<std::optional<EdEstimate>>& eds,
                  Eigen::Index draws) {
    for (std::size_t k = 0; k < eds.size(); ++k) {
      const std::string label = ed_label(options.ed_targets[k]);
      if (!eds[k]) {
        out.warnings.push_back(who + " " + label + ": the mean curve does not reach the target on the dose grid");
      } else if (eds[k]->censored_draws > 0) {
        out.warnings.push_back(who + " " + label + ": " + std::to_string(eds[k]->censored_draws) +
                               " of " + std::to_string(draws) +
                               " draws fall outside the dose grid and were recorded at its edge");
      }
    }
  };
  note("population", out.population_eds, out.population.per_draw.rows());
  for (std::size_t j = 0; j < out.study_eds.size(); ++j) {
    const std::string who = j < options.study_labels.size() ? "study '" + options.study_labels[j] + "'"
                                                             : "study " + std::to_string(j + 1);
    note(who, out.study_eds[j], out.studies[j].per_draw.rows());
  }
  if (out.widenings > 0) {
    out.warnings.push_back("dose grid widened " + std::to_string(out.widenings) +
                           " time(s) to bracket the requested EDs");
  }
  return out;
}

AnalysisResult analyze(const RunConfig& cfg) {
  cfg.validate();
  return analyze(cfg, load_csv(cfg.data_path));
}

AnalysisResult analyze(const RunConfig& cfg, const StudyDataset& data) {
  cfg.validate();
  AnalysisResult r{data, {}, {}, {}, false, {}, {}};
  const StudyDataset normalized = normalize(data);
  r.fits = fit_models(normalized, cfg.models, cfg.sampler, cfg.convergence, cfg.seed);
  r.weights = stack_fits(r.fits);

  std::vector<PosteriorDraws> draws;
  for (const ModelFit& f : r.fits) draws.push_back(f.draws);
  EstimateOptions opt;
  opt.ed_targets = cfg.ed_targets;
  opt.curve.level = cfg.level;
  opt.curve.effects_per_draw = cfg.effects_per_draw;
  opt.curve.seed = cfg.seed;
  opt.grid = cfg.grid;
  opt.widen_factor = cfg.widen_factor;
  opt.max_widenings = cfg.max_widenings;
  opt.study_curves = cfg.study_curves;
  opt.study_labels = data.studies();
  r.estimates = estimate(draws, r.weights.w, normalized.scale_factor(), opt);

  r.converged = true;
  for (const ModelFit& f : r.fits) {
    const std::string prefix = std::string(family_name(f.draws.family)) + ": ";
    if (!f.convergence.pass) append_prefixed(r.warnings, prefix, f.convergence.messages);
    r.warnings.insert(r.warnings.end(), f.draws.diagnostics.warnings.begin(),
                      f.draws.diagnostics.warnings.end());
    append_prefixed(r.warnings, prefix, f.loo.warnings);
    r.converged = r.converged && f.converged();
  }
  r.warnings.insert(r.warnings.end(), r.estimates.warnings.begin(), r.estimates.warnings.end());

  json report;
  const json config = to_json(cfg);
  report["provenance"] = {
      {"config_hash", hex64(fnv1a64(config.dump()))},
      {"data_hash", dataset_hash(data)},
      {"seed", cfg.seed},
      {"versions",
       {{"stacksurv", kVersion},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                      "." + std::to_string(EIGEN_MINOR_VERSION)},
        {"boost", BOOST_LIB_VERSION},
        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
        {"compiler", __VERSION__}}}};
  report["config"] = config;

  std::size_t left = 0, right = 0;
  for (const IntervalObservation& o : data.observations()) {
    if (o.t1 == 0.0) ++left;
    if (std::isinf(o.t2)) ++right;
  }
  report["data"] = {{"observations", data.size()},
                    {"studies", data.num_studies()},
                    {"left_censored", left},
                    {"right_censored", right},
                    {"scale_factor", normalized.scale_factor()}};

  json models = json::array();
  json weights = json::object();
  for (std::size_t m = 0; m < r.fits.size(); ++m) {
    models.push_back(model_json(r.fits[m], r.weights.w[m], r.weights.per_model_elpd[m]));
    weights[std::string(family_name(r.fits[m].draws.family))] = r.weights.w[m];
  }
  report["models"] = models;
  report["stacking"] = {{"weights", weights},
                        {"objective", r.weights.objective},
                        {"iterations", r.weights.iterations}};

  const DoseGrid& grid = r.estimates.population.grid;
  report["grid"] = {{"points", grid.size()},
                    {"min_dose", grid.normalized.front() * grid.scale_factor},
                    {"max_dose", grid.normalized.back() * grid.scale_factor},
                    {"scale_factor", grid.scale_factor},
                    {"widenings", r.estimates.widenings}};

  json pop = json::array();
  for (std::size_t k = 0; k < cfg.ed_targets.size(); ++k) {
    pop.push_back(ed_json(cfg.ed_targets[k], r.estimates.population_eds[k]));
  }
  report["population_ed"] = pop;
  json studies = json::array();
  json study_files = json::array();
  for (std::size_t j = 0; j < r.estimates.study_eds.size(); ++j) {
    json eds = json::array();
    for (std::size_t k = 0; k < cfg.ed_targets.size(); ++k) {
      eds.push_back(ed_json(cfg.ed_targets[k], r.estimates.study_eds[j][k]));
    }
    studies.push_back({{"study", data.studies()[j]}, {"subjects", data.n_per_study()[j]}, {"eds", eds}});
    study_files.push_back({{"study", data.studies()[j]}, {"file", study_curve_file(j)}});
  }
  report["study_ed"] = studies;
  report["curves"] = {{"population", "population_curve.csv"}, {"studies", study_files}};
  report["converged"] = r.converged;
  report["warnings"] = r.warnings;
  r.report = std::move(report);
  return r;
}

std::string summary_text(const AnalysisResult& r) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  const json& rep = r.report;
  out << "stacksurv " << kVersion << "  seed " << rep["provenance"]["seed"].get<std::uint64_t>()
      << "  config " << rep["provenance"]["config_hash"].get<std::string>() << "\n";
  out << "data: " << r.data.size() << " observations in " << r.data.num_studies() << " studies\n\n";
  out << "model                 weight    elpd_loo   max Rhat  min ESS  k>0.7\n";
  for (const json& m : rep["models"]) {
    char line[160];
    const double rhat = m["diagnostics"]["rhat_max"].is_number() ? m["diagnostics"]["rhat_max"].get<double>() : kNaN;
    const double ess =
        m["diagnostics"]["ess_bulk_min"].is_number() ? m["diagnostics"]["ess_bulk_min"].get<double>() : kNaN;
    std::snprintf(line, sizeof line, "%-20s %7.4f %11.3f %10.4f %8.0f %6d%s\n",
                  m["family"].get<std::string>().c_str(), m["weight"].get<double>(),
                  m["elpd_loo"].get<double>(), rhat, ess, m["k_hat"]["above_0_7"].get<int>(),
                  m["converged"].get<bool>() ? "" : "  NOT CONVERGED");
    out << line;
  }
  out << "\npopulation eliciting doses (" << std::round(r.estimates.population.level * 1000) / 10
      << "% intervals)\n";
  for (const json& e : rep["population_ed"]) {
    out << "  " << e["label"].get<std::string>() << ": ";
    if (e["bracketed"].get<bool>()) {
      out << e["dose"].get<double>() << "  [" << e["lower"].get<double>() << ", "
          << e["upper"].get<double>() << "]\n";
    } else {
      out << "not bracketed by the dose grid\n";
    }
  }
  if (!r.warnings.empty()) {
    out << "\nwarnings:\n";
    for (const std::string& w : r.warnings) out << "  - " << w << "\n";
  }
  return out.str();
}

void write_outputs(const AnalysisResult& r, const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  {
    std::ofstream out(cfg.output_dir / "report.json");
    if (!out) throw std::runtime_error("cannot write report to " + cfg.output_dir.string());
    out << r.report.dump(2) << "\n";
  }
  {
    std::ofstream out(cfg.output_dir / "summary.txt");
    out << summary_text(r);
  }
  write_curve_csv(r.estimates.population, cfg.output_dir / "population_curve.csv");
  for (std::size_t j = 0; j < r.estimates.studies.size(); ++j) {
    write_curve_csv(r.estimates.studies[j], cfg.output_dir / study_curve_file(j));
  }
}

std::vector<ValidationCheck> validate_dataset(const RunConfig& cfg) {
  cfg.validate();
  std::vector<ValidationCheck> checks;
  const StudyDataset data = load_csv(cfg.data_path);
  {
    std::size_t left = 0, right = 0;
    for (const IntervalObservation& o : data.observations()) {
      if (o.t1 == 0.0) ++left;
      if (std::isinf(o.t2)) ++right;
    }
    std::ostringstream ss;
    ss << data.size() << " observations, " << data.num_studies() << " studies, " << left
       << " left-censored, " << right << " right-censored";
    checks.push_back({"intervals", true, ss.str()});
    if (left == data.size() || right == data.size()) {
      checks.push_back({"informative_data", false, "every observation is censored on the same side"});
    }
  }
  const StudyDataset normalized = normalize(data);
  {
    bool ok = normalized.max_finite_endpoint() == 1.0;
    double worst = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double a = data.observations()[i].t1;
      const double b = denormalize_dose(normalized, normalized.observations()[i].t1);
      worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(a)));
    }
    ok = ok && worst < 1e-12;
    std::ostringstream ss;
    ss << "scale factor " << normalized.scale_factor() << ", round-trip error " << worst;
    checks.push_back({"normalization", ok, ss.str()});
  }

  const double lo = [&] {
    double m = std::numeric_limits<double>::infinity();
    for (const IntervalObservation& o : normalized.observations()) {
      if (o.t1 > 0.0) m = std::min(m, o.t1);
      if (std::isfinite(o.t2)) m = std::min(m, o.t2);
    }
    return m;
  }();
  DoseGrid grid;
  grid.scale_factor = normalized.scale_factor();
  for (int g = 0; g < 100; ++g) grid.normalized.push_back(lo * 1e-2 * std::pow(1e2 / (lo * 1e-2), g / 99.0));

  for (Family f : cfg.models) {
    const std::string fam(family_name(f));
    const LogPosterior lp(f, normalized);
    Rng rng = make_stream(cfg.seed, 0x76616c00ULL + static_cast<std::uint64_t>(f));
    int finite = 0, nan = 0;
    double grad_err = 0.0;
    int grad_points = 0;
    Eigen::MatrixXd prior_draws(100, lp.dimension());
    for (int s = 0; s < 100; ++s) {
      const ParamVector theta = lp.sample_prior(rng);
      prior_draws.row(s) = lp.to_constrained(theta).transpose();
      const ValueAndGradient vg = lp.log_posterior_grad(theta);
      if (std::isnan(vg.value) || (std::isfinite(vg.value) && !vg.grad.allFinite())) ++nan;
      if (!std::isfinite(vg.value)) continue;
      ++finite;
      if (grad_points >= 5) continue;
      ++grad_points;
      for (int k = 0; k < theta.size(); ++k) {
        ParamVector up = theta, dn = theta;
        const double h = 1e-6 * std::max(1.0, std::abs(theta.values()[k]));
        up.values()[k] += h;
        dn.values()[k] -= h;
        const double fd = (lp.log_posterior(up) - lp.log_posterior(dn)) / (2 * h);
        if (std::isfinite(fd)) {
          // rounding in the two log-posterior evaluations bounds what the difference can resolve
          const double noise = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(vg.value)) / h;
          const double err = std::max(0.0, std::abs(fd - vg.grad[k]) - noise);
          grad_err = std::max(grad_err, err / std::max(1.0, std::abs(fd)));
        }
      }
    }
    {
      std::ostringstream ss;
      ss << finite << " of 100 prior draws with finite log posterior, " << nan << " NaN";
      checks.push_back({fam + ": prior_likelihood", nan == 0 && finite > 0, ss.str()});
    }
    {
      std::ostringstream ss;
      ss << "worst relative finite-difference error " << grad_err << " over " << grad_points << " points";
      checks.push_back({fam + ": gradient", grad_points > 0 && grad_err < 1e-4, ss.str()});
    }

    PosteriorDraws d;
    d.family = f;
    d.chains = 1;
    d.samples_per_chain = 100;
    d.theta = prior_draws;
    CurveOptions co;
    co.effects_per_draw = 5;
    co.seed = cfg.seed;
    const SurvivalCurveEstimate c = population_survival({d}, Eigen::VectorXd::Ones(1), grid, co);
    bool monotone = true;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (!(c.lower[g] <= c.mean_survival[g] && c.mean_survival[g] <= c.upper[g])) monotone = false;
      if (g > 0 && c.mean_survival[g] > c.mean_survival[g - 1]) monotone = false;
    }
    checks.push_back({fam + ": curve_shape", monotone, "prior-draw population curve on a 100-point grid"});
    std::vector<double> sorted = cfg.ed_targets;
    std::sort(sorted.begin(), sorted.end());
    double prev = 0.0;
    bool ordered = true;
    int evaluated = 0;
    for (double y : sorted) {
      try {
        const double ed = ed_from_curve(grid.normalized, c.mean_survival, y);
        if (ed < prev) ordered = false;
        prev = ed;
        ++evaluated;
      } catch (const EdNotBracketed&) {
      }
    }
    checks.push_back({fam + ": ed_order", ordered,
                      std::to_string(evaluated) + " bracketed targets on the prior-draw curve"});
  }
  return checks;
}

}  // namespace stacksurv
