#include "doctest.h"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "stacksurv/pipeline.hpp"

using namespace stacksurv;
using nlohmann::json;

namespace {

const std::filesystem::path kData = std::filesystem::path(STACKSURV_SOURCE_DIR) / "data";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("stacksurv_pipeline_" + name);
  std::filesystem::remove_all(p);
  return p;
}

RunConfig quick_config(std::vector<Family> models) {
  RunConfig cfg;
  cfg.data_path = kData / "synthetic_example.csv";
  cfg.models = std::move(models);
  cfg.sampler.chains = 2;
  cfg.sampler.warmup = 300;
  cfg.sampler.samples = 300;
  cfg.convergence.max_rhat = 1.05;
  cfg.convergence.min_ess = 100;
  cfg.seed = 77;
  return cfg;
}

StudyDataset scaled(const StudyDataset& ds, double factor) {
  std::vector<IntervalObservation> obs = ds.observations();
  for (IntervalObservation& o : obs) {
    o.t1 *= factor;
    if (std::isfinite(o.t2)) o.t2 *= factor;
  }
  return StudyDataset(obs);
}

}  // namespace

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("family seeds differ by family and by run seed") {
  std::set<std::uint64_t> seen;
  for (Family f : kAllFamilies) {
    seen.insert(family_seed(1, f));
    seen.insert(family_seed(2, f));
  }
  CHECK(seen.size() == 10);
  CHECK(family_seed(1, Family::Weibull) == family_seed(1, Family::Weibull));
}

TEST_CASE("config parsing") {
  const RunConfig d = run_config_from_json(json{{"data", "x.csv"}}, "/base");
  CHECK(d.data_path == std::filesystem::path("/base/x.csv"));
  CHECK(d.models.size() == 5);
  CHECK(d.sampler.chains == 4);
  CHECK(d.sampler.warmup == 1000);
  CHECK(d.sampler.samples == 1000);
  CHECK(d.convergence.max_rhat == 1.01);
  CHECK(d.convergence.min_ess == 400);
  CHECK(d.ed_targets == std::vector<double>{0.01, 0.05, 0.10});
  CHECK(d.level == 0.90);

  const RunConfig abs = run_config_from_json(json{{"data", "/abs/x.csv"}}, "/base");
  CHECK(abs.data_path == std::filesystem::path("/abs/x.csv"));

  const json full = {{"data", "x.csv"},
                     {"models", {"log_logistic", "weibull"}},
                     {"seed", 9},
                     {"sampler", {{"chains", 2}, {"warmup", 200}, {"samples", 300}}},
                     {"convergence", {{"max_rhat", 1.05}}},
                     {"ed_targets", {0.2}},
                     {"level", 0.8},
                     {"grid", {{"points", 50}, {"widen_factor", 4.0}}}};
  const RunConfig c = run_config_from_json(full);
  CHECK(c.models == std::vector<Family>{Family::LogLogistic, Family::Weibull});
  CHECK(c.seed == 9);
  CHECK(c.sampler.samples == 300);
  CHECK(c.convergence.min_ess == 400);
  CHECK(c.grid.points == 50);
  CHECK(c.widen_factor == 4.0);
  // round trip through the report form
  CHECK(to_json(run_config_from_json(to_json(c))) == to_json(c));

  auto bad = [&](json j) {
    j.emplace("data", "x.csv");
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  };
  bad(json{{"colour", 1}});
  bad(json{{"sampler", {{"chain", 2}}}});
  bad(json{{"models", {"gumbel"}}});
  bad(json{{"models", json::array()}});
  bad(json{{"models", {"weibull", "weibull"}}});
  bad(json{{"seed", "one"}});
  bad(json{{"level", 1.0}});
  bad(json{{"ed_targets", {0.0}}});
  bad(json{{"sampler", {{"warmup", 10}}}});
  bad(json{{"grid", {{"lower_prob", 0.9}, {"upper_prob", 0.1}}}});
  CHECK_THROWS_AS(run_config_from_json(json::object()), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);

  const auto p = scratch("bad.json");
  std::ofstream(p) << "{ not json";
  CHECK_THROWS_AS(load_run_config(p), ConfigError);
  std::filesystem::remove(p);
}

TEST_CASE("missing or malformed data is a data error") {
  RunConfig cfg = quick_config({Family::Weibull});
  cfg.data_path = "/nonexistent/data.csv";
  CHECK_THROWS_AS(analyze(cfg), DataError);
  CHECK_THROWS_AS(validate_dataset(cfg), DataError);
}

TEST_CASE("a single family gets all the weight") {
  const AnalysisResult r = analyze(quick_config({Family::Weibull}));
  REQUIRE(r.weights.w.size() == 1);
  CHECK(r.weights.w[0] == 1.0);
  CHECK(r.report["models"][0]["weight"] == 1.0);
  CHECK(r.report["models"][0]["family"] == "weibull");
}

TEST_CASE("outputs are reproducible and consistent with the exported curves") {
  RunConfig cfg = quick_config({Family::Weibull, Family::LogLogistic, Family::LogLaplace});
  cfg.output_dir = scratch("repro");
  const AnalysisResult a = analyze(cfg);
  write_outputs(a, cfg);
  const std::string report = slurp(cfg.output_dir / "report.json");
  const std::string curve = slurp(cfg.output_dir / "population_curve.csv");
  write_outputs(analyze(cfg), cfg);
  CHECK(slurp(cfg.output_dir / "report.json") == report);
  CHECK(slurp(cfg.output_dir / "population_curve.csv") == curve);

  const json rep = json::parse(report);
  double total = 0.0;
  for (const json& m : rep["models"]) {
    CHECK(m["weight"].get<double>() >= 0.0);
    total += m["weight"].get<double>();
    CHECK(m["diagnostics"].contains("rhat_max"));
    CHECK(m["k_hat"].contains("max"));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rep["provenance"]["seed"] == 77);
  CHECK(rep["provenance"]["config_hash"].get<std::string>().size() == 16);
  CHECK(rep["curves"]["studies"].size() == a.data.num_studies());

  // EDs recomputed from the population CSV match the report
  const CurveTable t = read_curve_csv(cfg.output_dir / "population_curve.csv");
  const double s = rep["grid"]["scale_factor"].get<double>();
  std::vector<double> normalized;
  for (double d : t.dose) normalized.push_back(d / s);
  for (const json& e : rep["population_ed"]) {
    CAPTURE(e["label"].get<std::string>());
    REQUIRE(e["bracketed"].get<bool>());
    const double ed = ed_from_curve(normalized, t.mean_survival, e["y"].get<double>()) * s;
    CHECK(std::abs(ed - e["dose"].get<double>()) <= 1e-6 * e["dose"].get<double>());
    CHECK(e["lower"].get<double>() <= e["dose"].get<double>());
    CHECK(e["dose"].get<double>() <= e["upper"].get<double>());
  }
  for (const json& study : rep["study_ed"]) CHECK(study["eds"].size() == 3);

  const std::string summary = slurp(cfg.output_dir / "summary.txt");
  CHECK(summary.find("ED05") != std::string::npos);

  cfg.seed = 78;
  const AnalysisResult other = analyze(cfg);
  CHECK(other.report.dump() != a.report.dump());
  std::filesystem::remove_all(cfg.output_dir);
}

TEST_CASE("rescaling the doses rescales the EDs") {
  const RunConfig cfg = quick_config({Family::Weibull, Family::LogGaussian});
  const StudyDataset base = load_csv(cfg.data_path);
  const AnalysisResult a = analyze(cfg, base);
  const AnalysisResult b = analyze(cfg, scaled(base, 1000.0));
  for (Eigen::Index m = 0; m < a.weights.w.size(); ++m) CHECK(a.weights.w[m] == b.weights.w[m]);
  REQUIRE(a.estimates.population_eds.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    REQUIRE(a.estimates.population_eds[k]);
    REQUIRE(b.estimates.population_eds[k]);
    const EdEstimate& x = *a.estimates.population_eds[k];
    const EdEstimate& y = *b.estimates.population_eds[k];
    CHECK(y.dose_mean == doctest::Approx(1000.0 * x.dose_mean).epsilon(1e-12));
    CHECK(y.lower == doctest::Approx(1000.0 * x.lower).epsilon(1e-12));
    CHECK(y.upper == doctest::Approx(1000.0 * x.upper).epsilon(1e-12));
  }
}

TEST_CASE("dataset validation on the bundled data") {
  RunConfig cfg = quick_config({kAllFamilies.begin(), kAllFamilies.end()});
  const std::vector<ValidationCheck> checks = validate_dataset(cfg);
  CHECK(checks.size() == 2 + 4 * 5);
  for (const ValidationCheck& c : checks) {
    CAPTURE(c.name);
    CAPTURE(c.detail);
    CHECK(c.pass);
  }
}

TEST_CASE("bundled data matches its generator output") {
  const std::filesystem::path generated =
      std::filesystem::path(STACKSURV_BINARY_DIR) / "data" / "synthetic_example.csv";
  REQUIRE(std::filesystem::exists(generated));
  CHECK(slurp(generated) == slurp(kData / "synthetic_example.csv"));
  const RunConfig cfg = load_run_config(kData / "example_config.json");
  CHECK(cfg.data_path == kData / "synthetic_example.csv");
  CHECK(load_csv(cfg.data_path).size() == 88);
}
