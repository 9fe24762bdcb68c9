#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stacksurv/dataset.hpp"
#include "stacksurv/diagnostics.hpp"
#include "stacksurv/failure_models.hpp"
#include "stacksurv/sampler.hpp"

namespace stacksurv {

enum class TruthKind { WeibullIG, IGSkewT, Weibull };

enum class ComponentKind { Weibull, InverseGaussian, LogSkewNormal };

// One mixture component; its location comes from the center effect.
// Weibull: scale mu, shape `shape`. InverseGaussian: mean mu, shape `shape`.
// LogSkewNormal: log D is skew-normal with location mu, scale 1, slant `shape`.
struct TruthComponent {
  ComponentKind kind;
  double weight;
  double shape;
};

struct TruthSpec {
  TruthKind kind = TruthKind::IGSkewT;
  std::vector<TruthComponent> components;

  static TruthSpec weibull_ig();
  static TruthSpec ig_skew_t();
  // Degenerate single-component truth, for calibration runs.
  static TruthSpec weibull(double shape = 10.0);

  void validate() const;  // throws std::invalid_argument
};

std::string truth_name(TruthKind kind);
TruthKind parse_truth(const std::string& name);

struct StudyDesignSpec {
  int n_centers = 5;
  double subjects_mean = 10.0;
  // log-means of the center locations by component kind
  double log_mean_weibull = 1.0;
  double log_mean_ig = 7.0;
  double log_mean_skew = -0.8;
  double center_log_sd = 0.25;
  int doses = 10;
  double dose_log_mean = 1.0;
  double dose_log_sd = 1.4;
  double dose_shift = 0.75;
  // When positive, doses are rounded to multiples of this step (kept distinct).
  double dose_quantum = 0.0;
  int replications = 50;

  void validate() const;  // throws std::invalid_argument
};

// Center-level locations, one per truth component.
std::vector<double> draw_center_locations(const StudyDesignSpec& design, const TruthSpec& truth, Rng& rng);

double sample_inverse_gaussian(double mean, double shape, Rng& rng);
double sample_skew_normal(double location, double scale, double slant, Rng& rng);

// One failure dose from the mixture at the given component locations.
double draw_truth_sample(const TruthSpec& truth, const std::vector<double>& mu, Rng& rng);

// Mixture CDF at fixed locations.
double truth_cdf(const TruthSpec& truth, const std::vector<double>& mu, double d);

struct SimulatedData {
  StudyDataset data;
  std::vector<double> latent;  // true failure dose of each observation
  std::vector<std::vector<double>> doses;  // dose ladder per center
};

SimulatedData generate_study_data(const StudyDesignSpec& design, const TruthSpec& truth, Rng& rng);

// Population EDs of the truth with center effects integrated out, from
// `draws` Monte Carlo failure doses.
std::vector<double> true_population_eds(const StudyDesignSpec& design, const TruthSpec& truth,
                                        const std::vector<double>& ys, std::uint64_t seed,
                                        int draws = 1000000);

struct MseStudyConfig {
  StudyDesignSpec design;
  TruthSpec truth;
  SamplerConfig sampler;
  ConvergenceThresholds convergence;
  std::vector<double> ed_targets{0.01, 0.05, 0.10};
  int effects_per_draw = 20;
  int truth_draws = 1000000;
  int bootstrap = 2000;
  double bootstrap_level = 0.95;
  std::uint64_t seed = 1;
};

struct ReplicationRecord {
  int index = 0;
  std::uint64_t seed = 0;
  int subjects = 0;
  bool excluded = false;
  std::string reason;
  std::vector<double> stacked_ed;  // original dose scale
  std::vector<double> weibull_ed;
  std::vector<double> weights;  // stacking weights in family order
};

struct MseRatioRow {
  double y = 0.0;
  double true_ed = 0.0;
  double mse_stacked = 0.0;
  double mse_weibull = 0.0;
  double ratio = 0.0;
  double lower = 0.0;  // bootstrap percentile interval of the ratio
  double upper = 0.0;
};

struct MseStudyResult {
  std::vector<MseRatioRow> rows;
  std::vector<ReplicationRecord> replications;
  int used = 0;
  int excluded = 0;
};

// Fits the stacked suite and the Weibull random-effects model to each
// replication and compares squared errors of the population EDs. A
// replication is excluded when any fit fails its convergence checks, when a
// fit throws, or when an ED is not bracketed. `progress` is called after each
// replication.
MseStudyResult run_mse_study(const MseStudyConfig& cfg,
                             const std::function<void(const ReplicationRecord&)>& progress = {});

// A set of MSE studies (truths x center counts) as driven from the CLI.
struct SimulationPlan {
  std::vector<TruthKind> truths{TruthKind::IGSkewT, TruthKind::WeibullIG};
  std::vector<int> n_centers{5};
  double ig_shape = 0.25;
  MseStudyConfig base;  // design.n_centers and truth are set per study
  std::filesystem::path output_dir = "stacksurv_sim";

  static SimulationPlan desk_scale();
  // 200 replications, 5/15/30 centers, default sampler and thresholds.
  static SimulationPlan full_scale();
};

// Overrides on top of `plan` from a JSON object (layout in the README).
// Throws std::invalid_argument on unknown keys or bad values.
SimulationPlan simulation_plan_from_json(const nlohmann::json& j, SimulationPlan plan);

TruthSpec make_truth(TruthKind kind, double ig_shape);

// Runs every study of the plan and writes mse_table.csv, replications.csv and
// manifest.json into plan.output_dir.
std::vector<MseStudyResult> run_simulation(
    const SimulationPlan& plan, const std::function<void(const std::string&)>& log = {});

void write_mse_table(const MseStudyResult& result, const MseStudyConfig& cfg, std::ostream& out);
void write_replications(const MseStudyResult& result, std::ostream& out);
nlohmann::json mse_manifest(const MseStudyResult& result, const MseStudyConfig& cfg);

}  // namespace stacksurv
