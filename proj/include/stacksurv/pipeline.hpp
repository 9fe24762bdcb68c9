#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "stacksurv/dataset.hpp"
#include "stacksurv/diagnostics.hpp"
#include "stacksurv/draws.hpp"
#include "stacksurv/failure_models.hpp"
#include "stacksurv/loo_stacking.hpp"
#include "stacksurv/sampler.hpp"
#include "stacksurv/survival_estimator.hpp"

namespace stacksurv {

inline constexpr const char* kVersion = "0.1.0";

// Invalid or unreadable run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::filesystem::path data_path;
  std::vector<Family> models{kAllFamilies.begin(), kAllFamilies.end()};
  SamplerConfig sampler;
  ConvergenceThresholds convergence;
  std::vector<double> ed_targets{0.01, 0.05, 0.10};
  double level = 0.90;
  GridOptions grid;
  double widen_factor = 10.0;
  int max_widenings = 4;
  int effects_per_draw = 20;
  bool study_curves = true;
  std::filesystem::path output_dir = "stacksurv_out";
  std::uint64_t seed = 1;

  // Throws ConfigError.
  void validate() const;
};

// Reads the JSON config layout documented in the README. Relative data paths
// are taken relative to `base_dir`. Unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

// Sampler seed used for one family under a run seed.
std::uint64_t family_seed(std::uint64_t seed, Family family);

struct ModelFit {
  PosteriorDraws draws;
  LooResult loo;
  ConvergenceReport convergence;
  bool non_centered = false;

  // Convergence checks passed and no divergence warning.
  bool converged() const { return convergence.pass && !draws.diagnostics.divergence_warning; }
};

// Fits each family to the normalized data with its own derived sampler seed.
std::vector<ModelFit> fit_models(const StudyDataset& normalized, const std::vector<Family>& families,
                                 const SamplerConfig& sampler, const ConvergenceThresholds& thresholds,
                                 std::uint64_t seed);

StackingWeights stack_fits(const std::vector<ModelFit>& fits);

struct EstimateOptions {
  std::vector<double> ed_targets{0.01, 0.05, 0.10};
  CurveOptions curve;
  GridOptions grid;
  double widen_factor = 10.0;
  int max_widenings = 4;
  bool study_curves = true;
  std::vector<std::string> study_labels;  // only used in warnings
};

struct Estimates {
  SurvivalCurveEstimate population;
  std::vector<SurvivalCurveEstimate> studies;
  // nullopt when the mean curve never crosses the target, even after widening
  std::vector<std::optional<EdEstimate>> population_eds;
  std::vector<std::vector<std::optional<EdEstimate>>> study_eds;
  int widenings = 0;
  std::vector<std::string> warnings;
};

// Curves and EDs from stacked draws. The grid is widened while any requested
// ED of any curve is not bracketed.
Estimates estimate(const std::vector<PosteriorDraws>& models, const Eigen::VectorXd& w,
                   double scale_factor, const EstimateOptions& options);

struct AnalysisResult {
  StudyDataset data;  // as loaded, original units
  std::vector<ModelFit> fits;
  StackingWeights weights;
  Estimates estimates;
  bool converged = false;
  std::vector<std::string> warnings;
  nlohmann::json report;
};

// Load, normalize, fit, stack and estimate. No files are written.
AnalysisResult analyze(const RunConfig& cfg);
AnalysisResult analyze(const RunConfig& cfg, const StudyDataset& data);

// Writes report.json, summary.txt and the curve CSVs into cfg.output_dir.
void write_outputs(const AnalysisResult& result, const RunConfig& cfg);
std::string summary_text(const AnalysisResult& result);

struct ValidationCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Data and model invariants that need no MCMC: interval validity,
// normalization round trip, finite prior-predictive likelihoods, monotone
// prior-draw curves and ordered EDs.
std::vector<ValidationCheck> validate_dataset(const RunConfig& cfg);

}  // namespace stacksurv
