#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stacksurv/draws.hpp"
#include "stacksurv/loo_stacking.hpp"

namespace stacksurv {

// Dose grid kept on the normalized scale the models were fit on, with the
// factor back to the original dose units.
struct DoseGrid {
  std::vector<double> normalized;
  double scale_factor = 1.0;

  std::vector<double> original() const;
  std::size_t size() const { return normalized.size(); }
};

// Builds a grid from original-scale doses; must be strictly increasing and >= 0.
DoseGrid grid_from_original(const std::vector<double>& doses, double scale_factor);

struct GridOptions {
  int points = 200;
  double lower_prob = 1e-4;
  double upper_prob = 1.0 - 1e-3;
  int max_draws_per_model = 200;  // subsample used for the pooled predictive
};

// Log-spaced grid between quantiles of the pooled stacked predictive (all
// observed studies plus a new study) over the normalized dose scale.
DoseGrid make_dose_grid(const std::vector<PosteriorDraws>& models, const Eigen::VectorXd& w,
                        double scale_factor, const GridOptions& options = {});
// Same grid span widened by `factor` on a log scale at both ends.
DoseGrid widen_grid(const DoseGrid& grid, double factor);

struct CurveOptions {
  double level = 0.90;
  // Composite draws for the bands; 0 means the largest per-model draw count.
  int composite_draws = 0;
  // New-study effects averaged per posterior draw in the population curve.
  int effects_per_draw = 20;
  std::uint64_t seed = 1;
};

struct SurvivalCurveEstimate {
  DoseGrid grid;
  std::vector<double> mean_survival;
  std::vector<double> lower;
  std::vector<double> upper;
  double level = 0.90;
  // composite draws x grid points; each row is nonincreasing
  Eigen::MatrixXd per_draw;
  std::vector<int> draw_model;  // model index behind each composite draw
};

// Posterior-predictive survival of one observed study, stacked across models.
// `study` indexes the columns b_1..b_J of the draws.
SurvivalCurveEstimate study_survival(const std::vector<PosteriorDraws>& models,
                                     const Eigen::VectorXd& w, int study, const DoseGrid& grid,
                                     const CurveOptions& options = {});

// Population-average survival: new study effects integrated out per draw.
SurvivalCurveEstimate population_survival(const std::vector<PosteriorDraws>& models,
                                          const Eigen::VectorXd& w, const DoseGrid& grid,
                                          const CurveOptions& options = {});

class EdNotBracketed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EdEstimate {
  double y = 0.0;
  double dose_mean = 0.0;  // original scale
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.90;
  // per-draw EDs outside the grid, recorded at the grid edge
  int censored_draws = 0;
};

// Dose where a monotone interpolant of survival on log-dose reaches 1 - y.
// Works on one curve given on the normalized grid; throws EdNotBracketed.
double ed_from_curve(const std::vector<double>& normalized_grid,
                     const std::vector<double>& survival, double y);

EdEstimate ed_quantile(const SurvivalCurveEstimate& curve, double y);

void write_curve_csv(const SurvivalCurveEstimate& curve, std::ostream& out);
void write_curve_csv(const SurvivalCurveEstimate& curve, const std::filesystem::path& path);

// Columns of a curve CSV written above (doses on the original scale).
struct CurveTable {
  std::vector<double> dose;
  std::vector<double> mean_survival;
  std::vector<double> lower;
  std::vector<double> upper;
};
CurveTable read_curve_csv(const std::filesystem::path& path);

}  // namespace stacksurv
