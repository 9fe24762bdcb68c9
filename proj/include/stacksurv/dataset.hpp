#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stacksurv {

// Raised for malformed input data. `line()` is the 1-based source line, or 0
// when the problem is not tied to a line.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Failure known to lie in [t1, t2]. t1 == 0 is left-censoring, t2 == inf is
// right-censoring.
struct IntervalObservation {
  std::string study;
  double t1;
  double t2;
};

// Immutable multi-study interval-censored sample. Studies are indexed in order
// of first appearance; each observation carries its study index.
class StudyDataset {
 public:
  // Throws DataError if any interval violates 0 <= t1 < t2.
  explicit StudyDataset(std::vector<IntervalObservation> observations, double scale_factor = 1.0);

  const std::vector<IntervalObservation>& observations() const { return observations_; }
  const std::vector<std::string>& studies() const { return studies_; }
  const std::vector<std::size_t>& study_index() const { return study_index_; }
  const std::vector<std::size_t>& n_per_study() const { return n_per_study_; }
  std::size_t size() const { return observations_.size(); }
  std::size_t num_studies() const { return studies_.size(); }
  // Product of all normalization divisors applied since the data were loaded.
  double scale_factor() const { return scale_factor_; }

  // Throws DataError for an unknown label.
  std::size_t study_position(std::string_view study) const;
  double max_finite_endpoint() const;

 private:
  std::vector<IntervalObservation> observations_;
  std::vector<std::string> studies_;
  std::vector<std::size_t> study_index_;
  std::vector<std::size_t> n_per_study_;
  double scale_factor_;
};

// CSV with header `study,dose_low,dose_high`; `inf` (any case) in dose_high
// marks right-censoring; lines starting with '#' are comments.
StudyDataset parse_csv(std::istream& in);
StudyDataset load_csv(const std::filesystem::path& path);
void write_csv(const StudyDataset& ds, std::ostream& out);
void write_csv(const StudyDataset& ds, const std::filesystem::path& path);

// Divides every finite endpoint by the largest finite endpoint.
StudyDataset normalize(const StudyDataset& ds);
double denormalize_dose(const StudyDataset& ds, double d);

// Multiplies every finite endpoint by `factor` (unit change); scale factor unchanged.
StudyDataset rescale_doses(const StudyDataset& ds, double factor);

}  // namespace stacksurv
