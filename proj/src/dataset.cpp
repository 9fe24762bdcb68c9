#include "stacksurv/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace stacksurv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

double parse_dose(std::string_view field, bool allow_inf, std::size_t line, const char* column) {
  if (allow_inf && (iequals(field, "inf") || iequals(field, "+inf") ||
                    iequals(field, "infinity"))) {
    return kInf;
  }
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value)) {
    throw DataError("line " + std::to_string(line) + ": cannot parse " + column + " '" +
                        std::string(field) + "'",
                    line);
  }
  if (value < 0.0) {
    throw DataError("line " + std::to_string(line) + ": negative " + column, line);
  }
  return value;
}

std::string format_dose(double d) {
  if (d == kInf) return "inf";
  std::ostringstream ss;
  ss.precision(std::numeric_limits<double>::max_digits10);
  ss << d;
  return ss.str();
}

}  // namespace

StudyDataset::StudyDataset(std::vector<IntervalObservation> observations, double scale_factor)
    : observations_(std::move(observations)), scale_factor_(scale_factor) {
  if (!(scale_factor_ > 0.0) || !std::isfinite(scale_factor_)) {
    throw DataError("scale factor must be positive and finite");
  }
  std::unordered_map<std::string, std::size_t> lookup;
  study_index_.reserve(observations_.size());
  for (std::size_t i = 0; i < observations_.size(); ++i) {
    const IntervalObservation& obs = observations_[i];
    if (!(obs.t1 >= 0.0) || !(obs.t2 > obs.t1) || obs.t1 == kInf) {
      throw DataError("observation " + std::to_string(i + 1) +
                      ": interval must satisfy 0 <= t1 < t2");
    }
    auto [it, inserted] = lookup.emplace(obs.study, studies_.size());
    if (inserted) {
      studies_.push_back(obs.study);
      n_per_study_.push_back(0);
    }
    study_index_.push_back(it->second);
    ++n_per_study_[it->second];
  }
}

std::size_t StudyDataset::study_position(std::string_view study) const {
  for (std::size_t j = 0; j < studies_.size(); ++j) {
    if (studies_[j] == study) return j;
  }
  throw DataError("unknown study '" + std::string(study) + "'");
}

double StudyDataset::max_finite_endpoint() const {
  double m = 0.0;
  for (const IntervalObservation& obs : observations_) {
    m = std::max(m, obs.t1);
    if (obs.t2 != kInf) m = std::max(m, obs.t2);
  }
  return m;
}

StudyDataset parse_csv(std::istream& in) {
  std::vector<IntervalObservation> observations;
  std::string raw;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line_no == 1 && line.size() >= 3 && line.substr(0, 3) == "\xEF\xBB\xBF") {
      line = trim(line.substr(3));
    }
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_fields(line);
    if (!header_seen) {
      if (fields.size() != 3 || fields[0] != "study" || fields[1] != "dose_low" ||
          fields[2] != "dose_high") {
        throw DataError("line " + std::to_string(line_no) +
                            ": expected header 'study,dose_low,dose_high'",
                        line_no);
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 3) {
      throw DataError("line " + std::to_string(line_no) + ": expected 3 fields, got " +
                          std::to_string(fields.size()),
                      line_no);
    }
    if (fields[0].empty()) {
      throw DataError("line " + std::to_string(line_no) + ": empty study label", line_no);
    }
    const double lo = parse_dose(fields[1], false, line_no, "dose_low");
    const double hi = parse_dose(fields[2], true, line_no, "dose_high");
    if (!(hi > lo)) {
      throw DataError("line " + std::to_string(line_no) + ": dose_low must be below dose_high",
                      line_no);
    }
    observations.push_back({std::string(fields[0]), lo, hi});
  }
  if (!header_seen) throw DataError("missing header 'study,dose_low,dose_high'");
  if (observations.empty()) throw DataError("data file has no observations");
  return StudyDataset(std::move(observations));
}

StudyDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");
  return parse_csv(in);
}

void write_csv(const StudyDataset& ds, std::ostream& out) {
  out << "study,dose_low,dose_high\n";
  for (const IntervalObservation& obs : ds.observations()) {
    if (obs.study.find_first_of(",\r\n") != std::string::npos || obs.study.front() == '#') {
      throw DataError("study label '" + obs.study + "' cannot be written as a CSV field");
    }
    out << obs.study << ',' << format_dose(obs.t1) << ',' << format_dose(obs.t2) << '\n';
  }
}

void write_csv(const StudyDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  write_csv(ds, out);
}

StudyDataset normalize(const StudyDataset& ds) {
  const double m = ds.max_finite_endpoint();
  if (!(m > 0.0)) throw DataError("normalization needs at least one finite positive endpoint");
  std::vector<IntervalObservation> obs = ds.observations();
  for (IntervalObservation& o : obs) {
    o.t1 /= m;
    if (o.t2 != kInf) o.t2 /= m;
  }
  return StudyDataset(std::move(obs), ds.scale_factor() * m);
}

double denormalize_dose(const StudyDataset& ds, double d) { return d * ds.scale_factor(); }

StudyDataset rescale_doses(const StudyDataset& ds, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw DataError("rescale factor must be positive");
  std::vector<IntervalObservation> obs = ds.observations();
  for (IntervalObservation& o : obs) {
    o.t1 *= factor;
    if (o.t2 != kInf) o.t2 *= factor;
  }
  return StudyDataset(std::move(obs), ds.scale_factor());
}

}  // namespace stacksurv
