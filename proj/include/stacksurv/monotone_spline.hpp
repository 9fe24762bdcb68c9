#pragma once

#include <optional>
#include <vector>

namespace stacksurv {

// Shape-preserving piecewise-cubic Hermite interpolant (Fritsch-Carlson
// slopes). Monotone data give a monotone interpolant with no overshoot.
class MonotoneCubicSpline {
 public:
  // x strictly increasing, same length as y, at least 2 points.
  MonotoneCubicSpline(std::vector<double> x, std::vector<double> y);

  double operator()(double x) const;
  double front_x() const { return x_.front(); }
  double back_x() const { return x_.back(); }

  // Smallest x in the knot range with value == target, for a monotone
  // interpolant. Empty when target is not bracketed by the knot values.
  std::optional<double> solve(double target) const;

 private:
  double segment_value(std::size_t k, double x) const;

  std::vector<double> x_;
  std::vector<double> y_;
  std::vector<double> slope_;
};

}  // namespace stacksurv
