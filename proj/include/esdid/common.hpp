#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace esdid {

// Values indexed by period 1..T; slot 0 is unused so formulas read like the math.
using Series = std::vector<std::optional<double>>;

// Bad or unreadable input data (CLI exit code 2).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The data cannot support the estimator (CLI exit code 3).
struct DesignRestrictionViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inconsistent option combination.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Nothing estimable after filtering.
struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Side { plus = 0, minus = 1 };
enum class Switch { never, in, out };

inline const char* to_string(Switch s) {
  switch (s) {
    case Switch::in: return "in";
    case Switch::out: return "out";
    default: return "never";
  }
}

// Neumaier summation. Weights in county-level data span many orders of
// magnitude, so naive accumulation loses digits.
class CompensatedSum {
 public:
  void add(double v) {
    double t = sum_ + v;
    if (std::fabs(sum_) >= std::fabs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(double v) {
    add(v);
    return *this;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline bool same_value(double a, double b, double tol) {
  return tol <= 0.0 ? a == b : std::fabs(a - b) <= tol;
}

}  // namespace esdid
