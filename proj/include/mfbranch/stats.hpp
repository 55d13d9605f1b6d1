#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace mfbranch {

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  /// Half-width of the 95% confidence interval for the slope.
  double ci_half_width = 0.0;
  double slope_stderr = 0.0;
  double max_abs_residual = 0.0;
  std::size_t points = 0;

  double ci_low() const noexcept { return slope - ci_half_width; }
  double ci_high() const noexcept { return slope + ci_half_width; }
  bool ci_contains(double v) const noexcept { return v >= ci_low() && v <= ci_high(); }
};

/// OLS of log(value) on log(K). Needs >= 3 points, distinct K, values > 0.
SlopeFit fit_slope(std::span<const std::pair<double, double>> points);

struct KsResult {
  double statistic;
  double p_value;
};

/// Two-sample Kolmogorov-Smirnov test, asymptotic p-value with the usual
/// effective-size correction.
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Kolmogorov survival function Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
double kolmogorov_survival(double lambda);

double mean(std::span<const double> v);
/// Sample standard deviation / sqrt(n); 0 for fewer than two values.
double standard_error(std::span<const double> v);
double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace mfbranch
