#pragma once

// Distances between (weighted) empirical measures, the empirical-measure rate
// function R_{d,q}, moment errors of the initial mass and the coupling gap.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mfbranch/measures.hpp"
#include "mfbranch/transport.hpp"

namespace mfbranch {

class Stream;
struct CoupledState;

/// Dimension and moment order of the rate function; q > 2 and the
/// logarithmic cases (q = 4 for d <= 4, q = d/(d-2) for d > 4) are rejected.
struct RateParams {
  std::size_t dim;
  double q;

  /// Throws ExcludedCase or ConfigError.
  void validate() const;
};

/// d<4: N^{-1/2} + N^{-(q-2)/q}; d=4: N^{-1/2} log(1+N) + N^{-(q-2)/q};
/// d>4: N^{-2/d} + N^{-(q-2)/q}.
double fg_rate(const RateParams& params, double n);

struct TransportEstimate {
  double cost;
  /// False when the value comes from a non-optimal feasible plan (upper bound).
  bool exact;
};

struct MetricOptions {
  BirthSamplerOptions solver{};
};

/// Optimal (or upper-bound) transport cost between two empirical measures.
/// d = 1 with a convex cost: monotone coupling; equal sizes up to the cap:
/// assignment; otherwise the best feasible plan available (monotone for d = 1,
/// rounded entropic for d >= 2), flagged inexact.
TransportEstimate transport_cost(const ProbabilityEmpirical& p, const ProbabilityEmpirical& r, GroundCost kind,
                                 const MetricOptions& opts = {});

double w2(const ProbabilityEmpirical& p, const ProbabilityEmpirical& r, const MetricOptions& opts = {});
double w1(const ProbabilityEmpirical& p, const ProbabilityEmpirical& r, const MetricOptions& opts = {});

/// W2^2 in d = 1 between ascending value lists (monotone coupling).
double w2_squared_sorted(std::span<const double> sorted_a, std::span<const double> sorted_b);

struct BlUpper {
  double value;
  /// Transport term with ground cost |x-y| ^ 2 between normalized laws.
  double transport_term;
  double mass_gap;
  bool exact;
};

/// mass(m) * T_trunc(normalize(m), r_law) + |mass(m) - r_mass|; r_mass when m is
/// extinct. An upper bound on ||m - r_mass r_law||_BL* in every case.
BlUpper bl_upper(const WeightedPointMeasure& m, double r_mass, const ProbabilityEmpirical& r_law,
                 const MetricOptions& opts = {}, std::span<const double> sorted_law = {});

/// Test functions phi(x) = clamp(slope <dir, x> + offset, -1, 1) / (1 + slope),
/// which have Lipschitz constant + sup norm equal to 1. The constant function
/// 1/1 is always included.
class RidgeDictionary {
 public:
  struct Ridge {
    std::vector<double> direction;
    double slope;
    double offset;
  };

  /// Directions uniform on the sphere, slopes log-uniform on [0.05, 20],
  /// centres uniform on [lo, hi] along the direction.
  static RidgeDictionary random(std::size_t dim, std::size_t count, double lo, double hi, Stream& rng);

  RidgeDictionary() = default;
  explicit RidgeDictionary(std::vector<Ridge> ridges) : ridges_(std::move(ridges)) {}

  const std::vector<Ridge>& ridges() const noexcept { return ridges_; }
  std::size_t size() const noexcept { return ridges_.size() + 1; }

  /// <m, phi_k> for the finite measure with given mass and atoms; entry 0 is
  /// the constant function.
  std::vector<double> integrals(const PointSet& atoms, double total_mass) const;

  static double evaluate(const Ridge& ridge, std::span<const double> x) noexcept;

 private:
  std::vector<Ridge> ridges_;
};

/// max_k |<m - r_mass r_law, phi_k>| over the dictionary.
double bl_lower(const WeightedPointMeasure& m, double r_mass, const ProbabilityEmpirical& r_law,
                const RidgeDictionary& dictionary);
/// Same with precomputed reference integrals (entry-wise from `integrals`).
double bl_lower(const WeightedPointMeasure& m, const RidgeDictionary& dictionary,
                std::span<const double> reference_integrals);
/// Builds a random dictionary of `count` ridges from `rng` over the data range.
double bl_lower(const WeightedPointMeasure& m, double r_mass, const ProbabilityEmpirical& r_law,
                std::size_t count, Stream& rng);

/// (1/K) sum_n |X^n - Y^n|^2; zero when empty.
double coupling_gap(const CoupledState& state);
/// Index-aligned variant on observed measures of equal atom count.
double coupling_gap(const WeightedPointMeasure& mu, const WeightedPointMeasure& nu);

/// (mean |m_i - limit|^p)^{1/p}.
double ip_error(std::span<const double> samples, double limit_mass, double p);

struct DistanceReport {
  double w2sq_mu_nu = 0.0;
  double w2sq_nu_ref = 0.0;
  double bl_upper = 0.0;
  double bl_lower = 0.0;
  double mass_gap = 0.0;
  double coupling_gap = 0.0;
  double n_over_k = 0.0;
};

/// Reference snapshot data reused across replicates at one observation time.
struct ReferenceView {
  const PointSet* sample;
  std::span<const double> sorted_values;
  double mass;
  const RidgeDictionary* dictionary;
  std::span<const double> dictionary_integrals;
};

/// All distances between mu^K, nu^K and the reference at one time. Terms
/// weighted by N/K vanish on extinction.
DistanceReport distance_report(const WeightedPointMeasure& mu, const WeightedPointMeasure& nu,
                               const ReferenceView& reference, const MetricOptions& opts = {});

}  // namespace mfbranch
