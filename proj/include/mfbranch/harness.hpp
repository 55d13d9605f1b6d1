#pragma once

// Convergence experiments over a grid of carrying capacities K: initial
// conditions, the shared reference flow, replicate execution, aggregation,
// slope fits and persistence.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mfbranch/config.hpp"
#include "mfbranch/metrics.hpp"
#include "mfbranch/stats.hpp"

namespace mfbranch {

class Stream;

/// Fixed mode: round(K n0) i.i.d. atoms. Poisson mode: Poisson(K n0) atoms
/// (possibly none).
WeightedPointMeasure generate_initial(const InitialSpec& spec, std::size_t dim, std::int64_t scale, Stream& rng);

/// Reference flow shared by every K and replicate of a configuration.
/// `salt` selects an independent ensemble (0 is the experiment's own).
ReferenceFlow build_reference(const ExperimentConfig& config, unsigned threads = 1, std::uint64_t salt = 0);

SimulationConfig build_simulation(const ExperimentConfig& config, std::int64_t scale,
                                  const WeightedPointMeasure& initial);

/// Seeds of replicate `replicate` at capacity K; independent of grid position.
struct ReplicateSeeds {
  std::uint64_t initial;
  std::uint64_t events;
  std::uint64_t streams;
};
ReplicateSeeds replicate_seeds(std::uint64_t master, std::int64_t scale, std::uint64_t replicate);

struct DistanceRow {
  std::int64_t scale;
  std::uint64_t replicate;
  double time;
  DistanceReport report;
};

inline constexpr std::array<const char*, 7> kDistanceFields{
    "w2sq_mu_nu", "w2sq_nu_ref", "bl_upper", "bl_lower", "mass_gap", "coupling_gap", "n_over_k"};

std::array<double, 7> field_values(const DistanceReport& r) noexcept;

struct AggregateRow {
  std::int64_t scale;
  double time;
  std::size_t count;
  std::array<double, 7> mean;
  std::array<double, 7> standard_error;
};

/// Active branch of the rate bound and the predicted decay exponent
/// min(1/4 or 1/d, (q-2)/(2q)) of sup_t E ||mu^K_t - mu_t||_BL*.
struct RateAnnotation {
  std::string branch;
  double predicted_exponent;
  /// Exponent of the initial-mass moment error term (Poisson initial data).
  std::optional<double> initial_mass_exponent;
};

RateAnnotation annotate_rate(std::size_t dim, double q, InitialMode mode);

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<DistanceRow> rows;
  std::vector<AggregateRow> aggregates;
  /// log sup_t mean bl_upper against log K.
  std::optional<SlopeFit> bl_fit;
  /// log sup_t mean coupling_gap against log K.
  std::optional<SlopeFit> gap_fit;
  RateAnnotation annotation;
  /// fg_rate(K) per grid value when the moment order admits one.
  std::vector<double> fg_rates;
  bool partial = false;
  std::vector<std::string> failures;
  double wall_seconds = 0.0;
};

using ProgressFn = std::function<void(std::int64_t scale, std::uint64_t replicate)>;

/// Runs every (K, replicate) cell. Events of replicate 0 at each K are kept
/// for events.csv when `events` is non-null.
ExperimentResult run_convergence_experiment(const ExperimentConfig& config, unsigned threads = 1,
                                            std::vector<std::pair<std::int64_t, std::vector<EventRecord>>>* events =
                                                nullptr,
                                            const ProgressFn& progress = {});

/// Mean and standard error per (K, t), in grid order.
std::vector<AggregateRow> aggregate_rows(const std::vector<DistanceRow>& rows,
                                         const std::vector<std::int64_t>& k_grid,
                                         const std::vector<double>& times);

void write_distances_csv(std::ostream& out, const std::vector<DistanceRow>& rows);
void write_events_csv(std::ostream& out, const std::vector<std::pair<std::int64_t, std::vector<EventRecord>>>& events);
/// Deterministic JSON: slopes, CIs, predicted exponents, aggregates. No timing
/// and no output path.
void write_summary_json(std::ostream& out, const ExperimentResult& result);
/// Writes distances.csv, summary.json and (if given) events.csv under `dir`.
void write_outputs(const std::string& dir, const ExperimentResult& result,
                   const std::vector<std::pair<std::int64_t, std::vector<EventRecord>>>* events);

/// W2 between N i.i.d. draws of a law and the law itself, over a grid of N.
struct FgCheckResult {
  std::vector<std::int64_t> sizes;
  std::vector<double> mean_w2sq;
  std::vector<double> se_w2sq;
  std::vector<double> mean_w2;
  std::optional<SlopeFit> w2sq_fit;
  std::optional<SlopeFit> w2_fit;
  /// fg_rate(N) when the law has a finite admissible moment order.
  std::vector<double> predicted;
  /// True when W2 is computed against the exact law (d = 1 Gaussian).
  bool exact_law = false;
};

/// W2^2 between an N-sample and a centred Gaussian N(0, s^2) in d = 1, exactly.
double w2sq_to_gaussian(std::vector<double> sample, double s);

/// Other laws and d >= 2 are compared against an independent sample of size
/// 16 max(N).
FgCheckResult fg_check(const InitialSpec& law, std::size_t dim, const std::vector<std::int64_t>& sizes,
                       std::size_t replicas, std::uint64_t seed, unsigned threads = 1);

enum class ParticleSystem { Interacting, Auxiliary };

struct ChaosReport {
  std::int64_t scale = 0;
  double time = 0.0;
  std::size_t atoms = 0;
  std::size_t qualifying = 0;
  /// Fraction of replicas whose atoms pass a 5% two-sample KS test against an
  /// independent reference ensemble (first coordinate).
  double ks_pass_rate = 0.0;
  /// Across-replica correlation of the first coordinate of atoms (a, b), a < b.
  std::vector<double> correlations;
  /// 1 / sqrt(qualifying - 1): null standard error of a correlation.
  double correlation_se = 0.0;
  double max_abs_correlation = 0.0;
};

/// Across replicas with N_t >= atoms, checks that the first `atoms` particles
/// of the chosen system look like independent draws from the limit law.
/// Throws InsufficientSamples below 50 qualifying replicas.
ChaosReport chaoticity_diagnostic(const ExperimentConfig& config, std::int64_t scale, std::size_t atoms,
                                  double time, ParticleSystem system, unsigned threads = 1);

}  // namespace mfbranch
