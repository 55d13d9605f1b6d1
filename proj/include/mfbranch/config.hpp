#pragma once

// Experiment configuration: an INI file with [model], [initial], [experiment]
// and [output] sections, plus the builders that turn it into simulation inputs.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mfbranch/branching.hpp"
#include "mfbranch/dynamics.hpp"

namespace mfbranch {

class Stream;

struct ModelSpec {
  std::size_t dim = 1;
  /// ou | zero | density
  std::string drift = "ou";
  double theta = 1.0;
  double sigma = 1.0;
  double gamma = 0.0;
  /// none | exponential | gaussian
  std::string kernel = "none";
  double kernel_scale = 1.0;
  /// pure (per-individual death rate) | logistic (death c N/K)
  std::string rates = "pure";
  double birth = 1.0;
  double death = 0.5;
  double competition = 0.0;
  double killing = 0.0;
};

enum class InitialMode { Fixed, Poisson };
enum class InitialLaw { Gaussian, Pareto, Uniform };

struct InitialSpec {
  InitialMode mode = InitialMode::Fixed;
  double mass = 1.0;
  InitialLaw law = InitialLaw::Gaussian;
  double scale = 1.0;
  /// Pareto tail index alpha: P(|X| > s x) = x^{-alpha} for x >= 1.
  double tail_index = 3.5;
  /// Moment order q used for the rate prediction; 0 means "all moments" (Gaussian, uniform).
  double moment_order = 0.0;

  void validate() const;
  /// One i.i.d. atom from the named law.
  void draw_atom(Stream& rng, std::span<double> out) const;
};

struct ExperimentConfig {
  ModelSpec model{};
  InitialSpec initial{};
  std::vector<std::int64_t> k_grid{50, 100, 200, 400, 800, 1600, 3200};
  std::size_t replicates = 100;
  double horizon = 1.0;
  std::vector<double> observe{0.0, 0.25, 0.5, 0.75, 1.0};
  double euler_step = 0.01;
  /// 0 means 8 * max(k_grid).
  std::size_t reference_size = 0;
  double reference_step = 0.01;
  std::uint64_t seed = 1;
  std::size_t assignment_cap = 512;
  std::size_t bl_dictionary = 128;
  std::string output_dir = "out";

  std::size_t effective_reference_size() const;
  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

/// Strict INI parser: unknown sections or keys are ConfigError.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
/// Round-trippable INI text of a configuration.
std::string to_ini(const ExperimentConfig& config);

Coefficients build_coefficients(const ModelSpec& model);
Kernels build_kernels(const ModelSpec& model);
RateSpec build_rates(const ModelSpec& model);

/// Default d = 1 experiment: pure branching r = 1, c = 0.5, OU drift, Gaussian init.
ExperimentConfig default_preset();
/// Same model with a symmetric Pareto initial law having q = 3 moments.
ExperimentConfig heavy_tail_preset();

}  // namespace mfbranch
