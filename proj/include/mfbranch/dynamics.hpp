#pragma once

// Mean-field SDE coefficients, convolution kernels, Euler-Maruyama stepping,
// demographic rates, the limiting mass ODEs and the McKean-Vlasov reference
// ensemble approximating the normalized limit flow.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "mfbranch/measures.hpp"

namespace mfbranch {

class Stream;

/// Bounded Lipschitz interaction kernel R^d -> R_+. Bounds are declared
/// metadata, checked by sampling in validate_kernel.
struct Kernel {
  std::function<double(std::span<const double>)> evaluator;
  double lipschitz_bound = 0.0;
  double sup_bound = 0.0;

  double operator()(std::span<const double> z) const { return evaluator(z); }

  static Kernel constant(double value);
  /// exp(-|z| / length)
  static Kernel exponential(double length);
  /// exp(-|z|^2 / (2 length^2))
  static Kernel gaussian(double length);
};

/// G enters the diffusion coefficient, H the drift.
struct Kernels {
  Kernel diffusion_kernel = Kernel::constant(0.0);
  Kernel drift_kernel = Kernel::constant(0.0);
};

using DriftFn = std::function<void(std::span<const double> x, double v, std::span<double> out)>;
/// Writes the d x d diffusion matrix in row-major order.
using DiffusionFn = std::function<void(std::span<const double> x, double v, std::span<double> out)>;

struct Coefficients {
  std::size_t dim = 1;
  DriftFn drift;
  DiffusionFn diffusion;
  /// True when b and sigma ignore their measure argument; convolutions are then skipped.
  bool measure_free = true;
  double drift_lipschitz = 0.0;
  double diffusion_lipschitz = 0.0;
  /// C_sigma in |sigma(x, v)| <= C_sigma (1 + |v|), Frobenius norm.
  double sigma_growth = 0.0;

  static Coefficients zero(std::size_t dim);
  static Coefficients constant_drift(std::vector<double> velocity);
  /// b(x) = -theta x, sigma = s I.
  static Coefficients ornstein_uhlenbeck(std::size_t dim, double theta, double s);
  /// b(x, v) = -theta x, sigma(x, v) = s (1 + gamma v) I. Interacting through G.
  static Coefficients density_diffusion(std::size_t dim, double theta, double s, double gamma);
};

/// General model: per-individual birth r, death c N/K plus an optional
/// autonomous killing rate.
struct ConstantRates {
  double birth = 0.0;
  double competition = 0.0;
  double killing = 0.0;
};

/// Pure-branching variant: per-individual birth r(t) and death c(t), bounded
/// by birth_bound and death_bound.
struct TimeVaryingRates {
  std::function<double(double)> birth;
  std::function<double(double)> death;
  double birth_bound = 0.0;
  double death_bound = 0.0;

  static TimeVaryingRates constant(double r, double c);
};

using RateSpec = std::variant<ConstantRates, TimeVaryingRates>;

bool is_pure_branching(const RateSpec& rates) noexcept;

/// Spot checks on sampled inputs.
bool validate_kernel(const Kernel& k, std::size_t dim, Stream& rng, int samples = 256);
bool validate_sigma_growth(const Coefficients& c, Stream& rng, int samples = 256);
bool validate_rates(const TimeVaryingRates& rates, double horizon, int samples = 256);

/// (1/K) sum_i k(x - x_i); zero for the empty measure.
double convolve(const Kernel& k, const WeightedPointMeasure& m, std::span<const double> x);
/// weight * (1/M) sum_i k(x - y_i) over a sample; used for the limit field n_t * mean.
double convolve_sample(const Kernel& k, const PointSet& sample, double weight,
                       std::span<const double> x);

/// x + b(x, H*mu(x)) h + sigma(x, G*mu(x)) dW.
std::vector<double> euler_step(const Coefficients& coeffs, const Kernels& kernels,
                               const WeightedPointMeasure& field, std::span<const double> x,
                               double h, std::span<const double> dW);

/// In-place Euler update with precomputed convolution values.
/// `scratch` must hold at least dim + dim*dim doubles.
void euler_update(const Coefficients& coeffs, std::span<double> x, double drift_field,
                  double diffusion_field, double h, std::span<const double> dW,
                  std::span<double> scratch);

/// Closed-form solution of dn = (r - c n) n dt.
double logistic_mass(double n0, double r, double c, double t);
/// Classical RK4 on the same ODE; cross-check for logistic_mass.
double logistic_mass_rk4(double n0, double r, double c, double t, int steps);
/// n0 exp(int_0^t (r(s) - c(s)) ds), adaptive Gauss-Kronrod quadrature.
double linear_mass(double n0, const TimeVaryingRates& rates, double t);
/// Total mass of the limit flow under either rate model.
double limit_mass(double n0, const RateSpec& rates, double t);

/// Time grid of snapshots of an M-particle ensemble approximating the
/// normalized limit flow, together with the limit mass on the grid.
class ReferenceFlow {
 public:
  ReferenceFlow(std::vector<double> times, std::vector<double> masses,
                std::vector<PointSet> samples, double step);

  std::size_t snapshot_count() const noexcept { return times_.size(); }
  std::size_t ensemble_size() const noexcept { return samples_.front().size(); }
  std::size_t dim() const noexcept { return samples_.front().dim(); }
  double step() const noexcept { return step_; }
  double horizon() const noexcept { return times_.back(); }

  const std::vector<double>& times() const noexcept { return times_; }
  const std::vector<double>& masses() const noexcept { return masses_; }
  const PointSet& sample(std::size_t j) const { return samples_.at(j); }
  /// Ascending values of snapshot j (d = 1 only, empty otherwise).
  const std::vector<double>& sorted_values(std::size_t j) const { return sorted_.at(j); }

  /// Largest j with t_j <= t (clamped to 0): nearest earlier snapshot.
  std::size_t index_at(double t) const noexcept;

 private:
  std::vector<double> times_;
  std::vector<double> masses_;
  std::vector<PointSet> samples_;
  std::vector<std::vector<double>> sorted_;
  double step_;
};

/// Self-consistent particle approximation of the nonlinear process: M
/// particles driven by the field n_t * (empirical law of the ensemble).
/// Particle i uses Stream(seed, {i}). Snapshots are taken at every grid time.
ReferenceFlow evolve_reference(const Coefficients& coeffs, const Kernels& kernels,
                               const RateSpec& rates, const ProbabilityEmpirical& initial_sample,
                               double n0, const std::vector<double>& grid, double step,
                               std::uint64_t seed, unsigned threads = 1);

/// Uniform grid 0, step, 2 step, ..., horizon, merged with extra times.
std::vector<double> make_time_grid(double horizon, double step, const std::vector<double>& extra = {});

}  // namespace mfbranch
