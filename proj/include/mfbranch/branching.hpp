#pragma once

// Coupled binary-branching particle systems: the interacting system mu^K and
// its auxiliary system nu^K built from shared event times, shared Brownian
// streams and optimally coupled birth positions.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <vector>

#include "mfbranch/dynamics.hpp"
#include "mfbranch/measures.hpp"
#include "mfbranch/rng.hpp"
#include "mfbranch/transport.hpp"

namespace mfbranch {

/// Paired particle arrays with the labelling map and per-pair Brownian streams.
///
/// Invariants (checked by check_invariants):
///  - x and y hold the same number N of atoms (y is empty when uncoupled);
///  - labels is strictly increasing with labels.back() <= total_count;
///  - total_count - N == deaths.
/// labels.back() == total_count holds after every birth but not after the death
/// of the last pair; labelling_tight() reports it.
struct CoupledState {
  CoupledState(const WeightedPointMeasure& initial, std::uint64_t stream_seed, bool coupled);

  double time = 0.0;
  std::int64_t scale = 1;
  bool coupled = true;
  PointSet x;
  PointSet y;
  /// labels[n] = j(n + 1): 1-based index of the Brownian stream driving pair n.
  std::vector<std::uint64_t> labels;
  std::vector<Stream> streams;
  /// Number of pairs ever alive (N-bar).
  std::uint64_t total_count = 0;
  std::uint64_t deaths = 0;
  std::uint64_t stream_seed = 0;

  std::size_t alive() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return x.dim(); }
  /// Throws std::logic_error naming the violated invariant.
  void check_invariants() const;
  bool labelling_tight() const noexcept { return labels.empty() || labels.back() == total_count; }
};

enum class EventKind { Birth, Death };

struct EventRecord {
  double time = 0.0;
  EventKind kind = EventKind::Birth;
  double rho = 0.0;
  /// 1-based parent (birth) or victim (death) index i(rho).
  std::size_t index = 0;
  /// Births in the coupled system: the new nu-atom.
  std::vector<double> y_position;
  /// Births in the coupled system: |X_new - Y_new|^2.
  double cost_contribution = 0.0;
};

/// General model: N (r + c N/K + kill). Pure-branching variant: the thinning
/// envelope N (r_bar + c_bar).
double total_event_rate(std::size_t n, std::int64_t scale, const RateSpec& rates, double t);

struct ProposedEvent {
  double time;
  double rho;
  double theta;
  EventKind kind;
};

/// Next accepted event after t. Returns nullopt when N = 0 (extinct). Returns
/// time = +inf when the total rate is zero. Thinning stops proposing once the
/// proposal time exceeds `horizon`.
std::optional<ProposedEvent> next_event(std::size_t n, std::int64_t scale, const RateSpec& rates, double t,
                                        Stream& events,
                                        double horizon = std::numeric_limits<double>::infinity());

/// Duplicates X^{i(rho)} and, when coupled, draws the partner nu-atom from the
/// optimal plan against `reference`; the new pair gets stream N-bar + 1.
EventRecord apply_birth(CoupledState& state, double rho, const PointSet* reference,
                        const BirthSamplerOptions& opts = {}, std::span<const double> sorted_reference = {});

/// Removes pair i(rho) by left shift; its stream is retired.
EventRecord apply_death(CoupledState& state, double rho);

struct SimulationConfig {
  std::int64_t scale = 1;
  Coefficients coefficients = Coefficients::zero(1);
  Kernels kernels{};
  RateSpec rates = ConstantRates{};
  WeightedPointMeasure initial{PointSet(1), 1};
  double horizon = 1.0;
  /// Euler step h of the global sub-step grid.
  double step = 0.01;
  /// Sorted times in [0, horizon] at which the state is recorded.
  std::vector<double> observation_times{0.0, 1.0};
  BirthSamplerOptions transport{};
};

struct SimulationSeeds {
  std::uint64_t events = 0;
  std::uint64_t streams = 0;
};

struct Observation {
  double time;
  WeightedPointMeasure mu;
  std::optional<WeightedPointMeasure> nu;
  std::uint64_t total_count;
};

struct Trajectory {
  std::vector<Observation> observations;
  std::vector<EventRecord> events;
  std::uint64_t births = 0;
  std::uint64_t deaths = 0;
};

using EventHook = std::function<void(const CoupledState&, const EventRecord&)>;

/// Runs both systems to the horizon. X feels the live empirical field, Y the
/// reference field n_t * (reference sample at the nearest earlier snapshot).
Trajectory simulate_coupled(const SimulationConfig& config, const ReferenceFlow& reference,
                            const SimulationSeeds& seeds, const EventHook& hook = {},
                            bool record_events = true);

/// X-system only; consumes the same event and Brownian streams as
/// simulate_coupled, so with equal seeds the X-trajectories coincide.
Trajectory simulate_single(const SimulationConfig& config, const SimulationSeeds& seeds,
                           const EventHook& hook = {}, bool record_events = true);

/// CSV: replicate,time,kind,rho,index,cost_contribution
void write_event_header(std::ostream& out);
void write_event_rows(std::ostream& out, std::uint64_t replicate, const std::vector<EventRecord>& events);

}  // namespace mfbranch
