#include "mfbranch/branching.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "mfbranch/errors.hpp"
#include "mfbranch/io.hpp"
#include "mfbranch/time_grid.hpp"

namespace mfbranch {

CoupledState::CoupledState(const WeightedPointMeasure& initial, std::uint64_t seed, bool is_coupled)
    : scale(initial.scale()),
      coupled(is_coupled),
      x(initial.atoms()),
      y(is_coupled ? initial.atoms() : PointSet(initial.dim())),
      total_count(initial.atom_count()),
      stream_seed(seed) {
  const std::size_t n = initial.atom_count();
  labels.resize(n);
  streams.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    labels[k] = k + 1;
    streams.emplace_back(stream_seed, std::initializer_list<std::uint64_t>{labels[k]});
  }
}

void CoupledState::check_invariants() const {
  const std::size_t n = alive();
  if (x.size() != n || streams.size() != n) throw std::logic_error("pair arrays out of sync with labels");
  if (coupled && y.size() != n) throw std::logic_error("C.1 violated: |X| != |Y|");
  for (std::size_t k = 1; k < n; ++k)
    if (labels[k] <= labels[k - 1]) throw std::logic_error("labelling is not strictly increasing");
  if (n > 0 && labels.back() > total_count) throw std::logic_error("labelling: j(N) > N-bar");
  if (total_count < n || total_count - n != deaths) throw std::logic_error("N-bar - N != number of deaths");
}

double total_event_rate(std::size_t n, std::int64_t scale, const RateSpec& rates, double) {
  const double nn = static_cast<double>(n);
  if (const auto* cr = std::get_if<ConstantRates>(&rates)) {
    return nn * (cr->birth + cr->competition * nn / static_cast<double>(scale) + cr->killing);
  }
  const auto& tv = std::get<TimeVaryingRates>(rates);
  return nn * (tv.birth_bound + tv.death_bound);
}

std::optional<ProposedEvent> next_event(std::size_t n, std::int64_t scale, const RateSpec& rates, double t,
                                        Stream& events, double horizon) {
  if (n == 0) return std::nullopt;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const double nn = static_cast<double>(n);
  const double total = total_event_rate(n, scale, rates, t);
  if (!(total > 0.0)) return ProposedEvent{kInf, 0.0, 0.0, EventKind::Birth};

  if (const auto* cr = std::get_if<ConstantRates>(&rates)) {
    // Rates depend on N only, so the intensity is constant between jumps.
    const double per_capita = total / nn;
    const double time = t + events.exponential(total);
    const double rho = nn * events.uniform();
    const double theta = per_capita * events.uniform();
    return ProposedEvent{time, rho, theta, theta <= cr->birth ? EventKind::Birth : EventKind::Death};
  }

  const auto& tv = std::get<TimeVaryingRates>(rates);
  const double envelope = tv.birth_bound + tv.death_bound;
  double time = t;
  while (true) {
    time += events.exponential(total);
    const double rho = nn * events.uniform();
    const double theta = envelope * events.uniform();
    if (time > horizon) return ProposedEvent{time, rho, theta, EventKind::Birth};
    const double r = tv.birth(time);
    if (theta <= r + tv.death(time)) {
      return ProposedEvent{time, rho, theta, theta <= r ? EventKind::Birth : EventKind::Death};
    }
  }
}

EventRecord apply_birth(CoupledState& state, double rho, const PointSet* reference, const BirthSamplerOptions& opts,
                        std::span<const double> sorted_reference) {
  const std::size_t n = state.alive();
  if (n == 0 || !(rho >= 0.0) || !(rho < static_cast<double>(n)))
    throw ConfigError("birth needs 0 <= rho < N with N >= 1");
  EventRecord rec;
  rec.time = state.time;
  rec.kind = EventKind::Birth;
  rec.rho = rho;
  rec.index = index_of(rho);

  if (state.coupled) {
    if (reference == nullptr || reference->empty()) throw EmptyReference("coupled birth without reference sample");
    // The plan is computed against X_{t-}, before the duplicate is appended.
    BirthSample s = sample_birth_position(state.x, rho, *reference, opts, sorted_reference);
    rec.y_position = std::move(s.position);
  }
  const std::vector<double> parent(state.x[rec.index - 1].begin(), state.x[rec.index - 1].end());
  state.x.push_back(parent);
  if (state.coupled) {
    state.y.push_back(rec.y_position);
    rec.cost_contribution = squared_distance(parent, rec.y_position);
  }
  state.total_count += 1;
  state.labels.push_back(state.total_count);
  state.streams.emplace_back(state.stream_seed, std::initializer_list<std::uint64_t>{state.total_count});
  return rec;
}

EventRecord apply_death(CoupledState& state, double rho) {
  const std::size_t n = state.alive();
  if (n == 0 || !(rho >= 0.0) || !(rho < static_cast<double>(n)))
    throw ConfigError("death needs 0 <= rho < N with N >= 1");
  EventRecord rec;
  rec.time = state.time;
  rec.kind = EventKind::Death;
  rec.rho = rho;
  rec.index = index_of(rho);
  const std::size_t k = rec.index - 1;
  state.x.erase(k);
  if (state.coupled) state.y.erase(k);
  state.labels.erase(state.labels.begin() + static_cast<std::ptrdiff_t>(k));
  state.streams.erase(state.streams.begin() + static_cast<std::ptrdiff_t>(k));
  state.deaths += 1;
  return rec;
}

namespace {

void validate(const SimulationConfig& config) {
  if (!(config.step > 0.0)) throw ConfigError("Euler step must be positive");
  if (!(config.horizon >= 0.0)) throw ConfigError("horizon must be nonnegative");
  if (config.initial.scale() != config.scale) throw ConfigError("initial measure scale differs from K");
  if (config.initial.dim() != config.coefficients.dim) throw DimensionError("initial measure dimension mismatch");
  const auto& obs = config.observation_times;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    if (obs[k] < 0.0 || obs[k] > config.horizon * (1.0 + 1e-12))
      throw ConfigError("observation time outside [0, horizon]");
    if (k > 0 && !(obs[k] > obs[k - 1])) throw ConfigError("observation times must be strictly increasing");
  }
}

class Engine {
 public:
  Engine(const SimulationConfig& config, const ReferenceFlow* reference, const SimulationSeeds& seeds,
         const EventHook& hook, bool record_events)
      : config_(config),
        reference_(reference),
        hook_(hook),
        record_events_(record_events),
        state_(config.initial, seeds.streams, reference != nullptr),
        events_(seeds.events) {
    const std::size_t d = config.coefficients.dim;
    dw_.resize(d);
    scratch_.resize(d + d * d);
  }

  Trajectory run() {
    const auto& obs = config_.observation_times;
    std::size_t next_obs = 0;
    while (true) {
      const auto proposal =
          next_event(state_.alive(), state_.scale, config_.rates, state_.time, events_, config_.horizon);
      const double event_time =
          proposal ? proposal->time : std::numeric_limits<double>::infinity();
      // Observations strictly before the event; an observation at the event
      // time sees the post-jump state.
      while (next_obs < obs.size() && obs[next_obs] < event_time) {
        advance(obs[next_obs]);
        record(obs[next_obs]);
        ++next_obs;
      }
      if (event_time > config_.horizon) {
        advance(config_.horizon);
        break;
      }
      advance(event_time);
      EventRecord rec;
      if (proposal->kind == EventKind::Birth) {
        const PointSet* ref = nullptr;
        std::span<const double> sorted;
        if (reference_) {
          const std::size_t j = reference_->index_at(event_time);
          ref = &reference_->sample(j);
          sorted = reference_->sorted_values(j);
        }
        rec = apply_birth(state_, proposal->rho, ref, config_.transport, sorted);
        ++trajectory_.births;
      } else {
        rec = apply_death(state_, proposal->rho);
        ++trajectory_.deaths;
      }
      if (hook_) hook_(state_, rec);
      if (record_events_) trajectory_.events.push_back(std::move(rec));
    }
    return std::move(trajectory_);
  }

 private:
  void advance(double target) {
    const Coefficients& coeffs = config_.coefficients;
    while (state_.time < target) {
      const double t_next = next_substep_end(state_.time, target, config_.step);
      const double dt = t_next - state_.time;
      const std::size_t n = state_.alive();
      if (n > 0 && dt > 0.0) {
        const double sqdt = std::sqrt(dt);
        compute_fields();
        for (std::size_t k = 0; k < n; ++k) {
          for (double& z : dw_) z = sqdt * state_.streams[k].normal();
          euler_update(coeffs, state_.x[k], x_drift_[k], x_diff_[k], dt, dw_, scratch_);
          if (state_.coupled) euler_update(coeffs, state_.y[k], y_drift_[k], y_diff_[k], dt, dw_, scratch_);
        }
      }
      state_.time = t_next;
    }
    state_.time = target;
  }

  void compute_fields() {
    const std::size_t n = state_.alive();
    x_drift_.assign(n, 0.0);
    x_diff_.assign(n, 0.0);
    y_drift_.assign(n, 0.0);
    y_diff_.assign(n, 0.0);
    const Coefficients& coeffs = config_.coefficients;
    if (coeffs.measure_free) return;
    const Kernels& kernels = config_.kernels;
    const double weight = static_cast<double>(n) / static_cast<double>(state_.scale);
    for (std::size_t k = 0; k < n; ++k) {
      x_drift_[k] = convolve_sample(kernels.drift_kernel, state_.x, weight, state_.x[k]);
      x_diff_[k] = convolve_sample(kernels.diffusion_kernel, state_.x, weight, state_.x[k]);
    }
    if (state_.coupled) {
      const std::size_t j = reference_->index_at(state_.time);
      const PointSet& sample = reference_->sample(j);
      const double n_t = reference_->masses()[j];
      for (std::size_t k = 0; k < n; ++k) {
        y_drift_[k] = convolve_sample(kernels.drift_kernel, sample, n_t, state_.y[k]);
        y_diff_[k] = convolve_sample(kernels.diffusion_kernel, sample, n_t, state_.y[k]);
      }
    }
  }

  void record(double t) {
    Observation o{t, WeightedPointMeasure(state_.x, state_.scale), std::nullopt, state_.total_count};
    if (state_.coupled) o.nu = WeightedPointMeasure(state_.y, state_.scale);
    trajectory_.observations.push_back(std::move(o));
  }

  const SimulationConfig& config_;
  const ReferenceFlow* reference_;
  const EventHook& hook_;
  bool record_events_;
  CoupledState state_;
  Stream events_;
  Trajectory trajectory_;
  std::vector<double> dw_, scratch_;
  std::vector<double> x_drift_, x_diff_, y_drift_, y_diff_;
};

}  // namespace

Trajectory simulate_coupled(const SimulationConfig& config, const ReferenceFlow& reference,
                            const SimulationSeeds& seeds, const EventHook& hook, bool record_events) {
  validate(config);
  if (reference.dim() != config.coefficients.dim) throw DimensionError("reference flow dimension mismatch");
  if (reference.times().front() > 1e-12 || reference.horizon() < config.horizon * (1.0 - 1e-12))
    throw ConfigError("reference grid does not cover [0, horizon]");
  if (reference.ensemble_size() == 0) throw EmptyReference("reference ensemble is empty");
  return Engine(config, &reference, seeds, hook, record_events).run();
}

Trajectory simulate_single(const SimulationConfig& config, const SimulationSeeds& seeds, const EventHook& hook,
                           bool record_events) {
  validate(config);
  return Engine(config, nullptr, seeds, hook, record_events).run();
}

void write_event_header(std::ostream& out) { out << "replicate,time,kind,rho,index,cost_contribution\n"; }

void write_event_rows(std::ostream& out, std::uint64_t replicate, const std::vector<EventRecord>& events) {
  for (const auto& e : events) {
    out << replicate << ',' << format_double(e.time) << ',' << (e.kind == EventKind::Birth ? "birth" : "death")
        << ',' << format_double(e.rho) << ',' << e.index << ',' << format_double(e.cost_contribution) << '\n';
  }
}

}  // namespace mfbranch
