#include "mfbranch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mfbranch/branching.hpp"
#include "mfbranch/errors.hpp"
#include "mfbranch/rng.hpp"

namespace mfbranch {

void RateParams::validate() const {
  if (dim < 1) throw ConfigError("rate dimension must be >= 1");
  const double d = static_cast<double>(dim);
  if (dim <= 4 && q == 4.0) throw ExcludedCase("q = 4 is excluded for d <= 4");
  if (dim > 4 && q == d / (d - 2.0)) throw ExcludedCase("q = d/(d-2) is excluded for d > 4");
  if (!(q > 2.0)) throw ConfigError("moment order q must exceed 2");
}

double fg_rate(const RateParams& params, double n) {
  params.validate();
  if (!(n >= 1.0)) throw ConfigError("fg_rate needs N >= 1");
  const double moment_term = std::pow(n, -(params.q - 2.0) / params.q);
  if (params.dim < 4) return std::pow(n, -0.5) + moment_term;
  if (params.dim == 4) return std::pow(n, -0.5) * std::log1p(n) + moment_term;
  return std::pow(n, -2.0 / static_cast<double>(params.dim)) + moment_term;
}

namespace {

std::vector<double> sorted_copy(const PointSet& s) {
  const auto c = s.coords();
  std::vector<double> v(c.begin(), c.end());
  std::sort(v.begin(), v.end());
  return v;
}

bool convex_cost(GroundCost kind) { return kind != GroundCost::TruncatedEuclidean; }

}  // namespace

TransportEstimate transport_cost(const ProbabilityEmpirical& p, const ProbabilityEmpirical& r, GroundCost kind,
                                 const MetricOptions& opts) {
  if (p.dim() != r.dim()) throw DimensionError("transport between measures of different dimension");
  const bool equal_small = p.size() == r.size() && p.size() <= opts.solver.assignment_cap;
  if (p.dim() == 1 && convex_cost(kind)) {
    return {monotone_cost(sorted_copy(p.atoms()), sorted_copy(r.atoms()), kind), true};
  }
  if (equal_small) {
    const auto a = solve_assignment(CostMatrix::between(p.atoms(), r.atoms(), kind));
    return {a.cost / static_cast<double>(p.size()), true};
  }
  if (p.dim() == 1) {
    return {monotone_cost(sorted_copy(p.atoms()), sorted_copy(r.atoms()), kind), false};
  }
  EntropicOptions eo = opts.solver.entropic;
  eo.ground = kind;
  return {solve_entropic(p.atoms(), r.atoms(), eo).plan.cost(), false};
}

double w2(const ProbabilityEmpirical& p, const ProbabilityEmpirical& r, const MetricOptions& opts) {
  return std::sqrt(std::max(0.0, transport_cost(p, r, GroundCost::SquaredEuclidean, opts).cost));
}

double w1(const ProbabilityEmpirical& p, const ProbabilityEmpirical& r, const MetricOptions& opts) {
  return transport_cost(p, r, GroundCost::Euclidean, opts).cost;
}

double w2_squared_sorted(std::span<const double> sorted_a, std::span<const double> sorted_b) {
  return monotone_cost(sorted_a, sorted_b, GroundCost::SquaredEuclidean);
}

BlUpper bl_upper(const WeightedPointMeasure& m, double r_mass, const ProbabilityEmpirical& r_law,
                 const MetricOptions& opts, std::span<const double> sorted_law) {
  if (m.extinct()) return {r_mass, 0.0, r_mass, true};
  const double mm = mass(m);
  const double gap = std::abs(mm - r_mass);
  TransportEstimate t{};
  const bool equal_small = m.atom_count() == r_law.size() && m.atom_count() <= opts.solver.assignment_cap;
  if (m.dim() == 1 && !equal_small) {
    std::vector<double> owned;
    if (sorted_law.size() != r_law.size()) {
      owned = sorted_copy(r_law.atoms());
      sorted_law = owned;
    }
    t = {monotone_cost(sorted_copy(m.atoms()), sorted_law, GroundCost::TruncatedEuclidean), false};
  } else {
    t = transport_cost(normalize(m), r_law, GroundCost::TruncatedEuclidean, opts);
  }
  return {mm * t.cost + gap, t.cost, gap, t.exact};
}

RidgeDictionary RidgeDictionary::random(std::size_t dim, std::size_t count, double lo, double hi, Stream& rng) {
  RidgeDictionary dict;
  const double log_lo = std::log(0.05), log_hi = std::log(20.0);
  for (std::size_t k = 0; k < count; ++k) {
    Ridge ridge;
    ridge.direction.resize(dim);
    double norm = 0.0;
    do {
      for (double& v : ridge.direction) v = rng.normal();
      norm = euclidean_norm(ridge.direction);
    } while (norm == 0.0);
    for (double& v : ridge.direction) v /= norm;
    ridge.slope = std::exp(log_lo + (log_hi - log_lo) * rng.uniform());
    const double centre = lo + (hi - lo) * rng.uniform();
    ridge.offset = -ridge.slope * centre;
    dict.ridges_.push_back(std::move(ridge));
  }
  return dict;
}

double RidgeDictionary::evaluate(const Ridge& ridge, std::span<const double> x) noexcept {
  double proj = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) proj += ridge.direction[k] * x[k];
  return std::clamp(ridge.slope * proj + ridge.offset, -1.0, 1.0) / (1.0 + ridge.slope);
}

std::vector<double> RidgeDictionary::integrals(const PointSet& atoms, double total_mass) const {
  std::vector<double> out(size(), 0.0);
  if (atoms.empty()) return out;
  out[0] = total_mass;
  const double w = total_mass / static_cast<double>(atoms.size());
  for (std::size_t k = 0; k < ridges_.size(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) s += evaluate(ridges_[k], atoms[i]);
    out[k + 1] = w * s;
  }
  return out;
}

double bl_lower(const WeightedPointMeasure& m, const RidgeDictionary& dictionary,
                std::span<const double> reference_integrals) {
  const auto mi = dictionary.integrals(m.atoms(), mass(m));
  double best = 0.0;
  for (std::size_t k = 0; k < mi.size(); ++k) best = std::max(best, std::abs(mi[k] - reference_integrals[k]));
  return best;
}

double bl_lower(const WeightedPointMeasure& m, double r_mass, const ProbabilityEmpirical& r_law,
                const RidgeDictionary& dictionary) {
  return bl_lower(m, dictionary, dictionary.integrals(r_law.atoms(), r_mass));
}

double bl_lower(const WeightedPointMeasure& m, double r_mass, const ProbabilityEmpirical& r_law, std::size_t count,
                Stream& rng) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : m.atoms().coords()) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : r_law.atoms().coords()) lo = std::min(lo, v), hi = std::max(hi, v);
  const auto dict = RidgeDictionary::random(r_law.dim(), count, lo, hi, rng);
  return bl_lower(m, r_mass, r_law, dict);
}

double coupling_gap(const CoupledState& state) {
  double s = 0.0;
  for (std::size_t k = 0; k < state.alive(); ++k) s += squared_distance(state.x[k], state.y[k]);
  return s / static_cast<double>(state.scale);
}

double coupling_gap(const WeightedPointMeasure& mu, const WeightedPointMeasure& nu) {
  if (mu.atom_count() != nu.atom_count() || mu.dim() != nu.dim())
    throw DimensionError("coupling gap needs index-aligned measures");
  double s = 0.0;
  for (std::size_t k = 0; k < mu.atom_count(); ++k) s += squared_distance(mu.atoms()[k], nu.atoms()[k]);
  return s / static_cast<double>(mu.scale());
}

double ip_error(std::span<const double> samples, double limit_mass, double p) {
  if (samples.empty()) throw DegenerateInput("ip_error needs samples");
  if (!(p >= 1.0)) throw ConfigError("ip_error needs p >= 1");
  double s = 0.0;
  for (double m : samples) s += std::pow(std::abs(m - limit_mass), p);
  return std::pow(s / static_cast<double>(samples.size()), 1.0 / p);
}

DistanceReport distance_report(const WeightedPointMeasure& mu, const WeightedPointMeasure& nu,
                               const ReferenceView& reference, const MetricOptions& opts) {
  DistanceReport r;
  r.n_over_k = mass(mu);
  r.mass_gap = std::abs(r.n_over_k - reference.mass);
  r.coupling_gap = coupling_gap(mu, nu);
  const ProbabilityEmpirical law(*reference.sample);
  if (reference.dictionary) {
    r.bl_lower = bl_lower(mu, *reference.dictionary, reference.dictionary_integrals);
  }
  if (mu.extinct()) {
    r.bl_upper = reference.mass;
    return r;
  }
  if (mu.dim() == 1) {
    const auto smu = sorted_copy(mu.atoms());
    const auto snu = sorted_copy(nu.atoms());
    std::vector<double> owned;
    std::span<const double> sref = reference.sorted_values;
    if (sref.size() != reference.sample->size()) {
      owned = sorted_copy(*reference.sample);
      sref = owned;
    }
    r.w2sq_mu_nu = w2_squared_sorted(smu, snu);
    r.w2sq_nu_ref = w2_squared_sorted(snu, sref);
  } else {
    r.w2sq_mu_nu = transport_cost(normalize(mu), normalize(nu), GroundCost::SquaredEuclidean, opts).cost;
    r.w2sq_nu_ref = transport_cost(normalize(nu), law, GroundCost::SquaredEuclidean, opts).cost;
  }
  r.bl_upper = bl_upper(mu, reference.mass, law, opts, reference.sorted_values).value;
  return r;
}

}  // namespace mfbranch
