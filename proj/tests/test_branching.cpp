#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mfbranch/branching.hpp"
#include "mfbranch/errors.hpp"
#include "mfbranch/metrics.hpp"
#include "mfbranch/rng.hpp"

using namespace mfbranch;

namespace {

WeightedPointMeasure gaussian_initial(std::size_t n, std::int64_t k, std::uint64_t seed, std::size_t d = 1) {
  Stream rng(seed);
  PointSet p(d);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x) v = rng.normal();
    p.push_back(x);
  }
  return WeightedPointMeasure(std::move(p), k);
}

ReferenceFlow ou_reference(std::size_t m, double horizon, std::uint64_t seed, const RateSpec& rates) {
  Stream rng(seed);
  std::vector<double> v(m);
  for (auto& x : v) x = rng.normal();
  return evolve_reference(Coefficients::ornstein_uhlenbeck(1, 1.0, 1.0), {}, rates,
                          ProbabilityEmpirical(PointSet::from_scalars(v)), 1.0, make_time_grid(horizon, 0.01),
                          0.01, seed + 1);
}

SimulationConfig base_config(std::int64_t k, const WeightedPointMeasure& init, const RateSpec& rates) {
  SimulationConfig c;
  c.scale = k;
  c.coefficients = Coefficients::ornstein_uhlenbeck(1, 1.0, 1.0);
  c.rates = rates;
  c.initial = init;
  c.horizon = 1.0;
  c.step = 0.01;
  c.observation_times = {0.0, 0.5, 1.0};
  return c;
}

}  // namespace

TEST_CASE("total event rate examples") {
  CHECK(total_event_rate(10, 10, ConstantRates{1, 1}, 0.0) == 20.0);
  CHECK(total_event_rate(0, 10, ConstantRates{1, 1}, 0.0) == 0.0);
  CHECK(total_event_rate(5, 1, TimeVaryingRates::constant(2, 1), 0.3) == 15.0);
  CHECK(total_event_rate(4, 2, ConstantRates{1, 1, 0.5}, 0.0) == doctest::Approx(4 * (1 + 2 + 0.5)));
}

TEST_CASE("next event edge cases") {
  Stream s(1);
  CHECK_FALSE(next_event(0, 10, ConstantRates{1, 1}, 0.0, s).has_value());
  const auto never = next_event(5, 10, ConstantRates{0, 0}, 0.0, s);
  REQUIRE(never.has_value());
  CHECK(std::isinf(never->time));
}

TEST_CASE("Gillespie waiting time and kind frequencies") {
  Stream s(2);
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  int births = 0;
  for (int i = 0; i < n; ++i) {
    const auto e = next_event(10, 10, ConstantRates{1, 1}, 0.0, s);
    sum += e->time;
    sq += e->time * e->time;
    births += e->kind == EventKind::Birth;
    REQUIRE(e->rho >= 0.0);
    REQUIRE(e->rho < 10.0);
    REQUIRE((e->theta <= 1.0) == (e->kind == EventKind::Birth));
  }
  const double mean = sum / n, se = std::sqrt((sq / n - mean * mean) / n);
  CHECK(std::abs(mean - 1.0 / 20.0) < 3.0 * se);
  CHECK(std::abs(births / double(n) - 0.5) < 3.0 * std::sqrt(0.25 / n));
}

TEST_CASE("thinning with constant rates accepts every proposal") {
  Stream s(3);
  const int n = 50000;
  double sum = 0.0;
  int births = 0;
  for (int i = 0; i < n; ++i) {
    const auto e = next_event(5, 7, TimeVaryingRates::constant(2, 1), 1.0, s);
    sum += e->time - 1.0;
    births += e->kind == EventKind::Birth;
  }
  CHECK(std::abs(sum / n - 1.0 / 15.0) < 3.0 * (1.0 / 15.0) / std::sqrt(double(n)));
  CHECK(std::abs(births / double(n) - 2.0 / 3.0) < 3.0 * std::sqrt(2.0 / 9.0 / n));
}

TEST_CASE("thinning with a time-varying birth rate") {
  // r(t) = 2 for t < 0.5 else 0, c = 1: starting at 0 with N = 1 the first
  // accepted event is a birth with probability (2/3)(1 - e^{-1.5})
  TimeVaryingRates rates{[](double t) { return t < 0.5 ? 2.0 : 0.0; }, [](double) { return 1.0; }, 2.0, 1.0};
  Stream s(4);
  const int n = 60000;
  int births = 0;
  for (int i = 0; i < n; ++i) births += next_event(1, 1, rates, 0.0, s)->kind == EventKind::Birth;
  const double p = 2.0 / 3.0 * (1.0 - std::exp(-1.5));
  CHECK(std::abs(births / double(n) - p) < 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("birth duplicates the parent and extends the labelling") {
  CoupledState st(WeightedPointMeasure(PointSet::from_scalars({10, 20, 30}), 3), 5, false);
  const auto ev = apply_birth(st, 1.5, nullptr);
  CHECK(ev.index == 2);
  CHECK(st.x.first_coordinates() == std::vector<double>{10, 20, 30, 20});
  CHECK(st.labels == std::vector<std::uint64_t>{1, 2, 3, 4});
  CHECK(st.total_count == 4);
  st.check_invariants();

  CoupledState one(WeightedPointMeasure(PointSet::from_scalars({1.5}), 1), 5, true);
  const auto ref = PointSet::from_scalars({-4.0});
  apply_birth(one, 0.0, &ref);
  CHECK(one.y.first_coordinates() == std::vector<double>{1.5, -4.0});
  CHECK(one.x.first_coordinates() == std::vector<double>{1.5, 1.5});
  CHECK(one.labels.back() == one.total_count);
  one.check_invariants();
}

TEST_CASE("death shifts pairs and labels left") {
  CoupledState st(WeightedPointMeasure(PointSet::from_scalars({1, 2, 3}), 3), 5, true);
  st.y = PointSet::from_scalars({7, 8, 9});
  const auto ev = apply_death(st, 1.5);
  CHECK(ev.kind == EventKind::Death);
  CHECK(st.x.first_coordinates() == std::vector<double>{1, 3});
  CHECK(st.y.first_coordinates() == std::vector<double>{7, 9});
  CHECK(st.labels == std::vector<std::uint64_t>{1, 3});
  CHECK(st.total_count == 3);
  st.check_invariants();

  CoupledState single(WeightedPointMeasure(PointSet::from_scalars({1}), 1), 5, true);
  apply_death(single, 0.0);
  CHECK(single.alive() == 0);
  CHECK(single.x.empty());
  CHECK(single.y.empty());
  single.check_invariants();
}

TEST_CASE("death of the last pair leaves the top label below N-bar") {
  CoupledState st(WeightedPointMeasure(PointSet::from_scalars({1, 2, 3}), 3), 5, false);
  apply_death(st, 2.5);
  CHECK(st.labels == std::vector<std::uint64_t>{1, 2});
  CHECK(st.total_count == 3);
  CHECK_FALSE(st.labelling_tight());
  st.check_invariants();
  apply_birth(st, 0.5, nullptr);
  CHECK(st.labels == std::vector<std::uint64_t>{1, 2, 4});
  CHECK(st.labelling_tight());
}

TEST_CASE("birth after deaths uses a fresh stream index") {
  CoupledState st(WeightedPointMeasure(PointSet::from_scalars({1, 2, 3, 4}), 4), 9, false);
  apply_death(st, 3.2);
  apply_death(st, 0.1);
  apply_birth(st, 0.4, nullptr);
  CHECK(st.labels == std::vector<std::uint64_t>{2, 3, 5});
  CHECK(st.streams.back().key() == Stream(9, {5}).key());
  st.check_invariants();
}

TEST_CASE("no demography and measure-free motion keep the systems identical") {
  const auto rates = TimeVaryingRates::constant(0, 0);
  const auto ref = ou_reference(200, 1.0, 3, rates);
  const auto cfg = base_config(30, gaussian_initial(30, 30, 4), rates);
  const auto traj = simulate_coupled(cfg, ref, {1, 2});
  CHECK(traj.events.empty());
  for (const auto& o : traj.observations) {
    CHECK(o.mu.atoms().coords().size() == o.nu->atoms().coords().size());
    CHECK(std::equal(o.mu.atoms().coords().begin(), o.mu.atoms().coords().end(), o.nu->atoms().coords().begin()));
    CHECK(coupling_gap(o.mu, *o.nu) == 0.0);
  }
}

TEST_CASE("C.1 and labelling hold after every event") {
  const auto rates = TimeVaryingRates::constant(1.0, 0.8);
  const auto ref = ou_reference(400, 1.0, 5, rates);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto cfg = base_config(40, gaussian_initial(40, 40, 100 + seed), rates);
    std::size_t births = 0, checks = 0;
    const auto traj = simulate_coupled(cfg, ref, {seed, seed + 50}, [&](const CoupledState& s, const EventRecord& e) {
      s.check_invariants();
      if (e.kind == EventKind::Birth) CHECK(s.labelling_tight());
      CHECK(s.x.size() == s.y.size());
      CHECK(s.total_count == 40 + births + (e.kind == EventKind::Birth ? 1 : 0));
      births += e.kind == EventKind::Birth;
      ++checks;
    });
    CHECK(checks == traj.events.size());
    CHECK(traj.births == births);
    for (const auto& o : traj.observations) CHECK(o.mu.atom_count() == o.nu->atom_count());
  }
}

TEST_CASE("simulations are deterministic in their seeds") {
  const auto rates = TimeVaryingRates::constant(1.0, 0.5);
  const auto ref = ou_reference(300, 1.0, 6, rates);
  const auto cfg = base_config(25, gaussian_initial(25, 25, 7), rates);
  const auto a = simulate_coupled(cfg, ref, {11, 12});
  const auto b = simulate_coupled(cfg, ref, {11, 12});
  std::ostringstream ea, eb;
  write_event_rows(ea, 0, a.events);
  write_event_rows(eb, 0, b.events);
  CHECK(ea.str() == eb.str());
  for (std::size_t i = 0; i < a.observations.size(); ++i) {
    const auto& xa = a.observations[i].mu.atoms().coords();
    const auto& xb = b.observations[i].mu.atoms().coords();
    CHECK(std::equal(xa.begin(), xa.end(), xb.begin(), xb.end()));
  }
}

TEST_CASE("single-system run reproduces the X marginal") {
  const RateSpec rates = ConstantRates{1.0, 0.5, 0.0};
  Stream rng(1);
  std::vector<double> v(300);
  for (auto& x : v) x = rng.normal();
  Kernels k;
  k.diffusion_kernel = Kernel::gaussian(1.0);
  const auto coeffs = Coefficients::density_diffusion(1, 1.0, 0.5, 0.5);
  const auto ref = evolve_reference(coeffs, k, rates, ProbabilityEmpirical(PointSet::from_scalars(v)), 1.0,
                                    make_time_grid(1.0, 0.02), 0.02, 3);
  auto cfg = base_config(30, gaussian_initial(30, 30, 8), rates);
  cfg.coefficients = coeffs;
  cfg.kernels = k;
  cfg.step = 0.02;
  const auto coupled = simulate_coupled(cfg, ref, {21, 22});
  const auto single = simulate_single(cfg, {21, 22});
  REQUIRE(coupled.events.size() == single.events.size());
  for (std::size_t i = 0; i < coupled.observations.size(); ++i) {
    const auto& xa = coupled.observations[i].mu.atoms().coords();
    const auto& xb = single.observations[i].mu.atoms().coords();
    CHECK(std::equal(xa.begin(), xa.end(), xb.begin(), xb.end()));
    CHECK_FALSE(single.observations[i].nu.has_value());
  }
}

TEST_CASE("pure death never increases the population") {
  auto cfg = base_config(50, gaussian_initial(50, 50, 9), ConstantRates{0.0, 2.0, 0.0});
  cfg.observation_times = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  const auto traj = simulate_single(cfg, {3, 4});
  for (const auto& e : traj.events) CHECK(e.kind == EventKind::Death);
  for (std::size_t i = 1; i < traj.observations.size(); ++i)
    CHECK(traj.observations[i].mu.atom_count() <= traj.observations[i - 1].mu.atom_count());
}

TEST_CASE("extinct start runs to the horizon") {
  const auto rates = TimeVaryingRates::constant(1.0, 0.5);
  const auto ref = ou_reference(50, 1.0, 2, rates);
  const auto cfg = base_config(10, WeightedPointMeasure(PointSet(1), 10), rates);
  const auto traj = simulate_coupled(cfg, ref, {1, 2});
  CHECK(traj.observations.size() == 3);
  for (const auto& o : traj.observations) CHECK(o.mu.extinct());
}

TEST_CASE("pure-branching mass follows the linear law") {
  const auto rates = TimeVaryingRates::constant(1.0, 0.5);
  const std::int64_t k = 200;
  const int reps = 150;
  std::vector<double> m(reps);
  for (int r = 0; r < reps; ++r) {
    auto cfg = base_config(k, gaussian_initial(k, k, 1000 + r), rates);
    cfg.coefficients = Coefficients::zero(1);
    cfg.observation_times = {1.0};
    m[r] = mass(simulate_single(cfg, {derive_seed(5, {std::uint64_t(r)}), 0}, {}, false).observations[0].mu);
  }
  double mean = 0.0, sq = 0.0;
  for (double v : m) mean += v / reps;
  for (double v : m) sq += (v - mean) * (v - mean);
  const double se = std::sqrt(sq / (reps - 1) / reps);
  CHECK(std::abs(mean - std::exp(0.5)) < 3.0 * se);
}

TEST_CASE("fourth mass moment does not blow up with K") {
  const auto rates = TimeVaryingRates::constant(1.0, 0.5);
  std::vector<double> m4;
  for (std::int64_t k : {20, 80, 320}) {
    double s = 0.0;
    const int reps = 100;
    for (int r = 0; r < reps; ++r) {
      auto cfg = base_config(k, gaussian_initial(k, k, 7 * r + k), rates);
      cfg.coefficients = Coefficients::zero(1);
      cfg.observation_times = {0.5, 1.0};
      const auto traj = simulate_single(cfg, {derive_seed(k, {std::uint64_t(r)}), 1}, {}, false);
      double sup = 0.0;
      for (const auto& o : traj.observations) sup = std::max(sup, std::pow(mass(o.mu), 4));
      s += sup / reps;
    }
    m4.push_back(s);
  }
  for (double v : m4) CHECK(v < 2.0 * std::exp(2.0));
}

TEST_CASE("simulation argument checks") {
  const auto rates = TimeVaryingRates::constant(1.0, 0.5);
  const auto ref = ou_reference(50, 0.5, 2, rates);
  auto cfg = base_config(10, gaussian_initial(10, 10, 1), rates);
  CHECK_THROWS_AS(simulate_coupled(cfg, ref, {1, 2}), ConfigError);
  cfg.horizon = 0.5;
  cfg.observation_times = {0.0, 0.7};
  CHECK_THROWS_AS(simulate_coupled(cfg, ref, {1, 2}), ConfigError);
  cfg.observation_times = {0.5};
  cfg.scale = 11;
  CHECK_THROWS_AS(simulate_single(cfg, {1, 2}), ConfigError);
}

TEST_CASE("event log format") {
  std::ostringstream out;
  write_event_header(out);
  CHECK(out.str() == "replicate,time,kind,rho,index,cost_contribution\n");
}
