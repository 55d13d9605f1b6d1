#include <doctest.h>

#include <cmath>

#include "mfbranch/branching.hpp"
#include "mfbranch/errors.hpp"
#include "mfbranch/metrics.hpp"
#include "mfbranch/rng.hpp"

using namespace mfbranch;

namespace {

PointSet random_points(Stream& rng, std::size_t n, std::size_t d, double shift = 0.0) {
  PointSet p(d);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x) v = shift + rng.normal();
    p.push_back(x);
  }
  return p;
}

ProbabilityEmpirical law(std::vector<double> v) { return ProbabilityEmpirical(PointSet::from_scalars(std::move(v))); }

}  // namespace

TEST_CASE("rate function examples") {
  CHECK(fg_rate({3, 6}, 1e4) == doctest::Approx(1e-2 + std::pow(10.0, -8.0 / 3.0)).epsilon(1e-12));
  CHECK(fg_rate({3, 6}, 1e4) == doctest::Approx(0.0121544).epsilon(1e-5));
  CHECK(fg_rate({5, 2.5}, 32) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(fg_rate({4, 6}, 100) == doctest::Approx(0.507928).epsilon(1e-5));
  CHECK_THROWS_AS(fg_rate({2, 4}, 10), ExcludedCase);
  CHECK_THROWS_AS(fg_rate({4, 4}, 10), ExcludedCase);
  CHECK_THROWS_AS(fg_rate({6, 1.5}, 10), ExcludedCase);
  CHECK_THROWS_AS(fg_rate({1, 2}, 10), ConfigError);
}

TEST_CASE("rate function is decreasing in N and continuous in q") {
  for (std::size_t d : {1u, 3u, 4u, 6u}) {
    double prev = fg_rate({d, 5.5}, 1);
    for (double n = 2; n < 1e6; n *= 1.7) {
      const double v = fg_rate({d, 5.5}, n);
      CHECK(v < prev);
      prev = v;
    }
    CHECK(std::abs(fg_rate({d, 3.0}, 500) - fg_rate({d, 3.0 + 1e-9}, 500)) < 1e-8);
  }
}

TEST_CASE("W2 examples") {
  CHECK(w2(law({0}), law({1})) == doctest::Approx(1.0));
  CHECK(w2(law({3, 1, 2}), law({2, 3, 1})) == 0.0);
  CHECK(w2(law({0, 2}), law({1, 3})) == doctest::Approx(1.0));
  CHECK_THROWS_AS(w2(law({0}), ProbabilityEmpirical(PointSet(2, {0, 0}))), DimensionError);
}

TEST_CASE("W2 symmetry, triangle inequality and W1 <= W2") {
  Stream rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + trial % 3, n = 3 + trial % 6;
    const ProbabilityEmpirical a(random_points(rng, n, d)), b(random_points(rng, n, d, 0.5)),
        c(random_points(rng, n, d, -0.3));
    const double ab = w2(a, b), bc = w2(b, c), ac = w2(a, c);
    CHECK(ab == doctest::Approx(w2(b, a)).epsilon(1e-12));
    CHECK(ac <= ab + bc + 1e-8);
    CHECK(w1(a, b) <= ab + 1e-12);
  }
}

TEST_CASE("truncated transport routes") {
  Stream rng(5);
  const ProbabilityEmpirical a(random_points(rng, 6, 1)), b(random_points(rng, 6, 1, 3.0));
  const auto exact = transport_cost(a, b, GroundCost::TruncatedEuclidean);
  CHECK(exact.exact);
  const double brute = solve_assignment(CostMatrix::between(a.atoms(), b.atoms(), GroundCost::TruncatedEuclidean)).cost / 6;
  CHECK(exact.cost == doctest::Approx(brute));
  const ProbabilityEmpirical c(random_points(rng, 9, 1, 3.0));
  const auto approx = transport_cost(a, c, GroundCost::TruncatedEuclidean);
  CHECK_FALSE(approx.exact);
  CHECK(approx.cost <= 2.0);
}

TEST_CASE("bl_upper examples") {
  const WeightedPointMeasure two(PointSet::from_scalars({0, 0}), 1);
  CHECK(bl_upper(two, 1.0, law({0})).value == doctest::Approx(1.0));
  const WeightedPointMeasure m(PointSet::from_scalars({0.3, -1, 2}), 3);
  CHECK(bl_upper(m, 1.0, law({2, 0.3, -1})).value == doctest::Approx(0.0).epsilon(1e-15));
  const WeightedPointMeasure origin(PointSet::from_scalars({0}), 1);
  CHECK(bl_upper(origin, 1.0, law({3})).value == doctest::Approx(2.0));
  CHECK(bl_upper(WeightedPointMeasure(PointSet(1), 4), 1.7, law({3})).value == 1.7);
}

TEST_CASE("bl_upper follows the mass-law chain") {
  Stream rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 7;
    const WeightedPointMeasure m(random_points(rng, n, 2), 5);
    const ProbabilityEmpirical r(random_points(rng, n, 2, 0.4));
    const double rm = 0.5 + rng.uniform();
    const auto b = bl_upper(m, rm, r);
    const double w1t = transport_cost(normalize(m), r, GroundCost::TruncatedEuclidean).cost;
    CHECK(b.value == doctest::Approx(mass(m) * w1t + std::abs(mass(m) - rm)).epsilon(1e-12));
    CHECK(b.value <= mass(m) * w1(normalize(m), r) + std::abs(mass(m) - rm) + 1e-12);
  }
}

TEST_CASE("ridge dictionary functions have unit BL norm") {
  Stream rng(7);
  const auto dict = RidgeDictionary::random(2, 64, -3, 3, rng);
  CHECK(dict.size() == 65);
  Stream probe(8);
  for (const auto& ridge : dict.ridges()) {
    double sup = 0.0, lip = 0.0;
    for (int k = 0; k < 200; ++k) {
      const std::vector<double> x{4 * probe.normal(), 4 * probe.normal()};
      const std::vector<double> y{x[0] + 0.01 * probe.normal(), x[1] + 0.01 * probe.normal()};
      const double fx = RidgeDictionary::evaluate(ridge, x), fy = RidgeDictionary::evaluate(ridge, y);
      sup = std::max(sup, std::abs(fx));
      const double dist = std::hypot(x[0] - y[0], x[1] - y[1]);
      if (dist > 0) lip = std::max(lip, std::abs(fx - fy) / dist);
    }
    CHECK(sup + lip <= 1.0 + 1e-9);
    CHECK(sup <= 1.0 / (1.0 + ridge.slope) + 1e-12);
  }
}

TEST_CASE("bl_lower examples") {
  Stream rng(9);
  const WeightedPointMeasure m(PointSet::from_scalars({0.5, 1, -2}), 3);
  CHECK(bl_lower(m, 1.0, law({1, -2, 0.5}), 64, rng) == doctest::Approx(0.0).epsilon(1e-15));
  // delta_0 vs delta_3: with ||phi||_BL = Lip + sup the dual norm is
  // max_L min(3L, 2(1 - L)) = 6/5, attained at slope 2/3 centred at 1.5.
  const WeightedPointMeasure origin(PointSet::from_scalars({0}), 1);
  const RidgeDictionary optimal({{{1.0}, 2.0 / 3.0, -1.0}});
  CHECK(bl_lower(origin, 1.0, law({3}), optimal) == doctest::Approx(1.2).epsilon(1e-12));
  // A random dictionary of 128 ridges lands within about 15% of the supremum.
  const double lo = bl_lower(origin, 1.0, law({3}), 128, rng);
  CHECK(lo <= 1.2 + 1e-12);
  CHECK(lo >= 1.0);
  CHECK(lo <= bl_upper(origin, 1.0, law({3})).value);
  // mass difference is caught by the constant function
  const WeightedPointMeasure heavy(PointSet::from_scalars({0, 0, 0}), 1);
  CHECK(bl_lower(heavy, 1.0, law({0}), 4, rng) == doctest::Approx(2.0));
}

TEST_CASE("bl_lower never exceeds bl_upper") {
  Stream rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + trial % 2;
    const WeightedPointMeasure m(random_points(rng, 1 + trial % 9, d, rng.normal()), 1 + trial % 5);
    const ProbabilityEmpirical r(random_points(rng, 1 + trial % 7, d));
    const double rm = 0.2 + 2 * rng.uniform();
    CHECK(bl_lower(m, rm, r, 32, rng) <= bl_upper(m, rm, r).value + 1e-12);
  }
}

TEST_CASE("coupling gap examples") {
  const WeightedPointMeasure mu(PointSet::from_scalars({0, 2}), 2), nu(PointSet::from_scalars({1, 2}), 2);
  CHECK(coupling_gap(mu, nu) == doctest::Approx(0.5));
  CHECK(coupling_gap(mu, mu) == 0.0);
  CoupledState st(mu, 1, true);
  st.y = nu.atoms();
  CHECK(coupling_gap(st) == doctest::Approx(0.5));
  CHECK(coupling_gap(WeightedPointMeasure(PointSet(1), 2), WeightedPointMeasure(PointSet(1), 2)) == 0.0);
}

TEST_CASE("weighted W2 between the systems is dominated by the coupling gap") {
  Stream rng(11);
  std::vector<double> v(300);
  for (auto& x : v) x = rng.normal();
  const auto rates = TimeVaryingRates::constant(1.0, 0.5);
  const auto flow = evolve_reference(Coefficients::ornstein_uhlenbeck(1, 1, 1), {}, rates, law(v), 1.0,
                                     make_time_grid(1.0, 0.02), 0.02, 3);
  PointSet init(1);
  for (int i = 0; i < 40; ++i) init.push_back(std::vector<double>{rng.normal()});
  SimulationConfig cfg;
  cfg.scale = 40;
  cfg.coefficients = Coefficients::ornstein_uhlenbeck(1, 1, 1);
  cfg.rates = rates;
  cfg.initial = WeightedPointMeasure(init, 40);
  cfg.step = 0.02;
  int checked = 0;
  simulate_coupled(cfg, flow, {4, 5}, [&](const CoupledState& s, const EventRecord&) {
    if (s.alive() == 0) return;
    const double w = w2(ProbabilityEmpirical(s.x), ProbabilityEmpirical(s.y));
    CHECK(double(s.alive()) / s.scale * w * w <= coupling_gap(s) + 1e-12);
    ++checked;
  });
  CHECK(checked > 10);
}

TEST_CASE("moment error examples") {
  const std::vector<double> same{1.5, 1.5, 1.5};
  CHECK(ip_error(same, 1.5, 4) == 0.0);
  const std::vector<double> two{0, 2};
  CHECK(ip_error(two, 1, 1) == doctest::Approx(1.0));
  CHECK(ip_error(two, 1, 4) == doctest::Approx(1.0));
  CHECK_THROWS_AS(ip_error(std::vector<double>{}, 1, 2), DegenerateInput);
}

TEST_CASE("distance report on identical systems") {
  const auto ref = PointSet::from_scalars({-1, 0, 1, 2});
  const std::vector<double> sorted{-1, 0, 1, 2};
  const WeightedPointMeasure mu(PointSet::from_scalars({2, 1, 0, -1}), 4);
  const ReferenceView view{&ref, sorted, 1.0, nullptr, {}};
  const auto r = distance_report(mu, mu, view);
  CHECK(r.w2sq_mu_nu == 0.0);
  CHECK(r.w2sq_nu_ref == 0.0);
  CHECK(r.bl_upper == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r.mass_gap == 0.0);
  CHECK(r.coupling_gap == 0.0);
  CHECK(r.n_over_k == 1.0);

  const auto extinct = distance_report(WeightedPointMeasure(PointSet(1), 4), WeightedPointMeasure(PointSet(1), 4), view);
  CHECK(extinct.bl_upper == 1.0);
  CHECK(extinct.w2sq_mu_nu == 0.0);
  CHECK(extinct.n_over_k == 0.0);
}
