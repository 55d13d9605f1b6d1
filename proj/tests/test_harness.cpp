#include <doctest.h>

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <sstream>

#include "mfbranch/errors.hpp"
#include "mfbranch/harness.hpp"
#include "mfbranch/rng.hpp"

using namespace mfbranch;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.k_grid = {10, 20, 40};
  c.replicates = 3;
  c.horizon = 0.4;
  c.observe = {0, 0.2, 0.4};
  c.euler_step = 0.05;
  c.reference_step = 0.05;
  c.reference_size = 320;
  c.bl_dictionary = 16;
  c.seed = 5;
  return c;
}

double midpoint_w2sq(std::vector<double> xs, int per_cell) {
  std::sort(xs.begin(), xs.end());
  const boost::math::normal_distribution<double> phi;
  const double n = xs.size();
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (int k = 0; k < per_cell; ++k) {
      const double u = (i + (k + 0.5) / per_cell) / n;
      const double z = boost::math::quantile(phi, u);
      s += (xs[i] - z) * (xs[i] - z) / (n * per_cell);
    }
  return s;
}

}  // namespace

TEST_CASE("initial conditions") {
  InitialSpec spec;
  Stream rng(1);
  CHECK(generate_initial(spec, 1, 100, rng).atom_count() == 100);
  CHECK(generate_initial(spec, 3, 100, rng).dim() == 3);
  spec.mass = 0.0;
  CHECK_THROWS_AS(generate_initial(spec, 1, 100, rng), ConfigError);

  InitialSpec poisson;
  poisson.mode = InitialMode::Poisson;
  poisson.mass = 2.0;
  const int draws = 100000;
  double sum = 0.0;
  int zeros = 0;
  for (int i = 0; i < draws; ++i) {
    const auto m = generate_initial(poisson, 1, 1, rng);
    sum += m.atom_count();
    zeros += m.extinct();
  }
  CHECK(std::abs(sum / draws - 2.0) < 3.0 * std::sqrt(2.0 / draws));
  CHECK(zeros > 0);
}

TEST_CASE("Pareto initial law has the requested tail") {
  InitialSpec spec;
  spec.law = InitialLaw::Pareto;
  spec.tail_index = 3.0;
  Stream rng(2);
  const int n = 200000;
  int beyond = 0;
  for (int i = 0; i < n; ++i) {
    double x;
    spec.draw_atom(rng, std::span<double>(&x, 1));
    REQUIRE(std::abs(x) >= 1.0);
    beyond += std::abs(x) > 2.0;
  }
  const double p = std::pow(2.0, -3.0);
  CHECK(std::abs(beyond / double(n) - p) < 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("exact Gaussian W2") {
  CHECK(w2sq_to_gaussian({0.0}, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w2sq_to_gaussian({1.5}, 1.0) == doctest::Approx(1.0 + 2.25).epsilon(1e-12));
  CHECK(w2sq_to_gaussian({0.0}, 2.0) == doctest::Approx(4.0).epsilon(1e-12));
  const std::vector<double> xs{-1.2, 0.1, 0.4, 2.0, -0.3};
  CHECK(w2sq_to_gaussian(xs, 1.0) == doctest::Approx(midpoint_w2sq(xs, 20000)).epsilon(1e-5));
}

TEST_CASE("rate annotation") {
  const auto g = annotate_rate(1, 0.0, InitialMode::Fixed);
  CHECK(g.predicted_exponent == -0.25);
  CHECK(g.branch.rfind("d<4", 0) == 0);
  CHECK_FALSE(g.initial_mass_exponent.has_value());
  CHECK(annotate_rate(1, 3.0, InitialMode::Fixed).predicted_exponent == doctest::Approx(-1.0 / 6.0));
  CHECK(annotate_rate(6, 0.0, InitialMode::Fixed).predicted_exponent == doctest::Approx(-1.0 / 6.0));
  CHECK(annotate_rate(6, 2.5, InitialMode::Fixed).predicted_exponent == doctest::Approx(-0.1));
  CHECK(annotate_rate(2, 0.0, InitialMode::Poisson).initial_mass_exponent == -0.5);
}

TEST_CASE("degenerate experiment keeps both systems equal") {
  auto c = small_config();
  c.model.drift = "zero";
  c.model.sigma = 0.0;
  c.model.birth = 0.0;
  c.model.death = 0.0;
  const auto r = run_convergence_experiment(c);
  REQUIRE_FALSE(r.partial);
  CHECK(r.rows.size() == 3 * 3 * 3);
  for (const auto& row : r.rows) {
    CHECK(row.report.coupling_gap == 0.0);
    CHECK(row.report.w2sq_mu_nu == 0.0);
    CHECK(row.report.mass_gap == doctest::Approx(0.0).epsilon(1e-15));
  }
}

TEST_CASE("aggregates match the raw rows") {
  const auto c = small_config();
  const auto r = run_convergence_experiment(c, 2);
  REQUIRE(r.aggregates.size() == c.k_grid.size() * c.observe.size());
  CHECK(r.rows.size() == c.k_grid.size() * c.replicates * c.observe.size());
  for (const auto& a : r.aggregates) {
    std::vector<double> gaps;
    for (const auto& row : r.rows)
      if (row.scale == a.scale && row.time == a.time) gaps.push_back(row.report.coupling_gap);
    CHECK(a.count == gaps.size());
    CHECK(a.mean[5] == mean(gaps));
    CHECK(a.standard_error[5] == standard_error(gaps));
  }
  CHECK(r.bl_fit.has_value());
  CHECK(r.annotation.predicted_exponent == -0.25);
}

TEST_CASE("results are keyed by K and replicate, not grid position or threads") {
  auto a = small_config();
  auto b = small_config();
  b.k_grid = {20, 80};
  const auto ra = run_convergence_experiment(a, 1);
  const auto rb = run_convergence_experiment(b, 3);
  std::ostringstream sa, sb;
  for (const auto& row : ra.rows)
    if (row.scale == 20) write_distances_csv(sa, {row});
  for (const auto& row : rb.rows)
    if (row.scale == 20) write_distances_csv(sb, {row});
  CHECK(sa.str() == sb.str());
  CHECK_FALSE(sa.str().empty());
}

TEST_CASE("outputs are byte-stable") {
  const auto c = small_config();
  std::vector<std::pair<std::int64_t, std::vector<EventRecord>>> ea, eb;
  const auto ra = run_convergence_experiment(c, 1, &ea);
  const auto rb = run_convergence_experiment(c, 2, &eb);
  std::ostringstream da, db, ja, jb, va, vb;
  write_distances_csv(da, ra.rows);
  write_distances_csv(db, rb.rows);
  write_summary_json(ja, ra);
  write_summary_json(jb, rb);
  write_events_csv(va, ea);
  write_events_csv(vb, eb);
  CHECK(da.str() == db.str());
  CHECK(ja.str() == jb.str());
  CHECK(va.str() == vb.str());
  CHECK(da.str().rfind("K,replicate,t,w2sq_mu_nu,w2sq_nu_ref,bl_upper,bl_lower,mass_gap,coupling_gap,n_over_k\n", 0) == 0);
  CHECK(ja.str().find("wall") == std::string::npos);
  CHECK(ea.size() == 3);
}

TEST_CASE("chaos diagnostic at time zero") {
  ExperimentConfig c;
  c.k_grid = {200};
  c.replicates = 100;
  c.horizon = 0.5;
  c.observe = {0.0};
  c.euler_step = 0.05;
  c.reference_step = 0.05;
  c.reference_size = 2000;
  const auto r = chaoticity_diagnostic(c, 200, 2, 0.0, ParticleSystem::Interacting);
  CHECK(r.qualifying == 100);
  CHECK(r.ks_pass_rate >= 0.9);
  REQUIRE(r.correlations.size() == 1);
  CHECK(std::abs(r.correlations[0]) < 3.0 * r.correlation_se);
  c.replicates = 30;
  CHECK_THROWS_AS(chaoticity_diagnostic(c, 200, 2, 0.0, ParticleSystem::Interacting), InsufficientSamples);
}

TEST_CASE("fg check on the exact Gaussian path") {
  InitialSpec law;
  const auto r = fg_check(law, 1, {16, 64, 256}, 50, 3);
  CHECK(r.exact_law);
  CHECK(r.mean_w2sq[0] > r.mean_w2sq[2]);
  REQUIRE(r.w2sq_fit.has_value());
  CHECK(r.w2sq_fit->slope < 0.0);
}
