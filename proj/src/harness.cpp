#include "mfbranch/harness.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "mfbranch/errors.hpp"
#include "mfbranch/io.hpp"
#include "mfbranch/parallel.hpp"
#include "mfbranch/rng.hpp"

namespace mfbranch {

namespace {

constexpr std::uint64_t kReferenceTag = 0x7265666572656e63ULL;
constexpr std::uint64_t kDictionaryTag = 0x64696374696f6e61ULL;

struct ReferenceViews {
  std::vector<std::size_t> snapshot;
  std::vector<RidgeDictionary> dictionaries;
  std::vector<std::vector<double>> integrals;

  ReferenceView view(const ReferenceFlow& flow, std::size_t k) const {
    const std::size_t j = snapshot[k];
    return {&flow.sample(j), flow.sorted_values(j), flow.masses()[j],
            dictionaries.empty() ? nullptr : &dictionaries[k],
            integrals.empty() ? std::span<const double>{} : std::span<const double>(integrals[k])};
  }
};

ReferenceViews prepare_views(const ExperimentConfig& config, const ReferenceFlow& flow) {
  ReferenceViews v;
  Stream rng(config.seed, {kDictionaryTag});
  for (double t : config.observe) {
    const std::size_t j = flow.index_at(t);
    v.snapshot.push_back(j);
    if (config.bl_dictionary == 0) continue;
    const PointSet& sample = flow.sample(j);
    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const double r = euclidean_norm(sample[i]);
      hi = std::max(hi, r);
    }
    lo = -hi;
    auto dict = RidgeDictionary::random(flow.dim(), config.bl_dictionary, lo, hi, rng);
    v.integrals.push_back(dict.integrals(sample, flow.masses()[j]));
    v.dictionaries.push_back(std::move(dict));
  }
  return v;
}

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json fit_json(const std::optional<SlopeFit>& fit) {
  if (!fit) return nullptr;
  return {{"slope", number(fit->slope)},
          {"intercept", number(fit->intercept)},
          {"ci_low", number(fit->ci_low())},
          {"ci_high", number(fit->ci_high())},
          {"stderr", number(fit->slope_stderr)},
          {"points", fit->points}};
}

std::optional<SlopeFit> try_fit(const std::vector<std::pair<double, double>>& points) {
  try {
    return fit_slope(points);
  } catch (const DegenerateInput&) {
    return std::nullopt;
  }
}

}  // namespace

WeightedPointMeasure generate_initial(const InitialSpec& spec, std::size_t dim, std::int64_t scale, Stream& rng) {
  spec.validate();
  if (scale < 1) throw ConfigError("carrying capacity must be >= 1");
  const double expected = static_cast<double>(scale) * spec.mass;
  const std::uint64_t n = spec.mode == InitialMode::Fixed ? static_cast<std::uint64_t>(std::llround(expected))
                                                           : rng.poisson(expected);
  PointSet atoms(dim);
  atoms.reserve(n);
  std::vector<double> x(dim);
  for (std::uint64_t i = 0; i < n; ++i) {
    spec.draw_atom(rng, x);
    atoms.push_back(x);
  }
  return WeightedPointMeasure(std::move(atoms), scale);
}

ReferenceFlow build_reference(const ExperimentConfig& config, unsigned threads, std::uint64_t salt) {
  config.validate();
  const std::size_t m = config.effective_reference_size();
  Stream rng(config.seed, {kReferenceTag, salt, 0});
  PointSet sample(config.model.dim);
  sample.reserve(m);
  std::vector<double> x(config.model.dim);
  for (std::size_t i = 0; i < m; ++i) {
    config.initial.draw_atom(rng, x);
    sample.push_back(x);
  }
  const auto grid = make_time_grid(config.horizon, config.reference_step, config.observe);
  return evolve_reference(build_coefficients(config.model), build_kernels(config.model),
                          build_rates(config.model), ProbabilityEmpirical(std::move(sample)), config.initial.mass,
                          grid, config.reference_step, derive_seed(config.seed, {kReferenceTag, salt, 1}),
                          threads);
}

SimulationConfig build_simulation(const ExperimentConfig& config, std::int64_t scale,
                                  const WeightedPointMeasure& initial) {
  SimulationConfig sim;
  sim.scale = scale;
  sim.coefficients = build_coefficients(config.model);
  sim.kernels = build_kernels(config.model);
  sim.rates = build_rates(config.model);
  sim.initial = initial;
  sim.horizon = config.horizon;
  sim.step = config.euler_step;
  sim.observation_times = config.observe;
  sim.transport.assignment_cap = config.assignment_cap;
  return sim;
}

ReplicateSeeds replicate_seeds(std::uint64_t master, std::int64_t scale, std::uint64_t replicate) {
  const auto k = static_cast<std::uint64_t>(scale);
  return {derive_seed(master, {k, replicate, 0}), derive_seed(master, {k, replicate, 1}),
          derive_seed(master, {k, replicate, 2})};
}

std::array<double, 7> field_values(const DistanceReport& r) noexcept {
  return {r.w2sq_mu_nu, r.w2sq_nu_ref, r.bl_upper, r.bl_lower, r.mass_gap, r.coupling_gap, r.n_over_k};
}

RateAnnotation annotate_rate(std::size_t dim, double q, InitialMode mode) {
  RateAnnotation a;
  const double base = dim < 4 ? 0.25 : dim == 4 ? 0.25 : 1.0 / static_cast<double>(dim);
  const bool all_moments = q == 0.0 || std::isinf(q);
  const double moment = all_moments ? 0.5 : (q - 2.0) / (2.0 * q);
  std::string dpart = dim < 4 ? "d<4" : dim == 4 ? "d=4 (log factor)" : "d>4";
  std::string qpart;
  if (all_moments) {
    qpart = "all moments: dimension term dominates";
  } else {
    const double threshold = dim <= 4 ? 4.0 : 2.0 * dim / (dim - 2.0);
    const std::string thr = format_double(threshold);
    qpart = q > threshold   ? "q>" + thr + ": dimension term dominates"
            : q < threshold ? "q<" + thr + ": moment term dominates"
                            : "q=" + thr + ": excluded logarithmic case";
  }
  a.branch = dpart + ", " + qpart;
  a.predicted_exponent = -std::min(base, moment);
  if (mode == InitialMode::Poisson) a.initial_mass_exponent = -0.5;
  return a;
}

std::vector<AggregateRow> aggregate_rows(const std::vector<DistanceRow>& rows,
                                         const std::vector<std::int64_t>& k_grid,
                                         const std::vector<double>& times) {
  std::map<std::pair<std::int64_t, std::size_t>, std::array<std::vector<double>, 7>> cells;
  for (const auto& row : rows) {
    const auto it = std::find(times.begin(), times.end(), row.time);
    if (it == times.end()) continue;
    auto& cell = cells[{row.scale, static_cast<std::size_t>(it - times.begin())}];
    const auto v = field_values(row.report);
    for (std::size_t f = 0; f < v.size(); ++f) cell[f].push_back(v[f]);
  }
  std::vector<AggregateRow> out;
  for (auto k : k_grid) {
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      AggregateRow a{k, times[ti], 0, {}, {}};
      if (auto it = cells.find({k, ti}); it != cells.end()) {
        a.count = it->second[0].size();
        for (std::size_t f = 0; f < 7; ++f) {
          a.mean[f] = mean(it->second[f]);
          a.standard_error[f] = standard_error(it->second[f]);
        }
      }
      out.push_back(a);
    }
  }
  return out;
}

ExperimentResult run_convergence_experiment(const ExperimentConfig& config, unsigned threads,
                                            std::vector<std::pair<std::int64_t, std::vector<EventRecord>>>* events,
                                            const ProgressFn& progress) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  ExperimentResult result;
  result.config = config;
  const double q = config.initial.moment_order;
  result.annotation = annotate_rate(config.model.dim, q, config.initial.mode);

  const ReferenceFlow flow = build_reference(config, threads);
  const ReferenceViews views = prepare_views(config, flow);

  struct Cell {
    std::vector<DistanceRow> rows;
    std::vector<EventRecord> events;
    std::string failure;
  };
  const std::size_t reps = config.replicates;
  std::vector<Cell> cells(config.k_grid.size() * reps);
  parallel_for(cells.size(), threads, [&](std::size_t c) {
    const std::int64_t k = config.k_grid[c / reps];
    const std::uint64_t rep = c % reps;
    Cell& cell = cells[c];
    try {
      const auto seeds = replicate_seeds(config.seed, k, rep);
      Stream init_rng(seeds.initial);
      const auto initial = generate_initial(config.initial, config.model.dim, k, init_rng);
      const auto sim = build_simulation(config, k, initial);
      const bool keep_events = events && rep == 0;
      auto traj = simulate_coupled(sim, flow, {seeds.events, seeds.streams}, {}, keep_events);
      MetricOptions opts;
      opts.solver.assignment_cap = config.assignment_cap;
      for (std::size_t ti = 0; ti < traj.observations.size(); ++ti) {
        const auto& obs = traj.observations[ti];
        cell.rows.push_back({k, rep, obs.time, distance_report(obs.mu, *obs.nu, views.view(flow, ti), opts)});
      }
      if (keep_events) cell.events = std::move(traj.events);
    } catch (const std::exception& e) {
      cell.rows.clear();
      cell.failure = "K=" + std::to_string(k) + " replicate=" + std::to_string(rep) + ": " + e.what();
    }
    if (progress) progress(k, rep);
  });

  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto& cell = cells[c];
    if (!cell.failure.empty()) {
      result.partial = true;
      result.failures.push_back(cell.failure);
    }
    result.rows.insert(result.rows.end(), cell.rows.begin(), cell.rows.end());
    if (events && c % reps == 0) events->emplace_back(config.k_grid[c / reps], std::move(cell.events));
  }
  result.aggregates = aggregate_rows(result.rows, config.k_grid, config.observe);

  std::vector<std::pair<double, double>> bl_points, gap_points;
  const std::size_t nt = config.observe.size();
  for (std::size_t ki = 0; ki < config.k_grid.size(); ++ki) {
    double bl = 0.0, gap = 0.0;
    for (std::size_t ti = 0; ti < nt; ++ti) {
      const auto& a = result.aggregates[ki * nt + ti];
      bl = std::max(bl, a.mean[2]);
      gap = std::max(gap, a.mean[5]);
    }
    const double k = static_cast<double>(config.k_grid[ki]);
    bl_points.emplace_back(k, bl);
    gap_points.emplace_back(k, gap);
  }
  result.bl_fit = try_fit(bl_points);
  result.gap_fit = try_fit(gap_points);

  if (q != 0.0) {
    try {
      const RateParams params{config.model.dim, q};
      params.validate();
      for (auto k : config.k_grid) result.fg_rates.push_back(fg_rate(params, static_cast<double>(k)));
    } catch (const Error&) {
      result.fg_rates.clear();
    }
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_distances_csv(std::ostream& out, const std::vector<DistanceRow>& rows) {
  out << "K,replicate,t";
  for (const char* f : kDistanceFields) out << ',' << f;
  out << '\n';
  for (const auto& row : rows) {
    out << row.scale << ',' << row.replicate << ',' << format_double(row.time);
    for (double v : field_values(row.report)) out << ',' << format_double(v);
    out << '\n';
  }
}

void write_events_csv(std::ostream& out,
                      const std::vector<std::pair<std::int64_t, std::vector<EventRecord>>>& events) {
  out << "K,";
  write_event_header(out);
  for (const auto& [k, list] : events) {
    std::ostringstream body;
    write_event_rows(body, 0, list);
    std::istringstream lines(body.str());
    for (std::string line; std::getline(lines, line);) out << k << ',' << line << '\n';
  }
}

void write_summary_json(std::ostream& out, const ExperimentResult& r) {
  const auto& c = r.config;
  nlohmann::json j;
  j["version"] = "0.1.0";
  j["seed"] = c.seed;
  // The output location does not affect results; leave it out so reruns
  // into another directory stay byte-identical.
  ExperimentConfig identity = c;
  identity.output_dir.clear();
  j["config"] = to_ini(identity);
  j["k_grid"] = c.k_grid;
  j["observe"] = c.observe;
  j["replicates"] = c.replicates;
  j["reference_size"] = c.effective_reference_size();
  j["partial"] = r.partial;
  j["failures"] = r.failures;
  j["branch"] = r.annotation.branch;
  j["predicted_exponent"] = number(r.annotation.predicted_exponent);
  j["initial_mass_exponent"] =
      r.annotation.initial_mass_exponent ? number(*r.annotation.initial_mass_exponent) : nlohmann::json(nullptr);
  j["bl_upper_slope"] = fit_json(r.bl_fit);
  j["coupling_gap_slope"] = fit_json(r.gap_fit);
  auto fg = nlohmann::json::array();
  for (double v : r.fg_rates) fg.push_back(number(v));
  j["fg_rate"] = fg;
  auto aggs = nlohmann::json::array();
  for (const auto& a : r.aggregates) {
    nlohmann::json row{{"K", a.scale}, {"t", number(a.time)}, {"count", a.count}};
    for (std::size_t f = 0; f < 7; ++f) {
      row[std::string("mean_") + kDistanceFields[f]] = number(a.mean[f]);
      row[std::string("se_") + kDistanceFields[f]] = number(a.standard_error[f]);
    }
    aggs.push_back(std::move(row));
  }
  j["aggregates"] = aggs;
  out << j.dump(2) << '\n';
}

void write_outputs(const std::string& dir, const ExperimentResult& result,
                   const std::vector<std::pair<std::int64_t, std::vector<EventRecord>>>* events) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "distances.csv");
    write_distances_csv(out, result.rows);
  }
  {
    std::ofstream out(fs::path(dir) / "summary.json");
    write_summary_json(out, result);
  }
  if (events) {
    std::ofstream out(fs::path(dir) / "events.csv");
    write_events_csv(out, *events);
  }
}

double w2sq_to_gaussian(std::vector<double> sample, double s) {
  if (sample.empty()) throw EmptyMeasure("empty sample");
  if (!(s > 0.0)) throw ConfigError("Gaussian scale must be positive");
  std::sort(sample.begin(), sample.end());
  const boost::math::normal_distribution<double> phi;
  const double n = static_cast<double>(sample.size());
  // On each quantile cell [a, b]: int z = pdf(z_a) - pdf(z_b),
  // int z^2 = [cdf(z) - z pdf(z)]_{z_a}^{z_b}.
  auto pdf_at = [&](double z) { return std::isinf(z) ? 0.0 : boost::math::pdf(phi, z); };
  auto zpdf_at = [&](double z) { return std::isinf(z) ? 0.0 : z * boost::math::pdf(phi, z); };
  double total = 0.0;
  double za = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double b = static_cast<double>(i + 1) / n;
    const double zb = i + 1 == sample.size() ? std::numeric_limits<double>::infinity()
                                             : boost::math::quantile(phi, b);
    const double m1 = pdf_at(za) - pdf_at(zb);
    const double m2 = (b - static_cast<double>(i) / n) - (zpdf_at(zb) - zpdf_at(za));
    const double x = sample[i] / s;
    total += x * x / n - 2.0 * x * m1 + m2;
    za = zb;
  }
  return s * s * std::max(total, 0.0);
}

FgCheckResult fg_check(const InitialSpec& law, std::size_t dim, const std::vector<std::int64_t>& sizes,
                       std::size_t replicas, std::uint64_t seed, unsigned threads) {
  law.validate();
  if (sizes.empty() || replicas < 2) throw ConfigError("fg-check needs sizes and >= 2 replicas");
  FgCheckResult out;
  out.sizes = sizes;
  out.exact_law = dim == 1 && law.law == InitialLaw::Gaussian;
  const auto nmax = *std::max_element(sizes.begin(), sizes.end());

  PointSet reference(dim);
  std::vector<double> sorted_reference;
  if (!out.exact_law) {
    Stream rng(seed, {kReferenceTag, 0xfe});
    std::vector<double> x(dim);
    for (std::int64_t i = 0; i < 16 * nmax; ++i) {
      law.draw_atom(rng, x);
      reference.push_back(x);
    }
    if (dim == 1) {
      sorted_reference = reference.first_coordinates();
      std::sort(sorted_reference.begin(), sorted_reference.end());
    }
  }

  std::vector<std::pair<double, double>> sq_points, lin_points;
  for (auto n : sizes) {
    if (n < 1) throw ConfigError("sample sizes must be positive");
    std::vector<double> values(replicas);
    parallel_for(replicas, threads, [&](std::size_t rep) {
      Stream rng(seed, {static_cast<std::uint64_t>(n), rep});
      PointSet sample(dim);
      std::vector<double> x(dim);
      for (std::int64_t i = 0; i < n; ++i) {
        law.draw_atom(rng, x);
        sample.push_back(x);
      }
      if (out.exact_law) {
        values[rep] = w2sq_to_gaussian(sample.first_coordinates(), law.scale);
      } else if (dim == 1) {
        auto s = sample.first_coordinates();
        std::sort(s.begin(), s.end());
        values[rep] = w2_squared_sorted(s, sorted_reference);
      } else {
        const double w = w2(ProbabilityEmpirical(std::move(sample)), ProbabilityEmpirical(reference));
        values[rep] = w * w;
      }
    });
    std::vector<double> roots(values.size());
    std::transform(values.begin(), values.end(), roots.begin(), [](double v) { return std::sqrt(v); });
    out.mean_w2sq.push_back(mean(values));
    out.se_w2sq.push_back(standard_error(values));
    out.mean_w2.push_back(mean(roots));
    sq_points.emplace_back(static_cast<double>(n), out.mean_w2sq.back());
    lin_points.emplace_back(static_cast<double>(n), out.mean_w2.back());
  }
  out.w2sq_fit = try_fit(sq_points);
  out.w2_fit = try_fit(lin_points);
  const double q = law.moment_order;
  if (q != 0.0) {
    try {
      const RateParams params{dim, q};
      params.validate();
      for (auto n : sizes) out.predicted.push_back(fg_rate(params, static_cast<double>(n)));
    } catch (const Error&) {
      out.predicted.clear();
    }
  }
  return out;
}

ChaosReport chaoticity_diagnostic(const ExperimentConfig& config, std::int64_t scale, std::size_t atoms,
                                  double time, ParticleSystem system, unsigned threads) {
  config.validate();
  if (atoms < 1) throw ConfigError("need at least one atom");
  if (time < 0.0 || time > config.horizon) throw ConfigError("diagnostic time outside [0, horizon]");
  ExperimentConfig cfg = config;
  cfg.observe = {time};
  const ReferenceFlow flow = build_reference(cfg, threads);
  const ReferenceFlow fresh = build_reference(cfg, threads, 1);
  const auto fresh_values = fresh.sample(fresh.index_at(time)).first_coordinates();

  struct Cell {
    bool qualifies = false;
    bool ks_pass = false;
    std::vector<double> first;
  };
  std::vector<Cell> cells(cfg.replicates);
  parallel_for(cells.size(), threads, [&](std::size_t rep) {
    const auto seeds = replicate_seeds(cfg.seed, scale, rep);
    Stream init_rng(seeds.initial);
    const auto initial = generate_initial(cfg.initial, cfg.model.dim, scale, init_rng);
    const auto sim = build_simulation(cfg, scale, initial);
    const auto traj = simulate_coupled(sim, flow, {seeds.events, seeds.streams}, {}, false);
    const auto& obs = traj.observations.front();
    const PointSet& pts = system == ParticleSystem::Interacting ? obs.mu.atoms() : obs.nu->atoms();
    Cell& cell = cells[rep];
    if (pts.size() < std::max<std::size_t>(atoms, 2)) return;
    cell.qualifies = true;
    cell.ks_pass = ks_two_sample(pts.first_coordinates(), fresh_values).p_value >= 0.05;
    for (std::size_t a = 0; a < atoms; ++a) cell.first.push_back(pts[a][0]);
  });

  ChaosReport report;
  report.scale = scale;
  report.time = time;
  report.atoms = atoms;
  std::size_t passes = 0;
  std::vector<std::vector<double>> columns(atoms);
  for (const auto& cell : cells) {
    if (!cell.qualifies) continue;
    ++report.qualifying;
    passes += cell.ks_pass ? 1 : 0;
    for (std::size_t a = 0; a < atoms; ++a) columns[a].push_back(cell.first[a]);
  }
  if (report.qualifying < 50)
    throw InsufficientSamples("only " + std::to_string(report.qualifying) + " qualifying replicas");
  report.ks_pass_rate = static_cast<double>(passes) / static_cast<double>(report.qualifying);
  report.correlation_se = 1.0 / std::sqrt(static_cast<double>(report.qualifying - 1));
  for (std::size_t a = 0; a < atoms; ++a)
    for (std::size_t b = a + 1; b < atoms; ++b) {
      const double r = pearson(columns[a], columns[b]);
      report.correlations.push_back(r);
      report.max_abs_correlation = std::max(report.max_abs_correlation, std::abs(r));
    }
  return report;
}

}  // namespace mfbranch
