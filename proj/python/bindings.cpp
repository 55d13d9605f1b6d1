#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mfbranch/errors.hpp"
#include "mfbranch/harness.hpp"
#include "mfbranch/rng.hpp"

namespace py = pybind11;
using namespace mfbranch;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

PointSet to_points(const Array& a) {
  if (a.ndim() == 1) return PointSet::from_scalars({a.data(), a.data() + a.size()});
  if (a.ndim() != 2) throw DimensionError("expected an (n,) or (n, d) array");
  const auto d = static_cast<std::size_t>(a.shape(1));
  return PointSet(d, {a.data(), a.data() + a.size()});
}

Array to_array(const PointSet& p) {
  Array out({static_cast<py::ssize_t>(p.size()), static_cast<py::ssize_t>(p.dim())});
  std::copy(p.coords().begin(), p.coords().end(), out.mutable_data());
  return out;
}

GroundCost parse_cost(const std::string& name) {
  if (name == "sq") return GroundCost::SquaredEuclidean;
  if (name == "euclidean") return GroundCost::Euclidean;
  if (name == "truncated") return GroundCost::TruncatedEuclidean;
  throw ConfigError("unknown ground cost '" + name + "'");
}

ExperimentConfig config_from(const std::string& ini) {
  std::istringstream in(ini);
  return parse_config(in);
}

py::dict report_dict(const DistanceReport& r) {
  py::dict d;
  const auto v = field_values(r);
  for (std::size_t f = 0; f < v.size(); ++f) d[kDistanceFields[f]] = v[f];
  return d;
}

py::object fit_object(const std::optional<SlopeFit>& f) {
  if (!f) return py::none();
  py::dict d;
  d["slope"] = f->slope;
  d["intercept"] = f->intercept;
  d["ci"] = py::make_tuple(f->ci_low(), f->ci_high());
  d["stderr"] = f->slope_stderr;
  return std::move(d);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Binary-branching mean-field particle systems";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<EmptyMeasure>(m, "EmptyMeasure", base.ptr());
  py::register_exception<DegenerateInput>(m, "DegenerateInput", base.ptr());
  py::register_exception<ExcludedCase>(m, "ExcludedCase", base.ptr());
  py::register_exception<InsufficientSamples>(m, "InsufficientSamples", base.ptr());

  py::class_<Stream>(m, "Stream")
      .def(py::init<std::uint64_t>(), py::arg("key"))
      .def("uniform", &Stream::uniform)
      .def("normal", &Stream::normal)
      .def("exponential", &Stream::exponential, py::arg("rate"));

  m.def("derive_seed", [](std::uint64_t seed, std::uint64_t a, std::uint64_t b) { return derive_seed(seed, {a, b}); });

  m.def(
      "solve_assignment",
      [](const Array& cost) {
        if (cost.ndim() != 2 || cost.shape(0) != cost.shape(1)) throw DimensionError("square matrix expected");
        CostMatrix c(cost.shape(0), cost.shape(1));
        std::copy(cost.data(), cost.data() + cost.size(), c.data.begin());
        const auto a = solve_assignment(c);
        return py::make_tuple(a.permutation, a.cost);
      },
      py::arg("cost"), "Minimum-cost permutation (lexicographically smallest among optima) and its cost.");

  m.def(
      "quantile_coupling_cost",
      [](const Array& xs, const Array& ys, const std::string& cost) {
        return quantile_coupling(to_points(xs), to_points(ys), parse_cost(cost)).cost();
      },
      py::arg("xs"), py::arg("ys"), py::arg("cost") = "sq");

  m.def(
      "w2", [](const Array& xs, const Array& ys) { return w2(ProbabilityEmpirical(to_points(xs)), ProbabilityEmpirical(to_points(ys))); },
      py::arg("xs"), py::arg("ys"));

  m.def(
      "bl_upper",
      [](const Array& atoms, std::int64_t scale, double ref_mass, const Array& ref) {
        return bl_upper(WeightedPointMeasure(to_points(atoms), scale), ref_mass, ProbabilityEmpirical(to_points(ref)))
            .value;
      },
      py::arg("atoms"), py::arg("scale"), py::arg("reference_mass"), py::arg("reference"));

  m.def(
      "bl_lower",
      [](const Array& atoms, std::int64_t scale, double ref_mass, const Array& ref, std::size_t count,
         std::uint64_t seed) {
        Stream rng(seed);
        return bl_lower(WeightedPointMeasure(to_points(atoms), scale), ref_mass, ProbabilityEmpirical(to_points(ref)),
                        count, rng);
      },
      py::arg("atoms"), py::arg("scale"), py::arg("reference_mass"), py::arg("reference"), py::arg("count") = 64,
      py::arg("seed") = 0);

  m.def(
      "fg_rate", [](std::size_t d, double q, double n) { return fg_rate({d, q}, n); }, py::arg("dim"), py::arg("q"),
      py::arg("n"));
  m.def("logistic_mass", &logistic_mass, py::arg("n0"), py::arg("r"), py::arg("c"), py::arg("t"));
  m.def(
      "linear_mass", [](double n0, double r, double c, double t) { return linear_mass(n0, TimeVaryingRates::constant(r, c), t); },
      py::arg("n0"), py::arg("r"), py::arg("c"), py::arg("t"));

  m.def(
      "fit_slope",
      [](const std::vector<std::pair<double, double>>& points) { return fit_object(fit_slope(points)); },
      py::arg("points"));
  m.def(
      "ks_two_sample",
      [](std::vector<double> a, std::vector<double> b) {
        const auto r = ks_two_sample(std::move(a), std::move(b));
        return py::make_tuple(r.statistic, r.p_value);
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "default_config", [] { return to_ini(default_preset()); }, "INI text of the default experiment.");
  m.def(
      "validate_config", [](const std::string& ini) { return to_ini(config_from(ini)); }, py::arg("ini"));

  m.def(
      "simulate",
      [](const std::string& ini, std::int64_t scale, std::uint64_t replicate) {
        const auto cfg = config_from(ini);
        Trajectory traj;
        {
          py::gil_scoped_release release;
          const auto flow = build_reference(cfg);
          const auto seeds = replicate_seeds(cfg.seed, scale, replicate);
          Stream rng(seeds.initial);
          const auto initial = generate_initial(cfg.initial, cfg.model.dim, scale, rng);
          traj = simulate_coupled(build_simulation(cfg, scale, initial), flow, {seeds.events, seeds.streams});
        }
        py::list obs;
        for (const auto& o : traj.observations) {
          py::dict d;
          d["t"] = o.time;
          d["mu"] = to_array(o.mu.atoms());
          d["nu"] = to_array(o.nu->atoms());
          d["total_count"] = o.total_count;
          obs.append(d);
        }
        py::dict out;
        out["observations"] = obs;
        out["births"] = traj.births;
        out["deaths"] = traj.deaths;
        out["events"] = traj.events.size();
        return out;
      },
      py::arg("config"), py::arg("scale"), py::arg("replicate") = 0,
      "One coupled trajectory; returns atoms of both systems at the observation times.");

  m.def(
      "run_experiment",
      [](const std::string& ini, unsigned threads) {
        const auto cfg = config_from(ini);
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_convergence_experiment(cfg, threads);
        }
        Array rows({static_cast<py::ssize_t>(r.rows.size()), py::ssize_t{10}});
        auto* p = rows.mutable_data();
        for (const auto& row : r.rows) {
          *p++ = static_cast<double>(row.scale);
          *p++ = static_cast<double>(row.replicate);
          *p++ = row.time;
          for (double v : field_values(row.report)) *p++ = v;
        }
        py::dict out;
        out["rows"] = rows;
        py::list cols;
        cols.append("K");
        cols.append("replicate");
        cols.append("t");
        for (const char* f : kDistanceFields) cols.append(f);
        out["columns"] = cols;
        out["bl_upper_slope"] = fit_object(r.bl_fit);
        out["coupling_gap_slope"] = fit_object(r.gap_fit);
        out["predicted_exponent"] = r.annotation.predicted_exponent;
        out["branch"] = r.annotation.branch;
        out["partial"] = r.partial;
        return out;
      },
      py::arg("config"), py::arg("threads") = 1);

  m.def(
      "distance_report",
      [](const Array& mu, const Array& nu, std::int64_t scale, const Array& ref, double ref_mass) {
        const auto sample = to_points(ref);
        const ReferenceView view{&sample, {}, ref_mass, nullptr, {}};
        return report_dict(distance_report(WeightedPointMeasure(to_points(mu), scale),
                                           WeightedPointMeasure(to_points(nu), scale), view));
      },
      py::arg("mu"), py::arg("nu"), py::arg("scale"), py::arg("reference"), py::arg("reference_mass"));
}
