#include "mfbranch/config.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mfbranch/errors.hpp"
#include "mfbranch/io.hpp"
#include "mfbranch/rng.hpp"

namespace mfbranch {

namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& allowed_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"model",
       {"dimension", "drift", "theta", "sigma", "gamma", "kernel", "kernel_scale", "rates", "birth", "death",
        "competition", "killing"}},
      {"initial", {"mode", "mass", "law", "scale", "tail_index", "moment_order"}},
      {"experiment",
       {"k_grid", "replicates", "horizon", "observe", "euler_step", "reference_size", "reference_step", "seed",
        "assignment_cap", "bl_dictionary"}},
      {"output", {"dir"}},
  };
  return keys;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("empty list element in '" + text + "'");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("bad value for " + key + ": '" + text + "'");
  return value;
}

template <class T>
void read(const pt::ptree& section, const std::string& name, const std::string& key, T& out) {
  if (auto v = section.get_optional<std::string>(key)) out = parse_value<T>(name + "." + key, *v);
}

void read_string(const pt::ptree& section, const std::string& key, std::string& out) {
  if (auto v = section.get_optional<std::string>(key)) out = *v;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    if constexpr (std::is_floating_point_v<T>)
      s += format_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

void InitialSpec::validate() const {
  if (!(mass > 0.0) || !std::isfinite(mass)) throw ConfigError("initial mass must be positive");
  if (!(scale > 0.0)) throw ConfigError("initial scale must be positive");
  if (law == InitialLaw::Pareto && !(tail_index > 2.0)) throw ConfigError("Pareto tail index must exceed 2");
  if (moment_order != 0.0 && !(moment_order > 2.0)) throw ConfigError("moment order must exceed 2");
}

void InitialSpec::draw_atom(Stream& rng, std::span<double> out) const {
  for (double& v : out) {
    switch (law) {
      case InitialLaw::Gaussian:
        v = scale * rng.normal();
        break;
      case InitialLaw::Uniform:
        v = scale * (2.0 * rng.uniform() - 1.0);
        break;
      case InitialLaw::Pareto: {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        v = sign * scale * std::pow(rng.uniform_open(), -1.0 / tail_index);
        break;
      }
    }
  }
}

std::size_t ExperimentConfig::effective_reference_size() const {
  if (reference_size > 0) return reference_size;
  const auto kmax = k_grid.empty() ? std::int64_t{1} : *std::max_element(k_grid.begin(), k_grid.end());
  return static_cast<std::size_t>(8 * kmax);
}

void ExperimentConfig::validate() const {
  if (model.dim < 1) throw ConfigError("dimension must be >= 1");
  if (model.drift != "ou" && model.drift != "zero" && model.drift != "density")
    throw ConfigError("unknown drift preset '" + model.drift + "'");
  if (model.kernel != "none" && model.kernel != "exponential" && model.kernel != "gaussian")
    throw ConfigError("unknown kernel '" + model.kernel + "'");
  if (model.rates != "pure" && model.rates != "logistic") throw ConfigError("unknown rates '" + model.rates + "'");
  if (model.birth < 0 || model.death < 0 || model.competition < 0 || model.killing < 0)
    throw ConfigError("rates must be nonnegative");
  if (!(model.kernel_scale > 0.0)) throw ConfigError("kernel_scale must be positive");
  if (model.drift == "density" && model.kernel == "none")
    throw ConfigError("density drift preset needs a kernel");
  initial.validate();
  if (k_grid.empty()) throw ConfigError("k_grid is empty");
  for (auto k : k_grid)
    if (k < 1) throw ConfigError("K values must be positive");
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
  if (!(euler_step > 0.0) || !(reference_step > 0.0)) throw ConfigError("steps must be positive");
  if (observe.empty()) throw ConfigError("observation grid is empty");
  for (std::size_t i = 0; i < observe.size(); ++i) {
    if (observe[i] < 0.0 || observe[i] > horizon) throw ConfigError("observation time outside [0, horizon]");
    if (i > 0 && !(observe[i] > observe[i - 1])) throw ConfigError("observation times must increase");
  }
  const auto kmax = *std::max_element(k_grid.begin(), k_grid.end());
  if (effective_reference_size() < static_cast<std::size_t>(kmax))
    throw ConfigError("reference_size must be >= max K");
  if (assignment_cap < 1) throw ConfigError("assignment_cap must be >= 1");
}

ExperimentConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  const auto& keys = allowed_keys();
  for (const auto& [name, section] : tree) {
    auto it = keys.find(name);
    if (it == keys.end()) throw ConfigError("unknown section [" + name + "]");
    if (section.empty() && !section.data().empty()) throw ConfigError("key '" + name + "' outside a section");
    for (const auto& [key, value] : section)
      if (!it->second.count(key)) throw ConfigError("unknown key " + name + "." + key);
  }

  ExperimentConfig c;
  const pt::ptree empty;
  const auto& m = tree.get_child("model", empty);
  read(m, "model", "dimension", c.model.dim);
  read_string(m, "drift", c.model.drift);
  read(m, "model", "theta", c.model.theta);
  read(m, "model", "sigma", c.model.sigma);
  read(m, "model", "gamma", c.model.gamma);
  read_string(m, "kernel", c.model.kernel);
  read(m, "model", "kernel_scale", c.model.kernel_scale);
  read_string(m, "rates", c.model.rates);
  read(m, "model", "birth", c.model.birth);
  read(m, "model", "death", c.model.death);
  read(m, "model", "competition", c.model.competition);
  read(m, "model", "killing", c.model.killing);

  const auto& ini = tree.get_child("initial", empty);
  if (auto v = ini.get_optional<std::string>("mode")) {
    if (*v == "fixed")
      c.initial.mode = InitialMode::Fixed;
    else if (*v == "poisson")
      c.initial.mode = InitialMode::Poisson;
    else
      throw ConfigError("unknown initial mode '" + *v + "'");
  }
  if (auto v = ini.get_optional<std::string>("law")) {
    if (*v == "gaussian")
      c.initial.law = InitialLaw::Gaussian;
    else if (*v == "pareto")
      c.initial.law = InitialLaw::Pareto;
    else if (*v == "uniform")
      c.initial.law = InitialLaw::Uniform;
    else
      throw ConfigError("unknown initial law '" + *v + "'");
  }
  read(ini, "initial", "mass", c.initial.mass);
  read(ini, "initial", "scale", c.initial.scale);
  read(ini, "initial", "tail_index", c.initial.tail_index);
  read(ini, "initial", "moment_order", c.initial.moment_order);

  const auto& e = tree.get_child("experiment", empty);
  if (auto v = e.get_optional<std::string>("k_grid")) {
    c.k_grid.clear();
    for (const auto& s : split_list(*v)) c.k_grid.push_back(parse_value<std::int64_t>("experiment.k_grid", s));
  }
  if (auto v = e.get_optional<std::string>("observe")) {
    c.observe.clear();
    for (const auto& s : split_list(*v)) c.observe.push_back(parse_value<double>("experiment.observe", s));
  }
  read(e, "experiment", "replicates", c.replicates);
  read(e, "experiment", "horizon", c.horizon);
  read(e, "experiment", "euler_step", c.euler_step);
  read(e, "experiment", "reference_size", c.reference_size);
  read(e, "experiment", "reference_step", c.reference_step);
  read(e, "experiment", "seed", c.seed);
  read(e, "experiment", "assignment_cap", c.assignment_cap);
  read(e, "experiment", "bl_dictionary", c.bl_dictionary);

  read_string(tree.get_child("output", empty), "dir", c.output_dir);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_config(in);
}

std::string to_ini(const ExperimentConfig& c) {
  const char* mode = c.initial.mode == InitialMode::Fixed ? "fixed" : "poisson";
  const char* law = c.initial.law == InitialLaw::Gaussian ? "gaussian"
                    : c.initial.law == InitialLaw::Pareto ? "pareto"
                                                          : "uniform";
  std::ostringstream out;
  out << "[model]\n"
      << "dimension = " << c.model.dim << "\n"
      << "drift = " << c.model.drift << "\n"
      << "theta = " << format_double(c.model.theta) << "\n"
      << "sigma = " << format_double(c.model.sigma) << "\n"
      << "gamma = " << format_double(c.model.gamma) << "\n"
      << "kernel = " << c.model.kernel << "\n"
      << "kernel_scale = " << format_double(c.model.kernel_scale) << "\n"
      << "rates = " << c.model.rates << "\n"
      << "birth = " << format_double(c.model.birth) << "\n"
      << "death = " << format_double(c.model.death) << "\n"
      << "competition = " << format_double(c.model.competition) << "\n"
      << "killing = " << format_double(c.model.killing) << "\n\n"
      << "[initial]\n"
      << "mode = " << mode << "\n"
      << "mass = " << format_double(c.initial.mass) << "\n"
      << "law = " << law << "\n"
      << "scale = " << format_double(c.initial.scale) << "\n"
      << "tail_index = " << format_double(c.initial.tail_index) << "\n"
      << "moment_order = " << format_double(c.initial.moment_order) << "\n\n"
      << "[experiment]\n"
      << "k_grid = " << join(c.k_grid) << "\n"
      << "replicates = " << c.replicates << "\n"
      << "horizon = " << format_double(c.horizon) << "\n"
      << "observe = " << join(c.observe) << "\n"
      << "euler_step = " << format_double(c.euler_step) << "\n"
      << "reference_size = " << c.reference_size << "\n"
      << "reference_step = " << format_double(c.reference_step) << "\n"
      << "seed = " << c.seed << "\n"
      << "assignment_cap = " << c.assignment_cap << "\n"
      << "bl_dictionary = " << c.bl_dictionary << "\n\n"
      << "[output]\n"
      << "dir = " << c.output_dir << "\n";
  return out.str();
}

Coefficients build_coefficients(const ModelSpec& m) {
  if (m.drift == "zero")
    return m.sigma == 0.0 ? Coefficients::zero(m.dim) : Coefficients::ornstein_uhlenbeck(m.dim, 0.0, m.sigma);
  if (m.drift == "density") return Coefficients::density_diffusion(m.dim, m.theta, m.sigma, m.gamma);
  return Coefficients::ornstein_uhlenbeck(m.dim, m.theta, m.sigma);
}

Kernels build_kernels(const ModelSpec& m) {
  Kernels k;
  if (m.kernel == "exponential")
    k.diffusion_kernel = Kernel::exponential(m.kernel_scale);
  else if (m.kernel == "gaussian")
    k.diffusion_kernel = Kernel::gaussian(m.kernel_scale);
  return k;
}

RateSpec build_rates(const ModelSpec& m) {
  if (m.rates == "pure") return TimeVaryingRates::constant(m.birth, m.death);
  return ConstantRates{m.birth, m.competition, m.killing};
}

ExperimentConfig default_preset() { return ExperimentConfig{}; }

ExperimentConfig heavy_tail_preset() {
  ExperimentConfig c;
  c.initial.law = InitialLaw::Pareto;
  c.initial.tail_index = 3.2;
  c.initial.moment_order = 3.0;
  return c;
}

}  // namespace mfbranch
