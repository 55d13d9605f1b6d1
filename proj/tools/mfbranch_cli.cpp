#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <thread>

#include "mfbranch/errors.hpp"
#include "mfbranch/harness.hpp"
#include "mfbranch/io.hpp"
#include "mfbranch/rng.hpp"

using namespace mfbranch;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  unsigned threads = 0;

  ExperimentConfig load() const {
    ExperimentConfig c = config_path.empty() ? default_preset() : load_config(config_path);
    if (seed) c.seed = *seed;
    if (out) c.output_dir = *out;
    c.validate();
    return c;
  }
  unsigned worker_count() const { return threads ? threads : std::max(1u, std::thread::hardware_concurrency()); }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Master seed (overrides the config)");
  cmd->add_option("--out", c.out, "Output directory (overrides the config)");
  cmd->add_option("--threads", c.threads, "Worker threads (0 = hardware)");
}

std::string fit_text(const std::optional<SlopeFit>& f) {
  if (!f) return "n/a";
  return format_double(f->slope) + " [" + format_double(f->ci_low()) + ", " + format_double(f->ci_high()) + "]";
}

int run_simulate(const Common& common, std::int64_t k, std::uint64_t replicate) {
  const auto cfg = common.load();
  if (k <= 0) k = cfg.k_grid.front();
  const auto flow = build_reference(cfg, common.worker_count());
  const auto seeds = replicate_seeds(cfg.seed, k, replicate);
  Stream init_rng(seeds.initial);
  const auto initial = generate_initial(cfg.initial, cfg.model.dim, k, init_rng);
  const auto traj = simulate_coupled(build_simulation(cfg, k, initial), flow, {seeds.events, seeds.streams});

  std::filesystem::create_directories(cfg.output_dir);
  const auto dir = std::filesystem::path(cfg.output_dir);
  {
    std::ofstream out(dir / "events.csv");
    write_event_header(out);
    write_event_rows(out, replicate, traj.events);
  }
  {
    std::ofstream out(dir / "trajectory.csv");
    write_atom_header(out, cfg.model.dim);
    for (const auto& obs : traj.observations) {
      write_atom_rows(out, replicate, obs.time, "mu", obs.mu.atoms());
      write_atom_rows(out, replicate, obs.time, "nu", obs.nu->atoms());
    }
  }
  std::cout << "K=" << k << " births=" << traj.births << " deaths=" << traj.deaths << "\n";
  for (const auto& obs : traj.observations)
    std::cout << "t=" << format_double(obs.time) << " N=" << obs.mu.atom_count()
              << " coupling_gap=" << format_double(coupling_gap(obs.mu, *obs.nu)) << "\n";
  return 0;
}

int run_converge(const Common& common) {
  const auto cfg = common.load();
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::pair<std::int64_t, std::vector<EventRecord>>> events;
  const auto result = run_convergence_experiment(cfg, common.worker_count(), &events);
  write_outputs(cfg.output_dir, result, &events);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::cout << "branch: " << result.annotation.branch << "\n"
            << "predicted exponent: " << format_double(result.annotation.predicted_exponent) << "\n"
            << "bl_upper slope: " << fit_text(result.bl_fit) << "\n"
            << "coupling_gap slope: " << fit_text(result.gap_fit) << "\n";
  for (const auto& f : result.failures) std::cerr << "failed: " << f << "\n";
  std::cerr << "wall time " << format_double(secs) << " s, outputs in " << cfg.output_dir << "\n";
  return result.partial ? 3 : 0;
}

int run_fg_check(const Common& common, std::vector<std::int64_t> sizes, std::size_t replicas) {
  const auto cfg = common.load();
  const auto r = fg_check(cfg.initial, cfg.model.dim, sizes, replicas, cfg.seed, common.worker_count());
  std::cout << "N,mean_w2sq,se_w2sq,mean_w2" << (r.predicted.empty() ? "" : ",fg_rate") << "\n";
  for (std::size_t i = 0; i < r.sizes.size(); ++i) {
    std::cout << r.sizes[i] << ',' << format_double(r.mean_w2sq[i]) << ',' << format_double(r.se_w2sq[i]) << ','
              << format_double(r.mean_w2[i]);
    if (!r.predicted.empty()) std::cout << ',' << format_double(r.predicted[i]);
    std::cout << "\n";
  }
  std::cout << "slope E[W2^2]: " << fit_text(r.w2sq_fit) << "\nslope E[W2]: " << fit_text(r.w2_fit) << "\n";
  return 0;
}

int run_chaos(const Common& common, std::int64_t k, std::size_t atoms, double t, const std::string& system) {
  const auto cfg = common.load();
  const auto sys = system == "mu" ? ParticleSystem::Interacting : ParticleSystem::Auxiliary;
  const auto r = chaoticity_diagnostic(cfg, k, atoms, t, sys, common.worker_count());
  nlohmann::json j{{"K", r.scale},
                   {"t", r.time},
                   {"atoms", r.atoms},
                   {"qualifying", r.qualifying},
                   {"ks_pass_rate", r.ks_pass_rate},
                   {"correlations", r.correlations},
                   {"correlation_se", r.correlation_se},
                   {"max_abs_correlation", r.max_abs_correlation}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Branching mean-field particle systems: simulation and convergence experiments"};
  app.require_subcommand(1);

  Common sim_opts, conv_opts, fg_opts, chaos_opts;
  std::int64_t sim_k = 0;
  std::uint64_t sim_rep = 0;
  auto* sim = app.add_subcommand("simulate", "One coupled trajectory: events.csv and trajectory.csv");
  add_common(sim, sim_opts);
  sim->add_option("-K,--capacity", sim_k, "Carrying capacity (default: first of k_grid)");
  sim->add_option("--replicate", sim_rep, "Replicate index used for seeding");

  auto* conv = app.add_subcommand("converge", "Full K-grid experiment: distances.csv, summary.json, events.csv");
  add_common(conv, conv_opts);

  std::vector<std::int64_t> sizes{64, 128, 256, 512, 1024, 2048, 4096, 8192};
  std::size_t fg_reps = 200;
  auto* fg = app.add_subcommand("fg-check", "Empirical W2 rate of i.i.d. samples of the initial law");
  add_common(fg, fg_opts);
  fg->add_option("--sizes", sizes, "Sample sizes N");
  fg->add_option("--replicas", fg_reps, "Samples per N");

  std::int64_t chaos_k = 400;
  std::size_t chaos_atoms = 2;
  double chaos_t = 0.5;
  std::string chaos_system = "nu";
  auto* chaos = app.add_subcommand("diagnose-chaos", "Independence and marginal-law checks across replicas");
  add_common(chaos, chaos_opts);
  chaos->add_option("-K,--capacity", chaos_k, "Carrying capacity");
  chaos->add_option("--atoms", chaos_atoms, "Number of leading atoms j");
  chaos->add_option("--time", chaos_t, "Observation time");
  chaos->add_option("--system", chaos_system, "mu or nu")->check(CLI::IsMember({"mu", "nu"}));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return run_simulate(sim_opts, sim_k, sim_rep);
    if (*conv) return run_converge(conv_opts);
    if (*fg) return run_fg_check(fg_opts, sizes, fg_reps);
    if (*chaos) return run_chaos(chaos_opts, chaos_k, chaos_atoms, chaos_t, chaos_system);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
