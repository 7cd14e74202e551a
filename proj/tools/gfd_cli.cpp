// gfd: synthesize ground-fault detection filters, run scenarios and Monte Carlo studies.
//
//   gfd synthesize [--config F] [--out DIR] [--perfect] [--analytic [DELTA]] [--lambda X] [--seed N]
//   gfd run        [--config F] [--filter F] [--out DIR] [--perfect] [--no-fault] [--seed N]
//   gfd montecarlo [--config F] [--filter F] [--out DIR] [--trials N] [--lambda X ...] [--seed N]
//   gfd inspect    [--config F] [--out DIR] [--perfect]
//
// Exit codes: 0 ok, 2 config error, 3 infeasible synthesis, 4 runtime/numerical failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gfd/gfd.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitRuntime = 4;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool perfect = false;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --perfect: single fully decoupled disturbance channel, no surrogate uncertainty, zero signatures.
void apply_perfect(gfd::RunConfig& c) {
  c.scenario.setting = gfd::DisturbanceSetting::perfect;
  c.scenario.uncertainty.reset();
  c.synthesis.m = 0;
  if (c.synthesis.lower.size() != 1) {
    c.synthesis.lower = gfd::Vector::Constant(1, -2.0);
    c.synthesis.upper = gfd::Vector::Constant(1, 2.0);
  }
  const auto& d = c.scenario.disturbance;
  const bool incompatible = d.kind == gfd::DisturbanceKind::step &&
                            (d.randomize ? d.lower.size() != 1 : d.step_value.size() != 1);
  if (incompatible) c.scenario.disturbance = gfd::DisturbanceSpec::load_fluctuation_small();
}

gfd::RunConfig load(const Common& o) {
  gfd::RunConfig c;
  try {
    if (!o.config.empty()) c = gfd::load_config(o.config);
    if (o.perfect) apply_perfect(c);
    c.validate();
  } catch (const gfd::Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

fs::path out_dir(const Common& o, const gfd::RunConfig& c) {
  fs::path dir = o.out.empty() ? fs::path(c.io.out_dir) : fs::path(o.out);
  fs::create_directories(dir);
  return dir;
}

void add_common(CLI::App* cmd, Common& o) {
  cmd->add_option("--config", o.config, "run configuration (JSON)");
  cmd->add_option("--out", o.out, "output directory (default: io.out_dir)");
  cmd->add_option("--seed", o.seed, "seed override");
  cmd->add_flag("--perfect", o.perfect, "fully decoupled setting with zero signature matrices");
}

int cmd_synthesize(const Common& o, std::optional<double> analytic_delta, bool analytic, std::optional<double> lambda) {
  gfd::RunConfig c = load(o);
  if (o.seed) c.synthesis.seed = *o.seed;
  if (analytic) {
    c.synthesis.method = gfd::SynthesisMethod::analytic;
    c.synthesis.delta = analytic_delta.value_or(gfd::kDefaultDelta);
  }
  if (lambda) {
    c.synthesis.lambda = *lambda;
    try {
      c.validate();
    } catch (const gfd::Error& e) {
      throw ConfigError(e.what());
    }
  }
  const auto dir = out_dir(o, c);
  const auto res = gfd::synthesize(c);
  gfd::save_filter(res.artifact, dir / "filter.txt");
  const std::string report = gfd::synthesis_report(res);
  std::ofstream(dir / "report.txt") << report;
  std::cout << report << "wrote " << (dir / "filter.txt").string() << '\n';
  return 0;
}

gfd::FilterArtifact load_artifact(const std::string& filter, const fs::path& dir) {
  return gfd::load_filter(filter.empty() ? dir / "filter.txt" : fs::path(filter));
}

int cmd_run(const Common& o, const std::string& filter, bool no_fault) {
  gfd::RunConfig c = load(o);
  if (o.seed) c.scenario.seed = *o.seed;
  if (no_fault) c.scenario.fault_step.reset();
  const auto dir = out_dir(o, c);
  const auto artifact = load_artifact(filter, dir);
  const auto res = gfd::run_scenario(c, artifact);
  gfd::write_trace_csv(res.trace, dir / "trace.csv", c.io.current_base);
  gfd::write_events_csv(res.detection.events, dir / "events.csv");
  std::cout << "steps: " << res.trace.size() << "  J_th: " << res.trace.J_th << "  events: " << res.detection.events.size()
            << '\n';
  if (res.detection.detection_delay)
    std::cout << "detected at k=" << *c.scenario.fault_step + *res.detection.detection_delay << " (delay "
              << *res.detection.detection_delay << " samples)\n";
  else if (c.scenario.fault_step)
    std::cout << "fault not detected\n";
  std::cout << "wrote " << (dir / "trace.csv").string() << ", " << (dir / "events.csv").string() << '\n';
  return 0;
}

int cmd_montecarlo(const Common& o, const std::string& filter, int trials, const std::vector<double>& lambdas) {
  gfd::RunConfig c = load(o);
  const auto dir = out_dir(o, c);
  const auto artifact = load_artifact(filter, dir);
  gfd::MonteCarloOptions mc;
  mc.trials = trials;
  if (o.seed) mc.seed = *o.seed;
  if (!lambdas.empty()) mc.lambdas = lambdas;
  const auto rows = gfd::montecarlo(c, artifact, mc);
  gfd::write_montecarlo_csv(rows, dir / "montecarlo.csv");
  std::cout << "lambda  J_th          rate        bound+slack\n";
  for (const auto& r : rows)
    std::cout << r.lambda << "  " << r.J_th << "  " << r.rate << "  " << r.bound + r.slack << (r.within ? "" : "  EXCEEDED")
              << '\n';
  std::cout << "wrote " << (dir / "montecarlo.csv").string() << '\n';
  return 0;
}

int cmd_inspect(const Common& o) {
  gfd::RunConfig c = load(o);
  const auto dir = out_dir(o, c);
  const auto models = gfd::discrete_models(c.params, c.scenario.setting);
  const auto dae = gfd::build_dae(models.normal, models.faulty, models.split);
  const auto stacked = gfd::stack_matrices(dae, c.synthesis.d_N);
  gfd::dump_stacked_csv(stacked, dir / "stacked");
  gfd::detail::write_matrix_csv(dir / "stacked" / "A0.csv", models.normal.A);
  gfd::detail::write_matrix_csv(dir / "stacked" / "A1.csv", models.faulty.A);
  const auto report = gfd::feasibility_check(stacked);
  std::cout << gfd::describe(report) << '\n';
  std::cout << "spectral radius A(0)=" << gfd::linalg::spectral_radius(models.normal.A)
            << " A(1)=" << gfd::linalg::spectral_radius(models.faulty.A)
            << " observability rank (faulty)=" << gfd::linalg::observability_rank(models.faulty.A, models.faulty.C)
            << '\n';
  std::cout << "wrote " << (dir / "stacked").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ground-fault detection filter toolkit"};
  app.require_subcommand(1);

  Common syn_o, run_o, mc_o, ins_o;
  std::optional<double> analytic_delta, syn_lambda;
  std::string run_filter, mc_filter;
  bool no_fault = false;
  int trials = 100;
  std::vector<double> mc_lambdas;

  auto* syn = app.add_subcommand("synthesize", "build a filter artifact and report");
  add_common(syn, syn_o);
  auto* analytic = syn->add_option("--analytic", analytic_delta, "closed-form solution with penalty DELTA (default 1e6)")
                       ->expected(0, 1);
  syn->add_option("--lambda", syn_lambda, "threshold multiplier");

  auto* run = app.add_subcommand("run", "simulate the scenario and run detection");
  add_common(run, run_o);
  run->add_option("--filter", run_filter, "filter artifact (default: OUT/filter.txt)");
  run->add_flag("--no-fault", no_fault, "disable the fault");

  auto* mc = app.add_subcommand("montecarlo", "fault-free false-alarm study");
  add_common(mc, mc_o);
  mc->add_option("--filter", mc_filter, "filter artifact (default: OUT/filter.txt)");
  mc->add_option("--trials", trials, "number of traces")->check(CLI::PositiveNumber);
  mc->add_option("--lambda", mc_lambdas, "lambda values (default 1 2 5 10)");

  auto* ins = app.add_subcommand("inspect", "dump stacked DAE matrices and rank report");
  add_common(ins, ins_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*syn) return cmd_synthesize(syn_o, analytic_delta, analytic->count() > 0, syn_lambda);
    if (*run) return cmd_run(run_o, run_filter, no_fault);
    if (*mc) return cmd_montecarlo(mc_o, mc_filter, trials, mc_lambdas);
    if (*ins) return cmd_inspect(ins_o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const gfd::Error& e) {
    std::cerr << gfd::to_string(e.kind()) << " error: " << e.what() << '\n';
    if (e.kind() == gfd::ErrorKind::infeasible) return kExitInfeasible;
    if (e.kind() == gfd::ErrorKind::validation) return kExitConfig;
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
