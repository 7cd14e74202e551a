#pragma once

// End-to-end flows used by the command-line tool: synthesize a filter from a run config,
// simulate and monitor a scenario, and estimate false-alarm rates by Monte Carlo.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gfd/artifact.hpp"
#include "gfd/config.hpp"
#include "gfd/dae.hpp"
#include "gfd/detect.hpp"
#include "gfd/parallel.hpp"
#include "gfd/simulate.hpp"
#include "gfd/synthesis.hpp"

namespace gfd {

/// Deterministic per-item seed from a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct SynthesisResult {
  ModelSet models;
  DaeSystem dae;
  StackedDae stacked;
  FeasibilityReport feasibility;
  SignatureMatrix signature;
  FilterArtifact artifact;
  Detectability detectability;
  double max_training_J = 0.0;  // only when the envelope floor was used
};

/// Largest fault-free evaluation over `runs` nominal simulations with random steps drawn
/// from the synthesis bounds. Used to set a threshold when the signature matrices vanish.
inline double fault_free_envelope(const RunConfig& c, const FilterCoefficients& f) {
  const auto& s = c.synthesis;
  Threshold open;
  open.J_th = std::numeric_limits<double>::infinity();
  std::vector<double> peaks(std::max(0, s.floor_runs), 0.0);
  detail::parallel_for(peaks.size(), [&](std::size_t i) {
    Scenario sc;
    sc.setting = c.scenario.setting;
    sc.total_steps = s.floor_steps;
    sc.fault_step.reset();
    sc.uncertainty.reset();
    sc.warm_start = true;
    sc.seed = derive_seed(s.seed, 1000 + i);
    sc.disturbance = DisturbanceSpec::random_step(s.lower, s.upper, s.floor_steps / 4);
    Trace tr = simulate_scenario(c.params, sc);
    Detector det(f, open, 1);
    run_detection(tr, det, true);
    peaks[i] = *std::max_element(tr.J.begin(), tr.J.end());
  });
  double peak = 0.0;
  for (double p : peaks) peak = std::max(peak, p);
  return peak;
}

inline SynthesisResult synthesize(const RunConfig& c) {
  c.validate();
  const auto& s = c.synthesis;
  SynthesisResult res;
  res.models = discrete_models(c.params, c.scenario.setting);
  res.dae = build_dae(res.models.normal, res.models.faulty, res.models.split);
  res.stacked = stack_matrices(res.dae, s.d_N);
  res.feasibility = feasibility_check(res.stacked);
  if (!res.feasibility.equality_feasible || !res.feasibility.sensitivity_possible)
    fail(ErrorKind::infeasible, "synthesis infeasible: " + describe(res.feasibility));

  const Denominator a = s.denominator();
  std::vector<Matrix> xi, d_check;
  if (c.scenario.setting == DisturbanceSetting::partially_decoupled && s.m > 0) {
    UncertaintySpec u{0.0, 0.0};
    if (c.scenario.uncertainty) u = *c.scenario.uncertainty;
    const auto excitation = DisturbanceSpec::random_step(s.lower, s.upper, -1);
    xi = generate_uncertainty_instances(c.params, u, s.m, s.T, excitation, derive_seed(s.seed, 1), c.scenario.setting);
    const auto d_all = generate_disturbance_instances(s.m, s.T, s.lower, s.upper, derive_seed(s.seed, 2));
    for (const auto& d : d_all) {
      Matrix sel(d.rows(), static_cast<Eigen::Index>(res.models.split.non_decoupled_cols.size()));
      for (std::size_t j = 0; j < res.models.split.non_decoupled_cols.size(); ++j)
        sel.col(j) = d.col(res.models.split.non_decoupled_cols[j]);
      d_check.push_back(std::move(sel));
    }
  }
  res.signature = average_signature(xi, d_check, res.stacked, a, s.T);

  FilterCoefficients f = s.method == SynthesisMethod::qp
                             ? solve_qp(res.stacked, res.signature, res.dae, a, s.epsilon)
                             : solve_analytic(res.stacked, res.signature, res.dae, a, s.delta, s.epsilon / s.delta);

  double floor = 0.0;
  if (res.signature.is_zero()) {
    res.max_training_J = fault_free_envelope(c, f);
    floor = envelope_floor(s.lambda, res.max_training_J);
  }
  res.artifact.filter = f;
  res.artifact.threshold = compute_threshold(f, res.signature, s.lambda, s.T, floor);
  res.artifact.setting = c.scenario.setting;
  res.artifact.eval_window = s.eval_window;
  res.artifact.prime = s.prime;
  res.detectability = detectability_check(f, res.models.faulty, c.params.input(1), res.artifact.threshold.J_th);
  return res;
}

struct RunResult {
  Trace trace;
  DetectionResult detection;
};

inline RunResult run_scenario(const RunConfig& c, const FilterArtifact& a) {
  if (a.setting != c.scenario.setting) fail(ErrorKind::validation, "filter was synthesized for a different disturbance setting");
  RunResult res;
  res.trace = simulate_scenario(c.params, c.scenario);
  Detector det(a.filter, a.threshold, a.eval_window);
  res.detection = run_detection(res.trace, det, a.prime);
  return res;
}

/// Threshold of an artifact re-evaluated at another lambda (Markov part and floor both
/// scale linearly in lambda).
inline Threshold rescale_threshold(const Threshold& t, double lambda) {
  if (!(lambda >= 1.0)) fail(ErrorKind::validation, "lambda must be at least 1");
  Threshold out = t;
  out.lambda = lambda;
  out.markov = lambda / static_cast<double>(t.T) * t.base;
  out.floor = t.floor / t.lambda * lambda;
  out.J_th = std::max(out.markov, out.floor);
  return out;
}

struct MonteCarloOptions {
  int trials = 100;
  long steps = 3000;
  long onset = 500;     // disturbance step applied for k > onset
  long burn_in = 1500;  // samples before this index are excluded
  std::vector<double> lambdas{1.0, 2.0, 5.0, 10.0};
  std::uint64_t seed = 11;
};

struct MonteCarloRow {
  double lambda = 1.0;
  double J_th = 0.0;
  double rate = 0.0;
  double bound = 1.0;  // 1 / lambda
  double slack = 0.0;  // 3 sigma binomial
  long samples = 0;
  bool within = false;
};

/// Fault-free trials with a fresh perturbed plant and a fresh random step per trial.
inline std::vector<Trace> montecarlo_traces(const RunConfig& c, const FilterArtifact& a, const MonteCarloOptions& o) {
  if (o.trials < 1) fail(ErrorKind::validation, "trials must be at least 1");
  if (o.burn_in >= o.steps) fail(ErrorKind::validation, "burn-in must be shorter than the trace");
  std::vector<Trace> traces(o.trials);
  detail::parallel_for(traces.size(), [&](std::size_t i) {
    Scenario sc = c.scenario;
    sc.total_steps = o.steps;
    sc.fault_step.reset();
    sc.seed = derive_seed(o.seed, i);
    sc.disturbance = DisturbanceSpec::random_step(c.synthesis.lower, c.synthesis.upper, o.onset);
    Trace tr = simulate_scenario(c.params, sc);
    Detector det(a.filter, a.threshold, a.eval_window);
    run_detection(tr, det, a.prime);
    traces[i] = std::move(tr);
  });
  return traces;
}

inline std::vector<MonteCarloRow> montecarlo(const RunConfig& c, const FilterArtifact& a, const MonteCarloOptions& o) {
  std::vector<Trace> traces = montecarlo_traces(c, a, o);
  std::vector<MonteCarloRow> rows;
  for (double lambda : o.lambdas) {
    const Threshold th = rescale_threshold(a.threshold, lambda);
    for (auto& t : traces) t.J_th = th.J_th;
    MonteCarloRow row;
    row.lambda = lambda;
    row.J_th = th.J_th;
    row.rate = false_alarm_rate(traces, o.burn_in);
    row.bound = 1.0 / lambda;
    row.samples = static_cast<long>(traces.size()) * (o.steps - o.burn_in);
    row.slack = 3.0 * std::sqrt(row.bound * (1.0 - row.bound) / static_cast<double>(row.samples));
    row.within = row.rate <= row.bound + row.slack;
    rows.push_back(row);
  }
  return rows;
}

// ---- CSV export ----------------------------------------------------------------------------

inline void write_trace_csv(const Trace& t, const std::filesystem::path& path, std::optional<double> current_base = {}) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  const double scale = current_base ? 1.0 / *current_base : 1.0;
  out << std::setprecision(12);
  out << "k,t,i_od,i_oq,i_od_tilde,i_oq_tilde,d1,d2,f,r,J,J_th,alarm\n";
  for (long k = 0; k < t.size(); ++k) {
    const double d1 = t.d.cols() > 0 ? t.d(k, 0) : 0.0;
    const double d2 = t.d.cols() > 1 ? t.d(k, 1) : 0.0;
    out << k << ',' << t.time(k) << ',' << t.y(k, 0) * scale << ',' << t.y(k, 1) * scale << ','
        << t.y_tilde(k, 0) * scale << ',' << t.y_tilde(k, 1) * scale << ',' << d1 << ',' << d2 << ',' << t.f[k] << ',';
    if (t.annotated())
      out << t.r[k] << ',' << t.J[k] << ',' << t.J_th << ',' << static_cast<int>(t.alarm[k]) << '\n';
    else
      out << ",,,\n";
  }
  if (!out) fail(ErrorKind::io, "error while writing " + path.string());
}

inline void write_events_csv(const std::vector<AlarmEvent>& events, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << std::setprecision(12) << "k,kind,J\n";
  for (const auto& e : events) out << e.k << ',' << to_string(e.kind) << ',' << e.J << '\n';
  if (!out) fail(ErrorKind::io, "error while writing " + path.string());
}

inline void write_montecarlo_csv(const std::vector<MonteCarloRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << std::setprecision(12) << "lambda,J_th,rate,bound,slack,samples,within\n";
  for (const auto& r : rows)
    out << r.lambda << ',' << r.J_th << ',' << r.rate << ',' << r.bound << ',' << r.slack << ',' << r.samples << ','
        << (r.within ? 1 : 0) << '\n';
  if (!out) fail(ErrorKind::io, "error while writing " + path.string());
}

inline std::string synthesis_report(const SynthesisResult& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  const auto& f = r.artifact.filter;
  const auto& t = r.artifact.threshold;
  os << "feasibility: " << describe(r.feasibility) << '\n';
  os << "method: " << to_string(f.method);
  if (f.delta) os << " (delta=" << *f.delta << (f.ridge_retried ? ", ridge retried" : "") << ')';
  os << '\n';
  os << "d_N: " << f.d_N << "  denominator degree: " << f.denominator.degree() << '\n';
  os << "ridge: " << f.ridge << '\n';
  os << "instances: m=" << r.signature.m << " T=" << r.signature.T << '\n';
  os << "active direction: " << f.active_index << " sign " << (f.active_sign > 0 ? '+' : '-') << '\n';
  os << "objective: " << f.objective << '\n';
  os << "constraint residual: " << f.constraint_residual << '\n';
  os << "threshold: J_th=" << t.J_th << " (lambda=" << t.lambda << ", markov=" << t.markov << ", floor=" << t.floor
     << ")\n";
  os << "detectability: ";
  if (r.detectability.marginal)
    os << "marginal (I - A_o singular)";
  else
    os << "steady r=" << r.detectability.steady_residual << " margin=" << r.detectability.margin
       << (r.detectability.detectable ? " detectable" : " NOT detectable");
  os << " (observable dim " << r.detectability.observable_dim << ")\n";
  return os.str();
}

}  // namespace gfd
