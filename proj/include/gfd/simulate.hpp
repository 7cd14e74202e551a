#pragma once

// Discrete-time scenarios: nominal model and (optionally) a perturbed surrogate plant run in
// lockstep, with fault switching, exogenous disturbances and measurement noise. Also the
// training-instance generators for the signature matrices.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gfd/error.hpp"
#include "gfd/linalg.hpp"
#include "gfd/model.hpp"
#include "gfd/parallel.hpp"

namespace gfd {

enum class DisturbanceKind { none, step, sinusoid };

inline const char* to_string(DisturbanceKind k) {
  switch (k) {
    case DisturbanceKind::none: return "none";
    case DisturbanceKind::step: return "step";
    case DisturbanceKind::sinusoid: return "sinusoid";
  }
  return "?";
}

struct SinusoidTerm {
  double amplitude = 0.0;
  double frequency = 0.0;  // rad per sample
  double phase = 0.0;
  bool operator==(const SinusoidTerm&) const = default;
};

struct DisturbanceSpec {
  DisturbanceKind kind = DisturbanceKind::none;
  Vector step_value;      // n_d entries
  long onset = 0;         // active for k > onset
  Vector lower, upper;    // bounds for random step draws
  bool randomize = false; // draw step_value from [lower, upper] per run
  double offset = 0.0;    // sinusoid: alpha_0
  std::vector<SinusoidTerm> terms;

  static DisturbanceSpec none() { return {}; }

  static DisturbanceSpec step(const Vector& value, long onset) {
    DisturbanceSpec d;
    d.kind = DisturbanceKind::step;
    d.step_value = value;
    d.onset = onset;
    return d;
  }

  static DisturbanceSpec random_step(const Vector& lower, const Vector& upper, long onset) {
    DisturbanceSpec d;
    d.kind = DisturbanceKind::step;
    d.lower = lower;
    d.upper = upper;
    d.randomize = true;
    d.onset = onset;
    d.step_value = Vector::Zero(lower.size());
    return d;
  }

  static DisturbanceSpec sinusoid(double offset, std::vector<SinusoidTerm> terms, long onset) {
    DisturbanceSpec d;
    d.kind = DisturbanceKind::sinusoid;
    d.offset = offset;
    d.terms = std::move(terms);
    d.onset = onset;
    return d;
  }

  // 0.8 + a1 sin(k/30) + a2 sin(k/40) + a3 sin(k/60) for k > 1000
  static DisturbanceSpec load_fluctuation(double a1, double a2, double a3) {
    return sinusoid(0.8, {{a1, 1.0 / 30.0, 0.0}, {a2, 1.0 / 40.0, 0.0}, {a3, 1.0 / 60.0, 0.0}}, 1000);
  }
  static DisturbanceSpec load_fluctuation_small() { return load_fluctuation(0.02, 0.01, 0.01); }
  static DisturbanceSpec load_fluctuation_large() { return load_fluctuation(0.2, 0.3, 0.2); }

  int channels(int n_d) const { return kind == DisturbanceKind::step ? static_cast<int>(step_value.size()) : n_d; }

  void validate(int n_d) const {
    if (kind == DisturbanceKind::sinusoid && n_d != 1)
      fail(ErrorKind::validation, "sinusoidal disturbance requires the single-channel (perfect) setting");
    if (kind == DisturbanceKind::step) {
      if (randomize) {
        if (lower.size() != n_d || upper.size() != n_d)
          fail(ErrorKind::validation, "disturbance bounds must have " + std::to_string(n_d) + " entries");
        if ((lower.array() > upper.array()).any()) fail(ErrorKind::validation, "disturbance bounds are empty (lower > upper)");
      } else if (step_value.size() != n_d) {
        fail(ErrorKind::validation, "disturbance step must have " + std::to_string(n_d) + " entries");
      }
    }
  }

  /// d(k) for the given channel count; step_value is used as drawn (see resolve()).
  Vector value_at(long k, int n_d) const {
    if (kind == DisturbanceKind::none || k <= onset) return Vector::Zero(n_d);
    if (kind == DisturbanceKind::step) return step_value;
    double v = offset;
    for (const auto& t : terms) v += t.amplitude * std::sin(t.frequency * static_cast<double>(k) + t.phase);
    return Vector::Constant(n_d, v);
  }

  /// Copy with a random step drawn from the bounds when randomize is set.
  template <typename Rng>
  DisturbanceSpec resolve(Rng& rng) const {
    DisturbanceSpec d = *this;
    if (kind == DisturbanceKind::step && randomize) {
      d.step_value.resize(lower.size());
      for (Eigen::Index i = 0; i < lower.size(); ++i)
        d.step_value(i) = std::uniform_real_distribution<double>(lower(i), upper(i))(rng);
      d.randomize = false;
    }
    return d;
  }

  bool operator==(const DisturbanceSpec& o) const {
    auto same = [](const Vector& a, const Vector& b) { return a.size() == b.size() && (a.size() == 0 || a == b); };
    return kind == o.kind && same(step_value, o.step_value) && onset == o.onset && same(lower, o.lower) &&
           same(upper, o.upper) && randomize == o.randomize && offset == o.offset && terms == o.terms;
  }
};

struct UncertaintySpec {
  double param_perturbation = 0.05;  // relative, uniform on R_f, L_f, C_f, L_c, R_c
  double noise_std = 0.01;           // A
  int resample_cap = 100;
  double sanity_cap = 0.5;           // max |xi| relative to max |y| for training instances
  bool operator==(const UncertaintySpec&) const = default;
};

/// Draw a perturbed copy of params; resamples if any perturbed value is non-positive.
template <typename Rng>
MicrogridParams perturb_params(const MicrogridParams& p, const UncertaintySpec& u, Rng& rng) {
  if (!(u.param_perturbation >= 0.0)) fail(ErrorKind::validation, "param_perturbation must be non-negative");
  std::uniform_real_distribution<double> dist(-u.param_perturbation, u.param_perturbation);
  for (int attempt = 0; attempt < std::max(1, u.resample_cap); ++attempt) {
    MicrogridParams q = p;
    for (double* v : {&q.R_f, &q.L_f, &q.C_f, &q.L_c, &q.R_c}) *v *= 1.0 + dist(rng);
    if (q.R_f >= 0.0 && q.L_f > 0.0 && q.C_f > 0.0 && q.L_c > 0.0 && q.R_c >= 0.0) return q;
  }
  fail(ErrorKind::validation, "parameter perturbation keeps producing non-positive values");
}

struct ModelSet {
  DiscreteModel normal;
  DiscreteModel faulty;
  DisturbanceSplit split;
};

inline ModelSet discrete_models(const MicrogridParams& p, DisturbanceSetting setting,
                                DiscretizationMethod method = DiscretizationMethod::zoh) {
  ModelSet m;
  m.normal = discretize(build_normal_model(p, setting), p.Ts, method);
  m.faulty = discretize(build_faulty_model(p, setting), p.Ts, method);
  m.split = split_disturbance(m.normal.B_d, {0}, m.normal.n_y());
  return m;
}

/// Models for the fully decoupled case: B_d = [0 ... 0 1 1]^T, B_check empty.
inline ModelSet perfect_setting_models(const MicrogridParams& p) {
  return discrete_models(p, DisturbanceSetting::perfect);
}

struct Scenario {
  long total_steps = 60000;
  std::optional<long> fault_step = 40000;
  DisturbanceSpec disturbance;
  std::optional<UncertaintySpec> uncertainty;
  StateVector initial_state = StateVector::reference_initial();
  bool warm_start = true;  // start both models at the fault-free steady state
  std::uint64_t seed = 1;
  DisturbanceSetting setting = DisturbanceSetting::partially_decoupled;

  void validate() const {
    if (total_steps <= 0) fail(ErrorKind::validation, "total_steps must be positive");
    if (fault_step && (*fault_step < 0 || *fault_step >= total_steps))
      fail(ErrorKind::validation, "fault_step must lie in [0, total_steps)");
    disturbance.validate(disturbance_dim(setting));
  }
};

/// Columnar per-step record. Rows are time steps k = 0 .. size()-1.
struct Trace {
  double Ts = 0.0;
  std::optional<long> fault_step;
  Matrix x;        // nominal state
  Matrix y;        // nominal output
  Matrix y_tilde;  // plant output (with noise)
  Matrix u;
  Matrix d;
  std::vector<int> f;
  Vector applied_disturbance;  // step value actually used (after random draw)

  // Filled by run_detection.
  std::vector<double> r;
  std::vector<double> J;
  std::vector<char> alarm;
  double J_th = 0.0;

  long size() const { return static_cast<long>(f.size()); }
  double time(long k) const { return static_cast<double>(k) * Ts; }
  bool annotated() const { return static_cast<long>(J.size()) == size(); }
};

namespace detail {
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

inline Vector steady_state(const DiscreteModel& m, const Vector& u) {
  const Matrix gap = Matrix::Identity(m.n_x(), m.n_x()) - m.A;
  return gap.partialPivLu().solve(m.B_u * u);
}

inline void check_finite(const Vector& v, long k) {
  if (!v.allFinite()) fail(ErrorKind::numerical, "simulation diverged (non-finite state) at step " + std::to_string(k));
}
}  // namespace detail

inline Trace simulate_scenario(const MicrogridParams& params, const Scenario& sc) {
  params.validate();
  sc.validate();
  auto rng = detail::make_rng(sc.seed, 0, 0x51);
  const ModelSet nominal = discrete_models(params, sc.setting);
  ModelSet plant = nominal;
  double noise = 0.0;
  if (sc.uncertainty) {
    plant = discrete_models(perturb_params(params, *sc.uncertainty, rng), sc.setting);
    noise = sc.uncertainty->noise_std;
  }
  const DisturbanceSpec dist = sc.disturbance.resolve(rng);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int nx = nominal.normal.n_x();
  const int ny = nominal.normal.n_y();
  const int nu = nominal.normal.n_u();
  const int nd = nominal.normal.n_d();
  const long n = sc.total_steps;

  Trace tr;
  tr.Ts = params.Ts;
  tr.fault_step = sc.fault_step;
  tr.x.resize(n, nx);
  tr.y.resize(n, ny);
  tr.y_tilde.resize(n, ny);
  tr.u.resize(n, nu);
  tr.d.resize(n, nd);
  tr.f.resize(n);
  tr.applied_disturbance = dist.kind == DisturbanceKind::step ? dist.step_value : Vector();

  Vector x, xp;
  if (sc.warm_start) {
    x = detail::steady_state(nominal.normal, params.input(0));
    xp = detail::steady_state(plant.normal, params.input(0));
  } else {
    x = sc.initial_state.to_vector();
    xp = x;
  }

  for (long k = 0; k < n; ++k) {
    const int f = sc.fault_step && k >= *sc.fault_step ? 1 : 0;
    const Vector u = params.input(f);
    const Vector d = dist.value_at(k, nd);
    Vector y = nominal.normal.C * x;
    Vector yt = plant.normal.C * xp;
    if (noise > 0.0)
      for (int i = 0; i < ny; ++i) yt(i) += noise * gauss(rng);
    tr.x.row(k) = x.transpose();
    tr.y.row(k) = y.transpose();
    tr.y_tilde.row(k) = yt.transpose();
    tr.u.row(k) = u.transpose();
    tr.d.row(k) = d.transpose();
    tr.f[k] = f;

    const DiscreteModel& m = f ? nominal.faulty : nominal.normal;
    const DiscreteModel& mp = f ? plant.faulty : plant.normal;
    x = m.A * x + m.B_u * u + m.B_d * d;
    xp = mp.A * xp + mp.B_u * u + mp.B_d * d;
    detail::check_finite(x, k + 1);
    detail::check_finite(xp, k + 1);
  }
  return tr;
}

/// m constant-step instances of length T + 1 with values uniform in [lower, upper].
inline std::vector<Matrix> generate_disturbance_instances(int m, int T, const Vector& lower, const Vector& upper,
                                                          std::uint64_t seed) {
  if (m < 0 || T < 0) fail(ErrorKind::validation, "instance count and length must be non-negative");
  if (lower.size() == 0 || lower.size() != upper.size())
    fail(ErrorKind::validation, "disturbance bounds are empty or mismatched");
  if ((lower.array() > upper.array()).any()) fail(ErrorKind::validation, "disturbance bounds are empty (lower > upper)");
  std::vector<Matrix> out;
  out.reserve(m);
  for (int i = 0; i < m; ++i) {
    auto rng = detail::make_rng(seed, static_cast<std::uint64_t>(i), 0xd1);
    Vector v(lower.size());
    for (Eigen::Index c = 0; c < lower.size(); ++c) v(c) = std::uniform_real_distribution<double>(lower(c), upper(c))(rng);
    out.push_back(v.transpose().replicate(T + 1, 1));
  }
  return out;
}

/// Output discrepancies xi_i(k) = y_plant(k) - y_nominal(k), k = 0..T, for m random plants.
/// Each run starts at the fault-free steady state and applies `excitation` (a random step
/// is redrawn per instance).
inline std::vector<Matrix> generate_uncertainty_instances(const MicrogridParams& params, const UncertaintySpec& uspec,
                                                          int m, int T, const DisturbanceSpec& excitation,
                                                          std::uint64_t seed,
                                                          DisturbanceSetting setting = DisturbanceSetting::partially_decoupled) {
  if (m < 0 || T < 0) fail(ErrorKind::validation, "instance count and length must be non-negative");
  params.validate();
  const int nd = disturbance_dim(setting);
  excitation.validate(nd);
  const ModelSet nominal = discrete_models(params, setting);
  const Vector u0 = params.input(0);
  const Vector x0 = detail::steady_state(nominal.normal, u0);

  std::vector<Matrix> out(m);
  detail::parallel_for(static_cast<std::size_t>(m), [&](std::size_t i) {
    auto rng = detail::make_rng(seed, i, 0x71);
    const ModelSet plant = discrete_models(perturb_params(params, uspec, rng), setting);
    const DisturbanceSpec dist = excitation.resolve(rng);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector x = x0;
    Vector xp = detail::steady_state(plant.normal, u0);
    Matrix xi(T + 1, nominal.normal.n_y());
    double y_scale = 0.0;
    for (int k = 0; k <= T; ++k) {
      const Vector y = nominal.normal.C * x;
      Vector yt = plant.normal.C * xp;
      for (Eigen::Index c = 0; c < yt.size(); ++c) yt(c) += uspec.noise_std * gauss(rng);
      xi.row(k) = (yt - y).transpose();
      y_scale = std::max(y_scale, y.cwiseAbs().maxCoeff());
      const Vector d = dist.value_at(k, nd);
      x = nominal.normal.A * x + nominal.normal.B_u * u0 + nominal.normal.B_d * d;
      xp = plant.normal.A * xp + plant.normal.B_u * u0 + plant.normal.B_d * d;
      detail::check_finite(xp, k + 1);
    }
    if (uspec.sanity_cap > 0.0 && xi.cwiseAbs().maxCoeff() > uspec.sanity_cap * std::max(y_scale, 1.0))
      fail(ErrorKind::numerical, "discrepancy instance " + std::to_string(i) + " exceeds the sanity cap");
    out[i] = std::move(xi);
  });
  return out;
}

}  // namespace gfd
