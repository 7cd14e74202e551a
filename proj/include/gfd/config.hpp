#pragma once

// Run configuration: model parameters, scenario, synthesis settings and output options,
// stored as a JSON document with one object per section. Missing keys keep their defaults;
// unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "gfd/error.hpp"
#include "gfd/model.hpp"
#include "gfd/simulate.hpp"
#include "gfd/synthesis.hpp"

namespace gfd {

struct SynthesisConfig {
  int d_N = 10;
  double pole = 0.0;  // a(q) = (q - pole)^(d_N + 1)
  double epsilon = kDefaultRidge;
  SynthesisMethod method = SynthesisMethod::qp;
  double delta = kDefaultDelta;
  double lambda = 5.0;
  int m = 100;
  int T = 200;
  Vector lower = Eigen::Vector2d(-20.0, -0.2);  // training disturbance bounds
  Vector upper = Eigen::Vector2d(20.0, 0.2);
  int eval_window = 1;
  bool prime = true;       // fill the detector history with the first sample
  int floor_runs = 20;     // envelope runs when the signature is zero
  long floor_steps = 2000;
  std::uint64_t seed = 7;

  Denominator denominator() const {
    return pole == 0.0 ? Denominator::deadbeat(d_N) : Denominator::repeated_pole(pole, d_N);
  }
  bool operator==(const SynthesisConfig& o) const {
    auto same = [](const Vector& a, const Vector& b) { return a.size() == b.size() && (a.size() == 0 || a == b); };
    return d_N == o.d_N && pole == o.pole && epsilon == o.epsilon && method == o.method && delta == o.delta &&
           lambda == o.lambda && m == o.m && T == o.T && same(lower, o.lower) && same(upper, o.upper) &&
           eval_window == o.eval_window && prime == o.prime && floor_runs == o.floor_runs &&
           floor_steps == o.floor_steps && seed == o.seed;
  }
};

struct IoConfig {
  std::string out_dir = "out";
  std::optional<double> current_base;  // per-unit export of currents when set
  bool operator==(const IoConfig&) const = default;
};

struct RunConfig {
  MicrogridParams params;
  Scenario scenario;
  SynthesisConfig synthesis;
  IoConfig io;

  RunConfig() {
    scenario.disturbance = DisturbanceSpec::step(Eigen::Vector2d(-15.0, 0.1), 15000);
    scenario.uncertainty = UncertaintySpec{};
  }

  void validate() const {
    params.validate();
    scenario.validate();
    const auto& s = synthesis;
    if (s.d_N < 0) fail(ErrorKind::validation, "synthesis.d_N must be non-negative");
    if (s.T <= s.d_N + 1) fail(ErrorKind::validation, "synthesis.T must exceed d_N + 1");
    if (s.m < 0) fail(ErrorKind::validation, "synthesis.m must be non-negative");
    if (!(s.lambda >= 1.0)) fail(ErrorKind::validation, "synthesis.lambda must be at least 1");
    if (!(s.epsilon >= 0.0)) fail(ErrorKind::validation, "synthesis.epsilon must be non-negative");
    if (!(s.delta > 0.0)) fail(ErrorKind::validation, "synthesis.delta must be positive");
    if (!(s.pole >= 0.0 && s.pole < 1.0)) fail(ErrorKind::validation, "synthesis.pole must lie in [0, 1)");
    if (s.eval_window < 1) fail(ErrorKind::validation, "synthesis.eval_window must be at least 1");
    const int nd = disturbance_dim(scenario.setting);
    if (s.lower.size() != nd || s.upper.size() != nd)
      fail(ErrorKind::validation, "synthesis bounds must have " + std::to_string(nd) + " entries");
    if ((s.lower.array() > s.upper.array()).any()) fail(ErrorKind::validation, "synthesis bounds are empty");
    if (io.current_base && !(*io.current_base > 0.0)) fail(ErrorKind::validation, "io.current_base must be positive");
  }

  bool operator==(const RunConfig& o) const {
    return params == o.params && scenario.total_steps == o.scenario.total_steps &&
           scenario.fault_step == o.scenario.fault_step && scenario.disturbance == o.scenario.disturbance &&
           scenario.uncertainty == o.scenario.uncertainty && scenario.initial_state == o.scenario.initial_state &&
           scenario.warm_start == o.scenario.warm_start && scenario.seed == o.scenario.seed &&
           scenario.setting == o.scenario.setting && synthesis == o.synthesis && io == o.io;
  }
};

/// Fully decoupled setting with the load-fluctuation disturbance; small or large amplitudes.
inline RunConfig load_fluctuation_config(bool large) {
  RunConfig c;
  c.scenario.setting = DisturbanceSetting::perfect;
  c.scenario.total_steps = 6000;
  c.scenario.fault_step = 3001;
  c.scenario.disturbance = large ? DisturbanceSpec::load_fluctuation_large() : DisturbanceSpec::load_fluctuation_small();
  c.scenario.uncertainty.reset();
  c.synthesis.m = 0;
  c.synthesis.lower = Vector::Constant(1, -2.0);
  c.synthesis.upper = Vector::Constant(1, 2.0);
  return c;
}

namespace detail {
using nlohmann::json;

inline json vec_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector json_to_vec(const json& j, const std::string& key) {
  if (!j.is_array()) fail(ErrorKind::validation, "config key " + key + " must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(ErrorKind::validation, "config key " + key + " must be an array of numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

// Reads keys from one section and rejects anything it does not know.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      obj_ = root.at(name_);
      if (!obj_.is_object()) fail(ErrorKind::validation, "config section " + name_ + " must be an object");
    } else {
      obj_ = json::object();
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::validation, "config key " + path(key) + " has the wrong type");
    }
  }

  void get_number(const char* key, double& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    if (!obj_.at(key).is_number()) fail(ErrorKind::validation, "config key " + path(key) + " must be a number");
    out = obj_.at(key).get<double>();
  }

  template <int N>
  void get_fixed(const char* key, Eigen::Matrix<double, N, 1>& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    const Vector v = json_to_vec(obj_.at(key), path(key));
    if (v.size() != N) fail(ErrorKind::validation, "config key " + path(key) + " must have " + std::to_string(N) + " entries");
    out = v;
  }

  void get_vector(const char* key, Vector& out) {
    seen_.insert(key);
    if (obj_.contains(key)) out = json_to_vec(obj_.at(key), path(key));
  }

  bool has(const char* key) const { return obj_.contains(key); }
  const json& raw(const char* key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : obj_.items())
      if (!seen_.count(k)) fail(ErrorKind::validation, "unknown config key " + path(k.c_str()));
  }

 private:
  std::string path(const char* key) const { return name_ + "." + key; }
  std::string name_;
  json obj_;
  std::set<std::string> seen_;
};

inline const char* setting_name(DisturbanceSetting s) {
  return s == DisturbanceSetting::perfect ? "perfect" : "partially_decoupled";
}
}  // namespace detail

inline std::string serialize(const RunConfig& c) {
  using detail::json;
  using detail::vec_to_json;
  json j;
  const auto& p = c.params;
  j["params"] = {{"omega", p.omega}, {"L_f", p.L_f}, {"R_f", p.R_f}, {"C_f", p.C_f}, {"L_c", p.L_c},
                 {"R_c", p.R_c}, {"R_L", p.R_L}, {"K_P_c", p.K_P_c}, {"K_I_c", p.K_I_c}, {"K_P_v", p.K_P_v},
                 {"K_I_v", p.K_I_v}, {"F", p.F}, {"v_o_ref", vec_to_json(p.v_o_ref)},
                 {"tau_dq", vec_to_json(p.tau_dq)}, {"Ts", p.Ts}};

  const auto& s = c.scenario;
  const auto& d = s.disturbance;
  json terms = json::array();
  for (const auto& t : d.terms) terms.push_back({{"amplitude", t.amplitude}, {"frequency", t.frequency}, {"phase", t.phase}});
  json dist = {{"kind", to_string(d.kind)}, {"onset", d.onset}, {"randomize", d.randomize}};
  if (d.step_value.size()) dist["step"] = vec_to_json(d.step_value);
  if (d.lower.size()) dist["lower"] = vec_to_json(d.lower);
  if (d.upper.size()) dist["upper"] = vec_to_json(d.upper);
  if (d.kind == DisturbanceKind::sinusoid) {
    dist["offset"] = d.offset;
    dist["terms"] = terms;
  }
  j["scenario"] = {{"total_steps", s.total_steps},
                   {"fault_step", s.fault_step ? json(*s.fault_step) : json(nullptr)},
                   {"disturbance", dist},
                   {"initial_state", vec_to_json(s.initial_state.to_vector())},
                   {"warm_start", s.warm_start},
                   {"seed", s.seed},
                   {"setting", detail::setting_name(s.setting)}};
  if (s.uncertainty) {
    const auto& u = *s.uncertainty;
    j["scenario"]["uncertainty"] = {{"param_perturbation", u.param_perturbation}, {"noise_std", u.noise_std},
                                    {"resample_cap", u.resample_cap}, {"sanity_cap", u.sanity_cap}};
  } else {
    j["scenario"]["uncertainty"] = nullptr;
  }

  const auto& y = c.synthesis;
  j["synthesis"] = {{"d_N", y.d_N}, {"pole", y.pole}, {"epsilon", y.epsilon}, {"method", to_string(y.method)},
                    {"delta", y.delta}, {"lambda", y.lambda}, {"m", y.m}, {"T", y.T},
                    {"lower", vec_to_json(y.lower)}, {"upper", vec_to_json(y.upper)},
                    {"eval_window", y.eval_window}, {"prime", y.prime}, {"floor_runs", y.floor_runs},
                    {"floor_steps", y.floor_steps}, {"seed", y.seed}};
  j["io"] = {{"out_dir", c.io.out_dir},
             {"current_base", c.io.current_base ? json(*c.io.current_base) : json(nullptr)}};

  // Round-trippable doubles: nlohmann prints the shortest representation that parses back exactly.
  return j.dump(2) + "\n";
}

inline RunConfig parse_config(const std::string& text) {
  using detail::json;
  json root;
  try {
    root = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::validation, std::string("config parse error: ") + e.what());
  }
  if (!root.is_object()) fail(ErrorKind::validation, "config must be a JSON object");
  for (const auto& [k, v] : root.items())
    if (k != "params" && k != "scenario" && k != "synthesis" && k != "io")
      fail(ErrorKind::validation, "unknown config section " + k);

  RunConfig c;
  {
    detail::Section s(root, "params");
    auto& p = c.params;
    s.get_number("omega", p.omega);
    s.get_number("L_f", p.L_f);
    s.get_number("R_f", p.R_f);
    s.get_number("C_f", p.C_f);
    s.get_number("L_c", p.L_c);
    s.get_number("R_c", p.R_c);
    s.get_number("R_L", p.R_L);
    s.get_number("K_P_c", p.K_P_c);
    s.get_number("K_I_c", p.K_I_c);
    s.get_number("K_P_v", p.K_P_v);
    s.get_number("K_I_v", p.K_I_v);
    s.get_number("F", p.F);
    s.get_fixed<2>("v_o_ref", p.v_o_ref);
    s.get_fixed<2>("tau_dq", p.tau_dq);
    s.get_number("Ts", p.Ts);
    s.finish();
  }
  {
    detail::Section s(root, "scenario");
    auto& sc = c.scenario;
    s.get("total_steps", sc.total_steps);
    if (s.has("fault_step")) {
      const auto& v = s.raw("fault_step");
      if (v.is_null()) sc.fault_step.reset();
      else if (v.is_number_integer()) sc.fault_step = v.get<long>();
      else fail(ErrorKind::validation, "config key scenario.fault_step must be an integer or null");
    }
    std::string setting = detail::setting_name(sc.setting);
    s.get("setting", setting);
    if (setting == "perfect") sc.setting = DisturbanceSetting::perfect;
    else if (setting == "partially_decoupled") sc.setting = DisturbanceSetting::partially_decoupled;
    else fail(ErrorKind::validation, "scenario.setting must be perfect or partially_decoupled");
    s.get("warm_start", sc.warm_start);
    s.get("seed", sc.seed);
    if (s.has("initial_state")) {
      Vector x;
      s.get_vector("initial_state", x);
      sc.initial_state = StateVector::from_vector(x);
    }
    if (s.has("uncertainty")) {
      const auto& u = s.raw("uncertainty");
      if (u.is_null()) {
        sc.uncertainty.reset();
      } else {
        json wrap = {{"uncertainty", u}};
        detail::Section us(wrap, "uncertainty");
        UncertaintySpec spec = sc.uncertainty.value_or(UncertaintySpec{});
        us.get_number("param_perturbation", spec.param_perturbation);
        us.get_number("noise_std", spec.noise_std);
        us.get("resample_cap", spec.resample_cap);
        us.get_number("sanity_cap", spec.sanity_cap);
        us.finish();
        sc.uncertainty = spec;
      }
    }
    if (s.has("disturbance")) {
      json wrap = {{"scenario.disturbance", s.raw("disturbance")}};
      detail::Section ds(wrap, "scenario.disturbance");
      DisturbanceSpec d;
      std::string kind = "none";
      ds.get("kind", kind);
      if (kind == "none") d.kind = DisturbanceKind::none;
      else if (kind == "step") d.kind = DisturbanceKind::step;
      else if (kind == "sinusoid") d.kind = DisturbanceKind::sinusoid;
      else fail(ErrorKind::validation, "scenario.disturbance.kind must be none, step or sinusoid");
      ds.get("onset", d.onset);
      ds.get("randomize", d.randomize);
      ds.get_vector("step", d.step_value);
      ds.get_vector("lower", d.lower);
      ds.get_vector("upper", d.upper);
      ds.get_number("offset", d.offset);
      if (ds.has("terms")) {
        const auto& terms = ds.raw("terms");
        if (!terms.is_array()) fail(ErrorKind::validation, "scenario.disturbance.terms must be an array");
        for (const auto& t : terms) {
          json tw = {{"scenario.disturbance.terms[]", t}};
          detail::Section ts(tw, "scenario.disturbance.terms[]");
          SinusoidTerm st;
          ts.get_number("amplitude", st.amplitude);
          ts.get_number("frequency", st.frequency);
          ts.get_number("phase", st.phase);
          ts.finish();
          d.terms.push_back(st);
        }
      }
      if (d.randomize && d.step_value.size() == 0) d.step_value = Vector::Zero(d.lower.size());
      ds.finish();
      sc.disturbance = d;
    }
    s.finish();
  }
  {
    detail::Section s(root, "synthesis");
    auto& y = c.synthesis;
    s.get("d_N", y.d_N);
    s.get_number("pole", y.pole);
    s.get_number("epsilon", y.epsilon);
    std::string method = to_string(y.method);
    s.get("method", method);
    if (method == "qp") y.method = SynthesisMethod::qp;
    else if (method == "analytic") y.method = SynthesisMethod::analytic;
    else fail(ErrorKind::validation, "synthesis.method must be qp or analytic");
    s.get_number("delta", y.delta);
    s.get_number("lambda", y.lambda);
    s.get("m", y.m);
    s.get("T", y.T);
    s.get_vector("lower", y.lower);
    s.get_vector("upper", y.upper);
    s.get("eval_window", y.eval_window);
    s.get("prime", y.prime);
    s.get("floor_runs", y.floor_runs);
    s.get("floor_steps", y.floor_steps);
    s.get("seed", y.seed);
    s.finish();
  }
  {
    detail::Section s(root, "io");
    s.get("out_dir", c.io.out_dir);
    if (s.has("current_base")) {
      const auto& v = s.raw("current_base");
      if (v.is_null()) c.io.current_base.reset();
      else if (v.is_number()) c.io.current_base = v.get<double>();
      else fail(ErrorKind::validation, "io.current_base must be a number or null");
    }
    s.finish();
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline void save_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write config " + path.string());
  out << serialize(c);
}

}  // namespace gfd
