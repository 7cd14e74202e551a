#pragma once

// Online residual generator a(q) r = N(q) L0 [y_tilde; u], evaluation J = r^2, and the
// threshold alarm logic.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gfd/error.hpp"
#include "gfd/linalg.hpp"
#include "gfd/simulate.hpp"
#include "gfd/synthesis.hpp"

namespace gfd {

struct AlarmEvent {
  enum class Kind { raised, cleared };
  long k = 0;
  double J = 0.0;
  Kind kind = Kind::raised;
};

inline const char* to_string(AlarmEvent::Kind k) { return k == AlarmEvent::Kind::raised ? "raised" : "cleared"; }

class Detector {
 public:
  struct Output {
    double r = 0.0;
    double J = 0.0;
    bool alarm = false;
    std::optional<AlarmEvent::Kind> transition;
  };

  Detector(const FilterCoefficients& filter, const Threshold& threshold, int eval_window = 1)
      : taps_(filter.taps()), a_(filter.denominator.coeffs), threshold_(threshold), eval_window_(eval_window) {
    d_a_ = filter.denominator.degree();
    if (d_a_ <= filter.d_N) fail(ErrorKind::validation, "denominator degree must exceed d_N");
    if (eval_window < 1) fail(ErrorKind::validation, "eval_window must be at least 1");
    if (filter.denominator.coeffs.back() != 1.0) fail(ErrorKind::validation, "denominator must be monic");
    reset();
  }

  int input_dim() const { return static_cast<int>(taps_.cols()); }
  const Threshold& threshold() const { return threshold_; }
  int eval_window() const { return eval_window_; }
  bool faulted() const { return faulted_; }
  bool alarm() const { return alarm_; }
  long steps() const { return k_; }

  /// Clears both delay lines, the alarm state and any fault state.
  void reset() {
    z_hist_ = Matrix::Zero(taps_.cols(), d_a_);
    r_hist_ = Vector::Zero(d_a_);
    run_ = 0;
    alarm_ = false;
    faulted_ = false;
    k_ = 0;
  }

  /// Fills the history as if z had been constant forever, so a steady input yields a steady
  /// residual from the first sample.
  void prime(const Vector& y_tilde, const Vector& u) {
    const Vector z = stack(y_tilde, u);
    reset();
    for (int j = 0; j < d_a_; ++j) z_hist_.col(j) = z;
    double a1 = 0.0;
    for (double c : a_) a1 += c;
    const double r_ss = taps_.colwise().sum().dot(z.transpose()) / a1;
    r_hist_.setConstant(r_ss);
  }

  Output push(const Vector& y_tilde, const Vector& u) {
    if (faulted_) fail(ErrorKind::numerical, "detector is in a fault state; reset() required");
    const Vector z = stack(y_tilde, u);
    if (!z.allFinite()) {
      faulted_ = true;
      fail(ErrorKind::numerical, "non-finite detector input at step " + std::to_string(k_));
    }

    // Column j of z_hist_ is z(k - d_a + j); r_hist_(j) is r(k - d_a + j).
    double r = 0.0;
    for (int j = 0; j < d_a_; ++j) r -= a_[j] * r_hist_(j);
    for (Eigen::Index s = 0; s < taps_.rows(); ++s) r += taps_.row(s).dot(z_hist_.col(s));

    for (int j = 0; j + 1 < d_a_; ++j) {
      z_hist_.col(j) = z_hist_.col(j + 1);
      r_hist_(j) = r_hist_(j + 1);
    }
    z_hist_.col(d_a_ - 1) = z;
    r_hist_(d_a_ - 1) = r;

    Output out;
    out.r = r;
    out.J = r * r;
    if (out.J > threshold_.J_th) {
      ++run_;
      if (!alarm_ && run_ >= eval_window_) {
        alarm_ = true;
        out.transition = AlarmEvent::Kind::raised;
      }
    } else {
      run_ = 0;
      if (alarm_) {
        alarm_ = false;
        out.transition = AlarmEvent::Kind::cleared;
      }
    }
    out.alarm = alarm_;
    ++k_;
    return out;
  }

 private:
  Vector stack(const Vector& y_tilde, const Vector& u) const {
    if (y_tilde.size() + u.size() != taps_.cols())
      fail(ErrorKind::validation, "detector input has dimension " + std::to_string(y_tilde.size() + u.size()) +
                                      ", expected " + std::to_string(taps_.cols()));
    Vector z(taps_.cols());
    z << y_tilde, u;
    return z;
  }

  Matrix taps_;  // row s = N_s L0
  std::vector<double> a_;
  Threshold threshold_;
  int eval_window_ = 1;
  int d_a_ = 1;
  Matrix z_hist_;
  Vector r_hist_;
  int run_ = 0;
  bool alarm_ = false;
  bool faulted_ = false;
  long k_ = 0;
};

struct DetectionResult {
  std::vector<AlarmEvent> events;
  std::optional<long> detection_delay;  // first raise at or after the fault, minus fault_step
  std::optional<long> first_raise;
};

/// Streams a trace through a freshly reset detector and annotates it with r, J and alarm.
inline DetectionResult run_detection(Trace& trace, Detector& det, bool prime = false) {
  det.reset();
  const long n = trace.size();
  trace.r.assign(n, 0.0);
  trace.J.assign(n, 0.0);
  trace.alarm.assign(n, 0);
  trace.J_th = det.threshold().J_th;
  if (prime && n > 0) det.prime(trace.y_tilde.row(0).transpose(), trace.u.row(0).transpose());

  DetectionResult res;
  for (long k = 0; k < n; ++k) {
    const auto out = det.push(trace.y_tilde.row(k).transpose(), trace.u.row(k).transpose());
    trace.r[k] = out.r;
    trace.J[k] = out.J;
    trace.alarm[k] = out.alarm ? 1 : 0;
    if (out.transition) {
      res.events.push_back({k, out.J, *out.transition});
      if (*out.transition == AlarmEvent::Kind::raised) {
        if (!res.first_raise) res.first_raise = k;
        if (trace.fault_step && k >= *trace.fault_step && !res.detection_delay)
          res.detection_delay = k - *trace.fault_step;
      }
    }
  }
  return res;
}

/// Fraction of samples k >= burn_in with J > J_th, pooled over fault-free annotated traces.
inline double false_alarm_rate(const std::vector<Trace>& traces, long burn_in) {
  long total = 0;
  long exceed = 0;
  for (const auto& t : traces) {
    if (!t.annotated()) fail(ErrorKind::validation, "trace has not been run through a detector");
    if (t.fault_step && *t.fault_step < t.size()) fail(ErrorKind::validation, "false_alarm_rate needs fault-free traces");
    for (long k = std::max(0L, burn_in); k < t.size(); ++k) {
      ++total;
      if (t.J[k] > t.J_th) ++exceed;
    }
  }
  if (total == 0) fail(ErrorKind::validation, "no samples after burn-in");
  return static_cast<double>(exceed) / static_cast<double>(total);
}

}  // namespace gfd
