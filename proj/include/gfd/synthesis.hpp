#pragma once

// Filter synthesis: signature matrices from training instances, the equality-constrained QP
// for the numerator row N_bar, its large-penalty closed form, the Markov threshold and the
// steady-state detectability test.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "gfd/dae.hpp"
#include "gfd/error.hpp"
#include "gfd/linalg.hpp"
#include "gfd/model.hpp"
#include "gfd/parallel.hpp"

namespace gfd {

inline constexpr double kDefaultRidge = 1e-6;
inline constexpr double kDefaultDelta = 1e6;

/// Monic denominator a(q) = q^d_a + a_{d_a-1} q^{d_a-1} + ... + a_0, coefficients ascending.
struct Denominator {
  std::vector<double> coeffs{0.0, 1.0};

  int degree() const { return static_cast<int>(coeffs.size()) - 1; }

  static Denominator deadbeat(int d_N) {
    if (d_N < 0) fail(ErrorKind::validation, "numerator degree d_N must be non-negative");
    Denominator a;
    a.coeffs.assign(d_N + 2, 0.0);
    a.coeffs.back() = 1.0;
    return a;
  }

  /// (q - p)^(d_N + 1)
  static Denominator repeated_pole(double p, int d_N) {
    if (d_N < 0) fail(ErrorKind::validation, "numerator degree d_N must be non-negative");
    if (!(p >= 0.0 && p < 1.0)) fail(ErrorKind::validation, "denominator pole must lie in [0, 1)");
    std::vector<double> c{1.0};
    for (int i = 0; i <= d_N; ++i) {
      std::vector<double> next(c.size() + 1, 0.0);
      for (std::size_t j = 0; j < c.size(); ++j) {
        next[j + 1] += c[j];
        next[j] -= p * c[j];
      }
      c = std::move(next);
    }
    Denominator a;
    a.coeffs = std::move(c);
    return a;
  }

  static Denominator from_coefficients(std::vector<double> c) {
    while (!c.empty() && c.back() == 0.0) c.pop_back();
    if (c.size() < 2) fail(ErrorKind::validation, "denominator must have degree at least 1");
    const double lead = c.back();
    for (double& v : c) v /= lead;
    Denominator a;
    a.coeffs = std::move(c);
    return a;
  }

  double evaluate(double q) const {
    double v = 0.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) v = v * q + *it;
    return v;
  }

  /// Largest root modulus, from the companion-matrix eigenvalues.
  double max_root_modulus() const {
    const int d = degree();
    if (std::all_of(coeffs.begin(), coeffs.end() - 1, [](double v) { return v == 0.0; })) return 0.0;
    Matrix comp = Matrix::Zero(d, d);
    for (int i = 1; i < d; ++i) comp(i, i - 1) = 1.0;
    for (int i = 0; i < d; ++i) comp(i, d - 1) = -coeffs[i];
    return linalg::spectral_radius(comp);
  }

  bool operator==(const Denominator&) const = default;
};

/// Impulse response l(0..T) of 1/a(q): a(q) l = delta.
inline std::vector<double> impulse_response(const Denominator& a, int T) {
  if (T < 0) fail(ErrorKind::validation, "impulse response length must be non-negative");
  if (a.coeffs.empty() || a.coeffs.back() != 1.0) fail(ErrorKind::validation, "denominator must be monic");
  const double rho = a.max_root_modulus();
  if (!(rho < 1.0)) fail(ErrorKind::validation, "denominator is not stable: root modulus " + std::to_string(rho));
  const int d = a.degree();
  std::vector<double> l(T + 1, 0.0);
  for (int k = d; k <= T; ++k) {
    double v = k == d ? 1.0 : 0.0;
    for (int j = 0; j < d; ++j) v -= a.coeffs[j] * l[k - d + j];
    l[k] = v;
  }
  return l;
}

/// Rows l_0 .. l_{T-d_N}, row j is l shifted right by j with zero fill.
inline Matrix build_gamma(const std::vector<double>& l, int T, int d_N) {
  if (T <= d_N + 1) fail(ErrorKind::validation, "instance length T must exceed d_N + 1");
  if (static_cast<int>(l.size()) < T + 1) fail(ErrorKind::validation, "impulse response shorter than T + 1");
  Matrix g = Matrix::Zero(T - d_N + 1, T + 1);
  for (int j = 0; j <= T - d_N; ++j)
    for (int c = 0; c + j <= T; ++c) g(j, j + c) = l[c];
  return g;
}

/// xi_bar = [xi; 0_u] row by row (rows are time steps).
inline Matrix pad_discrepancy(const Matrix& xi, int n_u) {
  Matrix out = Matrix::Zero(xi.rows(), xi.cols() + n_u);
  out.leftCols(xi.cols()) = xi;
  return out;
}

/// Gram matrix (B Xi Gamma)(B Xi Gamma)^T of one instance, where B is the block-diagonal
/// Lbar0 or Ebar0 and Xi the block-Hankel arrangement of the instance.
/// `instance` holds T+1 rows, one per time step.
inline Matrix signature_instance(const Matrix& instance, const Matrix& blockdiag, const Matrix& gamma, int d_N) {
  const Eigen::Index T = gamma.cols() - 1;
  const int nb = d_N + 1;
  if (instance.rows() != T + 1)
    fail(ErrorKind::validation, "instance has " + std::to_string(instance.rows()) + " samples, expected " +
                                    std::to_string(T + 1));
  if (gamma.rows() != T - d_N + 1) fail(ErrorKind::validation, "Gamma does not match d_N");
  const Eigen::Index p = instance.cols();
  if (blockdiag.cols() != nb * p) fail(ErrorKind::validation, "block-diagonal matrix does not match the instance width");
  if (p == 0) return Matrix::Zero(blockdiag.rows(), blockdiag.rows());

  const Eigen::Index w = T - d_N + 1;
  Matrix xi(nb * p, w);
  for (int s = 0; s < nb; ++s) xi.block(s * p, 0, p, w) = instance.middleRows(s, w).transpose();
  const Matrix m = blockdiag * (xi * gamma);
  Matrix phi = m * m.transpose();
  return 0.5 * (phi + phi.transpose());
}

struct SignatureMatrix {
  Matrix Phi_bar;
  Matrix Psi_bar;
  int m = 0;  // number of discrepancy instances
  int T = 0;

  Matrix total() const { return Phi_bar + Psi_bar; }
  bool is_zero() const { return Phi_bar.isZero(0.0) && Psi_bar.isZero(0.0); }
};

namespace detail {
inline Matrix mean_signature(const std::vector<Matrix>& instances, const Matrix& blockdiag, const Matrix& gamma,
                             int d_N) {
  const Eigen::Index dim = blockdiag.rows();
  if (instances.empty()) return Matrix::Zero(dim, dim);
  std::vector<Matrix> parts(instances.size());
  parallel_for(instances.size(), [&](std::size_t i) { parts[i] = signature_instance(instances[i], blockdiag, gamma, d_N); });
  Matrix sum = Matrix::Zero(dim, dim);
  for (const auto& p : parts) sum += p;
  return sum / static_cast<double>(instances.size());
}
}  // namespace detail

/// Mean signature matrices. `xi` instances are raw output discrepancies ((T+1) x n_y); they are
/// padded with zero input columns here. `d_check` instances are (T+1) x (n_d - 1).
inline SignatureMatrix average_signature(const std::vector<Matrix>& xi, const std::vector<Matrix>& d_check,
                                         const StackedDae& s, const Denominator& a, int T) {
  for (const auto* list : {&xi, &d_check})
    for (const auto& inst : *list)
      if (inst.rows() != T + 1)
        fail(ErrorKind::validation, "inconsistent instance length: got " + std::to_string(inst.rows() - 1) +
                                        ", expected T = " + std::to_string(T));
  const Matrix gamma = build_gamma(impulse_response(a, T), T, s.d_N);
  const int nb = s.d_N + 1;
  const int n_y_u = static_cast<int>(s.Lbar0.cols()) / nb;

  std::vector<Matrix> padded;
  padded.reserve(xi.size());
  for (const auto& x : xi) {
    if (x.cols() > n_y_u) fail(ErrorKind::validation, "discrepancy instance is wider than n_y + n_u");
    padded.push_back(pad_discrepancy(x, n_y_u - static_cast<int>(x.cols())));
  }

  SignatureMatrix sig;
  sig.m = static_cast<int>(xi.size());
  sig.T = T;
  sig.Phi_bar = detail::mean_signature(padded, s.Lbar0, gamma, s.d_N);
  if (s.Ebar0.cols() == 0 || d_check.empty())
    sig.Psi_bar = Matrix::Zero(s.Lbar0.rows(), s.Lbar0.rows());
  else
    sig.Psi_bar = detail::mean_signature(d_check, s.Ebar0, gamma, s.d_N);
  return sig;
}

enum class SynthesisMethod { qp, analytic };

inline const char* to_string(SynthesisMethod m) { return m == SynthesisMethod::qp ? "qp" : "analytic"; }

struct FilterCoefficients {
  RowVector N_bar;  // [N_0 ... N_dN]
  int d_N = 0;
  Denominator denominator;
  Matrix L0;  // maps z = [y; u] into the DAE row space
  double objective = 0.0;
  int active_index = 0;
  int active_sign = 1;
  double constraint_residual = 0.0;
  double ridge = 0.0;
  std::optional<double> delta;
  bool ridge_retried = false;
  SynthesisMethod method = SynthesisMethod::qp;

  int block_size() const { return static_cast<int>(N_bar.size()) / (d_N + 1); }
  RowVector block(int s) const { return N_bar.segment(s * block_size(), block_size()); }

  /// Row s holds N_s L0, the weight on z(k - d_a + s).
  Matrix taps() const {
    Matrix t(d_N + 1, L0.cols());
    for (int s = 0; s <= d_N; ++s) t.row(s) = block(s) * L0;
    return t;
  }

  /// N(1) = sum of the coefficient blocks.
  RowVector sum_blocks() const {
    RowVector sum = RowVector::Zero(block_size());
    for (int s = 0; s <= d_N; ++s) sum += block(s);
    return sum;
  }
};

/// N (Phi + Psi + eps I) N^T - ||N Lbar Hbar1 Ibar||_inf
inline double design_objective(const RowVector& n, const StackedDae& s, const SignatureMatrix& sig, double epsilon) {
  const double quad = (n * sig.total() * n.transpose())(0, 0) + epsilon * n.squaredNorm();
  return quad - (n * s.sensitivity).cwiseAbs().maxCoeff();
}

inline double constraint_residual(const RowVector& n, const StackedDae& s) {
  return (n * s.constraint).cwiseAbs().maxCoeff();
}

namespace detail {
inline void check_signature_shape(const StackedDae& s, const SignatureMatrix& sig) {
  const Eigen::Index dim = s.constraint.rows();
  if (sig.Phi_bar.rows() != dim || sig.Phi_bar.cols() != dim || sig.Psi_bar.rows() != dim || sig.Psi_bar.cols() != dim)
    fail(ErrorKind::structural, "signature matrices do not match the stacked DAE dimension " + std::to_string(dim));
}

// Flip N so that its response along the chosen direction is positive.
inline void canonicalize_sign(FilterCoefficients& f, const StackedDae& s) {
  const double along = (f.N_bar * s.sensitivity.col(f.active_index))(0, 0);
  if (along < 0.0) f.N_bar = -f.N_bar;
  f.active_sign = 1;
}
}  // namespace detail

/// Null-space solution of
///   min N (Phi + Psi + eps I) N^T - N g_i^{+-}   s.t.  N (Hbar0 Ibar) = 0
/// over all 2 (n_x + 1) signed sensitivity directions; the best direction wins.
inline FilterCoefficients solve_qp(const StackedDae& s, const SignatureMatrix& sig, const DaeSystem& dae,
                                   const Denominator& a, double epsilon = kDefaultRidge) {
  detail::check_signature_shape(s, sig);
  if (!(epsilon >= 0.0)) fail(ErrorKind::validation, "ridge epsilon must be non-negative");
  if (a.degree() <= s.d_N) fail(ErrorKind::validation, "denominator degree must exceed d_N");
  const auto report = feasibility_check(s);
  if (!report.equality_feasible) fail(ErrorKind::infeasible, "equality constraint infeasible: " + describe(report));
  if (!report.sensitivity_possible) fail(ErrorKind::infeasible, "no fault-sensitive direction: " + describe(report));

  const Matrix z = linalg::left_null_space(s.constraint);
  const Eigen::Index dim = s.constraint.rows();
  Matrix q = sig.total() + epsilon * Matrix::Identity(dim, dim);
  q = 0.5 * (q + q.transpose());
  const Matrix qz = z.transpose() * q * z;
  Eigen::LLT<Matrix> llt(qz);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e3 * std::numeric_limits<double>::epsilon())
    fail(ErrorKind::synthesis, "quadratic term is singular on the constraint null space; the QP is unbounded (use a positive ridge)");

  const Matrix c = z.transpose() * s.sensitivity;  // one column per direction
  double best = std::numeric_limits<double>::infinity();
  int best_i = -1;
  int best_sign = 1;
  Vector best_y;
  for (Eigen::Index i = 0; i < c.cols(); ++i) {
    for (int sign : {1, -1}) {
      const Vector ci = sign * c.col(i);
      const Vector y = llt.solve(ci) / 2.0;
      const double obj = -0.5 * ci.dot(y);  // y^T Qz y - y^T c at the minimizer
      if (obj < best) {
        best = obj;
        best_i = static_cast<int>(i);
        best_sign = sign;
        best_y = y;
      }
    }
  }
  if (best_i < 0 || !(best < 0.0)) fail(ErrorKind::synthesis, "all QP subproblems give the zero filter");

  FilterCoefficients f;
  f.N_bar = (z * best_y).transpose();
  f.d_N = s.d_N;
  f.denominator = a;
  f.L0 = dae.L0();
  f.active_index = best_i;
  f.active_sign = best_sign;
  f.ridge = epsilon;
  f.method = SynthesisMethod::qp;
  detail::canonicalize_sign(f, s);
  f.objective = design_objective(f.N_bar, s, sig, epsilon);
  f.constraint_residual = constraint_residual(f.N_bar, s);
  return f;
}

/// Closed-form penalty solution
///   N_i = g_i^T / (2 delta) (delta^-1 (Phi + Psi) + G G^T + ridge I)^-1,  G = Hbar0 Ibar,
/// with i* the direction of largest |N_i g_i|. ridge = eps / delta makes this the exact
/// minimizer of the QP objective plus delta ||N G||^2.
///
/// The inner matrix equals (A + delta G G^T) / delta with A = Phi + Psi + ridge delta I. Its
/// condition number grows like delta, so the inverse is applied through the Woodbury identity:
/// only A and the small (n_x+1) square matrix I / delta + G^T A^-1 G are factored.
inline FilterCoefficients solve_analytic(const StackedDae& s, const SignatureMatrix& sig, const DaeSystem& dae,
                                         const Denominator& a, double delta = kDefaultDelta,
                                         double ridge = kDefaultRidge / kDefaultDelta) {
  detail::check_signature_shape(s, sig);
  if (!(delta > 0.0) || !std::isfinite(delta)) fail(ErrorKind::validation, "delta must be positive");
  if (!(ridge >= 0.0)) fail(ErrorKind::validation, "ridge must be non-negative");
  if (a.degree() <= s.d_N) fail(ErrorKind::validation, "denominator degree must exceed d_N");

  const Eigen::Index dim = s.constraint.rows();
  const Matrix& g = s.constraint;
  bool retried = false;
  auto factor = [&](double r) {
    Matrix m = sig.total() + r * delta * Matrix::Identity(dim, dim);
    return Eigen::LLT<Matrix>(0.5 * (m + m.transpose()));
  };
  auto singular = [](const Eigen::LLT<Matrix>& llt) {
    return llt.info() != Eigen::Success || llt.rcond() < 10.0 * std::numeric_limits<double>::epsilon();
  };
  Eigen::LLT<Matrix> llt = factor(ridge);
  if (singular(llt)) {
    if (ridge != 0.0) fail(ErrorKind::numerical, "analytic inner matrix is singular at ridge " + std::to_string(ridge));
    ridge = kDefaultRidge / delta;
    retried = true;
    llt = factor(ridge);
    if (singular(llt)) fail(ErrorKind::numerical, "analytic inner matrix is singular after the ridge retry");
  }

  const Matrix ai_g = llt.solve(g);
  const Matrix ai_s = llt.solve(s.sensitivity);
  Matrix small = g.transpose() * ai_g;
  small.diagonal().array() += 1.0 / delta;
  const Eigen::LDLT<Matrix> inner(0.5 * (small + small.transpose()));
  if (inner.info() != Eigen::Success) fail(ErrorKind::numerical, "analytic constraint block could not be factored");
  const Matrix sol = 0.5 * (ai_s - ai_g * inner.solve(g.transpose() * ai_s));  // column i is N_i^T
  int best_i = -1;
  double best = -1.0;
  for (Eigen::Index i = 0; i < sol.cols(); ++i) {
    const double v = std::abs(sol.col(i).dot(s.sensitivity.col(i)));
    if (v > best) {
      best = v;
      best_i = static_cast<int>(i);
    }
  }
  if (!(best > 0.0)) fail(ErrorKind::synthesis, "analytic solution is the zero filter");

  FilterCoefficients f;
  f.N_bar = sol.col(best_i).transpose();
  f.d_N = s.d_N;
  f.denominator = a;
  f.L0 = dae.L0();
  f.active_index = best_i;
  f.ridge = ridge;
  f.delta = delta;
  f.ridge_retried = retried;
  f.method = SynthesisMethod::analytic;
  detail::canonicalize_sign(f, s);
  f.objective = design_objective(f.N_bar, s, sig, ridge * delta);
  f.constraint_residual = constraint_residual(f.N_bar, s);
  return f;
}

struct Threshold {
  double J_th = 0.0;
  double lambda = 1.0;
  int T = 0;
  double base = 0.0;    // N (Phi + Psi) N^T
  double markov = 0.0;  // lambda / T * base
  double floor = 0.0;   // fault-free envelope used when the signature is zero
};

/// J_th = max(lambda / T * N (Phi + Psi) N^T, floor). Steady-state false-alarm rate <= 1 / lambda
/// holds for the Markov part.
inline Threshold compute_threshold(const FilterCoefficients& f, const SignatureMatrix& sig, double lambda, int T,
                                   double floor = 0.0) {
  if (!(lambda >= 1.0) || !std::isfinite(lambda)) fail(ErrorKind::validation, "lambda must be at least 1");
  if (T <= 0) fail(ErrorKind::validation, "threshold horizon T must be positive");
  if (!(floor >= 0.0)) fail(ErrorKind::validation, "threshold floor must be non-negative");
  Threshold th;
  th.lambda = lambda;
  th.T = T;
  th.base = std::max(0.0, (f.N_bar * sig.total() * f.N_bar.transpose())(0, 0));
  th.markov = lambda / static_cast<double>(T) * th.base;
  th.floor = floor;
  th.J_th = std::max(th.markov, floor);
  return th;
}

/// lambda times the largest fault-free evaluation seen on training runs.
inline double envelope_floor(double lambda, double max_fault_free_J) {
  if (!(lambda >= 1.0)) fail(ErrorKind::validation, "lambda must be at least 1");
  return lambda * std::max(0.0, max_fault_free_J);
}

struct Detectability {
  double steady_residual = 0.0;
  double margin = 0.0;
  bool detectable = false;
  bool marginal = false;
  int observable_dim = 0;
};

/// Steady residual of the faulty model under constant input u_ss, evaluated at q = 1 on the
/// observable part of (A, C).
inline Detectability detectability_check(const FilterCoefficients& f, const DiscreteModel& faulty, const Vector& u_ss,
                                         double J_th) {
  if (u_ss.size() != faulty.n_u()) fail(ErrorKind::validation, "steady input has the wrong dimension");
  Detectability d;
  const Matrix vo = linalg::observable_subspace(faulty.A, faulty.C);
  d.observable_dim = static_cast<int>(vo.cols());
  const Matrix ao = vo.transpose() * faulty.A * vo;
  const Matrix bo = vo.transpose() * faulty.B_u;
  const Matrix co = faulty.C * vo;
  const Matrix gap = Matrix::Identity(ao.rows(), ao.cols()) - ao;
  Eigen::JacobiSVD<Matrix> svd(gap);
  const auto& sv = svd.singularValues();
  if (sv.size() > 0 && sv(sv.size() - 1) <= 1e-10 * std::max(1.0, sv(0))) {
    d.marginal = true;
    d.margin = std::numeric_limits<double>::quiet_NaN();
    return d;
  }
  const Vector y_ss = co * gap.fullPivLu().solve(bo * u_ss);
  Vector z(y_ss.size() + u_ss.size());
  z << y_ss, u_ss;
  const double a1 = f.denominator.evaluate(1.0);
  d.steady_residual = (f.sum_blocks() * f.L0 * z)(0, 0) / a1;
  d.margin = d.steady_residual * d.steady_residual - J_th;
  d.detectable = d.margin > 0.0;
  return d;
}

}  // namespace gfd
