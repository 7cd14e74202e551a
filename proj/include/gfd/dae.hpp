#pragma once

// Polynomial (shift-operator) DAE form of the discrete unified model,
//
//   H(q, f)[X] + L(f)[Y] + E(f)[d_check] = 0,   X = [x; d_hat],  Y = [y; u],
//   H(q, f) = q H1 + H0(f),
//
// and the block-stacked matrices that turn polynomial products N(q) H(q, f) into plain
// matrix products on the coefficient row N_bar = [N_0 ... N_dN].

#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "gfd/error.hpp"
#include "gfd/linalg.hpp"
#include "gfd/model.hpp"

namespace gfd {

struct DaeSystem {
  Matrix H1;                 // (n_x+n_y) x (n_x+1)
  std::array<Matrix, 2> H0;  // indexed by fault flag
  std::array<Matrix, 2> L;   // (n_x+n_y) x (n_y+n_u)
  std::array<Matrix, 2> E;   // (n_x+n_y) x (n_d-1); E[1] is zero

  int n_x = 0;
  int n_y = 0;
  int n_u = 0;

  const Matrix& L0() const { return L[0]; }
  const Matrix& L1() const { return L[1]; }
  const Matrix& E0() const { return E[0]; }
  int rows() const { return n_x + n_y; }
  int cols() const { return n_x + 1; }

  /// H(q, f) evaluated at a scalar q.
  Matrix H_at(double q, int f) const { return q * H1 + H0.at(f); }
};

struct StackedDae {
  Matrix Hbar0;  // (d_N+1)(n_x+n_y) x (d_N+2)(n_x+1)
  Matrix Hbar1;
  Matrix Lbar;   // block-diag of L0 L1^+
  Matrix Ibar;   // (d_N+2) stacked identities of size n_x+1
  Matrix Lbar0;  // block-diag of L0
  Matrix Ebar0;  // block-diag of E0
  int d_N = 0;

  // Cached products used by the optimizer.
  Matrix constraint;   // Hbar0 * Ibar         -- N_bar * constraint = 0
  Matrix sensitivity;  // Lbar * Hbar1 * Ibar  -- fault sensitivity directions

  Eigen::Index coefficient_count() const { return Hbar0.rows(); }
};

struct FeasibilityReport {
  int rank_H0I = 0;
  int null_dim = 0;
  int rank_augmented = 0;
  bool equality_feasible = false;
  bool sensitivity_possible = false;
  int rows = 0;
};

/// Left inverse (L^T L)^{-1} L^T of a full-column-rank matrix.
inline Matrix left_pseudo_inverse(const Matrix& l1) {
  if (l1.cols() == 0) return Matrix(0, l1.rows());
  if (linalg::numerical_rank(l1) < l1.cols())
    fail(ErrorKind::numerical, "left inverse requires full column rank (rank " +
                                   std::to_string(linalg::numerical_rank(l1)) + " < " +
                                   std::to_string(l1.cols()) + ")");
  const Matrix gram = l1.transpose() * l1;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) fail(ErrorKind::numerical, "L1^T L1 is not positive definite");
  return llt.solve(l1.transpose());
}

inline DaeSystem build_dae(const DiscreteModel& normal, const DiscreteModel& faulty, const DisturbanceSplit& split) {
  const int nx = normal.n_x();
  const int ny = normal.n_y();
  const int nu = normal.n_u();
  if (faulty.n_x() != nx || faulty.n_y() != ny || faulty.n_u() != nu)
    fail(ErrorKind::structural, "normal and faulty models have different dimensions");
  if (normal.A.cols() != nx || normal.C.cols() != nx || normal.B_u.rows() != nx)
    fail(ErrorKind::structural, "normal model matrices are inconsistent");
  if (split.B_hat.rows() != nx || split.B_hat.cols() != 1 || (split.B_check.size() && split.B_check.rows() != nx))
    fail(ErrorKind::structural, "disturbance split does not match the state dimension");

  DaeSystem dae;
  dae.n_x = nx;
  dae.n_y = ny;
  dae.n_u = nu;
  const int rows = nx + ny;

  dae.H1 = Matrix::Zero(rows, nx + 1);
  dae.H1.topLeftCorner(nx, nx) = -Matrix::Identity(nx, nx);

  const std::array<const DiscreteModel*, 2> models{&normal, &faulty};
  for (int f = 0; f < 2; ++f) {
    const auto& m = *models[f];
    const double healthy = f == 0 ? 1.0 : 0.0;  // (1 - f) factor on the disturbance channels

    Matrix h0 = Matrix::Zero(rows, nx + 1);
    h0.topLeftCorner(nx, nx) = m.A;
    h0.block(0, nx, nx, 1) = healthy * split.B_hat;
    h0.bottomLeftCorner(ny, nx) = m.C;
    dae.H0[f] = h0;

    Matrix l = Matrix::Zero(rows, ny + nu);
    l.block(0, ny, nx, nu) = m.B_u;
    l.block(nx, 0, ny, ny) = -Matrix::Identity(ny, ny);
    dae.L[f] = l;

    Matrix e = Matrix::Zero(rows, split.B_check.cols());
    if (split.B_check.cols() > 0) e.topRows(nx) = healthy * split.B_check;
    dae.E[f] = e;
  }
  return dae;
}

inline StackedDae stack_matrices(const DaeSystem& dae, int d_N) {
  if (d_N < 0) fail(ErrorKind::validation, "numerator degree d_N must be non-negative");
  const int br = dae.rows();
  const int bc = dae.cols();
  const int nb = d_N + 1;

  StackedDae s;
  s.d_N = d_N;
  for (int f = 0; f < 2; ++f) {
    Matrix hbar = Matrix::Zero(nb * br, (nb + 1) * bc);
    for (int i = 0; i < nb; ++i) {
      hbar.block(i * br, i * bc, br, bc) = dae.H0[f];
      hbar.block(i * br, (i + 1) * bc, br, bc) = dae.H1;
    }
    (f == 0 ? s.Hbar0 : s.Hbar1) = std::move(hbar);
  }

  s.Ibar = Matrix::Zero((nb + 1) * bc, bc);
  for (int i = 0; i <= nb; ++i) s.Ibar.block(i * bc, 0, bc, bc) = Matrix::Identity(bc, bc);

  const Matrix l0_l1inv = dae.L0() * left_pseudo_inverse(dae.L1());
  s.Lbar = linalg::block_diagonal(l0_l1inv, nb);
  s.Lbar0 = linalg::block_diagonal(dae.L0(), nb);
  s.Ebar0 = linalg::block_diagonal(dae.E0(), nb);

  s.constraint = s.Hbar0 * s.Ibar;
  s.sensitivity = s.Lbar * s.Hbar1 * s.Ibar;
  return s;
}

inline FeasibilityReport feasibility_check(const StackedDae& s) {
  FeasibilityReport r;
  r.rows = static_cast<int>(s.constraint.rows());
  r.rank_H0I = linalg::numerical_rank(s.constraint);
  r.null_dim = r.rows - r.rank_H0I;
  Matrix aug(s.constraint.rows(), s.constraint.cols() + s.sensitivity.cols());
  aug << s.constraint, s.sensitivity;
  r.rank_augmented = linalg::numerical_rank(aug);
  r.equality_feasible = r.null_dim > 0;
  r.sensitivity_possible = r.rank_augmented > r.rank_H0I;
  return r;
}

inline std::string describe(const FeasibilityReport& r) {
  std::ostringstream os;
  os << "rows=" << r.rows << " rank(Hbar0*Ibar)=" << r.rank_H0I << " null_dim=" << r.null_dim
     << " rank([Hbar0*Ibar Lbar*Hbar1*Ibar])=" << r.rank_augmented
     << " equality_feasible=" << (r.equality_feasible ? "true" : "false")
     << " sensitivity_possible=" << (r.sensitivity_possible ? "true" : "false");
  return os.str();
}

namespace detail {
inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}
}  // namespace detail

// Debug dump of every stacked matrix, one CSV per matrix.
inline void dump_stacked_csv(const StackedDae& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_matrix_csv(dir / "Hbar0.csv", s.Hbar0);
  detail::write_matrix_csv(dir / "Hbar1.csv", s.Hbar1);
  detail::write_matrix_csv(dir / "Lbar.csv", s.Lbar);
  detail::write_matrix_csv(dir / "Ibar.csv", s.Ibar);
  detail::write_matrix_csv(dir / "Lbar0.csv", s.Lbar0);
  detail::write_matrix_csv(dir / "Ebar0.csv", s.Ebar0);
  detail::write_matrix_csv(dir / "Hbar0_Ibar.csv", s.constraint);
  detail::write_matrix_csv(dir / "Lbar_Hbar1_Ibar.csv", s.sensitivity);
}

}  // namespace gfd
