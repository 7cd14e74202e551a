#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>

#include "gfd/error.hpp"

namespace gfd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

namespace linalg {

/// Rank cut-off for a set of singular values: max(rows, cols) * eps * sigma_max.
inline double rank_tolerance(const Vector& singular_values, Eigen::Index rows, Eigen::Index cols) {
  if (singular_values.size() == 0) return 0.0;
  return static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() *
         singular_values.maxCoeff();
}

inline int numerical_rank(const Matrix& m) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector& s = svd.singularValues();
  const double tol = rank_tolerance(s, m.rows(), m.cols());
  return static_cast<int>((s.array() > tol).count());
}

/// Orthonormal basis Z (columns) of the left null space of G, i.e. Z^T G = 0.
inline Matrix left_null_space(const Matrix& g) {
  if (g.cols() == 0) return Matrix::Identity(g.rows(), g.rows());
  Eigen::JacobiSVD<Matrix> svd(g, Eigen::ComputeFullU);
  const Vector& s = svd.singularValues();
  const double tol = rank_tolerance(s, g.rows(), g.cols());
  const auto rank = static_cast<Eigen::Index>((s.array() > tol).count());
  return svd.matrixU().rightCols(g.rows() - rank);
}

inline double spectral_radius(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return Eigen::EigenSolver<Matrix>(a, false).eigenvalues().cwiseAbs().maxCoeff();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Block diagonal with `copies` repetitions of `block`.
inline Matrix block_diagonal(const Matrix& block, int copies) {
  Matrix out = Matrix::Zero(block.rows() * copies, block.cols() * copies);
  for (int i = 0; i < copies; ++i) out.block(i * block.rows(), i * block.cols(), block.rows(), block.cols()) = block;
  return out;
}

/// Orthonormal basis of the reachable subspace of (A, B), built one Krylov block at a time with
/// re-orthogonalization. Better conditioned than ranking [B AB A^2B ...] when ||A|| is large.
inline Matrix reachable_subspace(const Matrix& a, const Matrix& b) {
  const Eigen::Index n = a.rows();
  Matrix basis(n, 0);
  Matrix remaining = Matrix::Identity(n, n);
  Matrix frontier = b;
  while (basis.cols() < n && frontier.cols() > 0) {
    Matrix projected = remaining.transpose() * frontier;
    if (projected.size() == 0) break;
    Eigen::JacobiSVD<Matrix> svd(projected, Eigen::ComputeFullU);
    const Vector& s = svd.singularValues();
    // Structural zeros come back as roundoff of size eps * ||frontier||; allow for accumulation.
    const double tol = 100.0 * static_cast<double>(n) * std::numeric_limits<double>::epsilon() * frontier.norm();
    const auto r = static_cast<Eigen::Index>((s.array() > tol).count());
    if (r == 0) break;
    Matrix fresh = remaining * svd.matrixU().leftCols(r);
    Matrix next_remaining = remaining * svd.matrixU().rightCols(remaining.cols() - r);
    basis.conservativeResize(n, basis.cols() + r);
    basis.rightCols(r) = fresh;
    remaining = next_remaining;
    frontier = a * fresh;
  }
  return basis;
}

/// Orthonormal basis of the observable subspace of (A, C): the orthogonal complement of the
/// unobservable subspace, which is the reachable subspace of (A^T, C^T).
inline Matrix observable_subspace(const Matrix& a, const Matrix& c) {
  return reachable_subspace(a.transpose(), c.transpose());
}

inline int observability_rank(const Matrix& a, const Matrix& c) {
  return static_cast<int>(observable_subspace(a, c).cols());
}

}  // namespace linalg
}  // namespace gfd
