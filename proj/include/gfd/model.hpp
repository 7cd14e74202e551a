#pragma once

// State-space models of a single-inverter microgrid (voltage PI loop, current PI loop, LCL
// filter, resistive load) in the dq frame, in normal and ground-fault modes.
//
// State ordering (n_x = 10):
//   [phi_d phi_q | gamma_d gamma_q | i_ld i_lq | v_od v_oq | i_od i_oq]
// Input u = [v_od_ref v_oq_ref tau_d tau_q], output y = [i_od i_oq].

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "gfd/error.hpp"
#include "gfd/linalg.hpp"

namespace gfd {

inline constexpr int kStateDim = 10;
inline constexpr int kOutputDim = 2;
inline constexpr int kInputDim = 4;

struct MicrogridParams {
  double omega = 314.1;  // rad/s
  double L_f = 3.5e-3;
  double R_f = 0.01;
  double C_f = 21.9e-6;
  double L_c = 1.3e-3;
  double R_c = 0.02;
  double R_L = 12.0;
  double K_P_c = 0.3;
  double K_I_c = 20.0;
  double K_P_v = 2.0;
  double K_I_v = 14.0;
  double F = 0.75;
  Eigen::Vector2d v_o_ref{381.0, 0.0};
  Eigen::Vector2d tau_dq{35.0, 0.7};
  double Ts = 1e-4;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorKind::validation, std::string("parameter ") + name + " must be positive and finite");
    };
    auto finite = [](double v, const char* name) {
      if (!std::isfinite(v)) fail(ErrorKind::validation, std::string("parameter ") + name + " must be finite");
    };
    positive(omega, "omega");
    positive(L_f, "L_f");
    positive(L_c, "L_c");
    positive(C_f, "C_f");
    positive(R_L, "R_L");
    positive(Ts, "Ts");
    finite(R_f, "R_f");
    finite(R_c, "R_c");
    if (R_f < 0.0) fail(ErrorKind::validation, "parameter R_f must be non-negative");
    if (R_c < 0.0) fail(ErrorKind::validation, "parameter R_c must be non-negative");
    finite(K_P_c, "K_P_c");
    finite(K_I_c, "K_I_c");
    finite(K_P_v, "K_P_v");
    finite(K_I_v, "K_I_v");
    finite(F, "F");
    if (!v_o_ref.allFinite()) fail(ErrorKind::validation, "parameter v_o_ref must be finite");
    if (!tau_dq.allFinite()) fail(ErrorKind::validation, "parameter tau_dq must be finite");
  }

  /// Known input vector [v_o_ref; f * tau_dq].
  Vector input(int fault_flag) const {
    Vector u(kInputDim);
    u << v_o_ref, (fault_flag ? tau_dq : Eigen::Vector2d::Zero());
    return u;
  }

  bool operator==(const MicrogridParams&) const = default;
};

struct StateVector {
  Eigen::Vector2d phi_dq = Eigen::Vector2d::Zero();
  Eigen::Vector2d gamma_dq = Eigen::Vector2d::Zero();
  Eigen::Vector2d i_ldq = Eigen::Vector2d::Zero();
  Eigen::Vector2d v_odq = Eigen::Vector2d::Zero();
  Eigen::Vector2d i_odq = Eigen::Vector2d::Zero();

  Vector to_vector() const {
    Vector x(kStateDim);
    x << phi_dq, gamma_dq, i_ldq, v_odq, i_odq;
    return x;
  }

  static StateVector from_vector(const Vector& x) {
    if (x.size() != kStateDim) fail(ErrorKind::structural, "state vector must have 10 entries");
    StateVector s;
    s.phi_dq = x.segment<2>(0);
    s.gamma_dq = x.segment<2>(2);
    s.i_ldq = x.segment<2>(4);
    s.v_odq = x.segment<2>(6);
    s.i_odq = x.segment<2>(8);
    return s;
  }

  // Default initial conditions. The i_lq entry (-5.5e3) is three
  // orders of magnitude off the other currents and is most likely a typo; it is kept verbatim so
  // the original values can be reproduced, and callers can override it (or use a steady-state warm start).
  static StateVector reference_initial() {
    StateVector s;
    s.phi_dq = {0.13, 0.0};
    s.gamma_dq = {0.0115, 0.0};
    s.i_ldq = {11.4, -5.5e3};
    s.v_odq = {380.8, 0.0};
    s.i_odq = {11.4, 0.4};
    return s;
  }

  bool operator==(const StateVector&) const = default;
};

/// Which disturbance input matrix to use.
///  partially_decoupled: d = i_o * dR_L enters the i_o equations through -1/L_c (n_d = 2);
///  perfect:             a single channel [0 ... 0 1 1]^T that can be decoupled (n_d = 1).
enum class DisturbanceSetting { partially_decoupled, perfect };

inline int disturbance_dim(DisturbanceSetting setting) {
  return setting == DisturbanceSetting::perfect ? 1 : 2;
}

struct ContinuousModel {
  Matrix A;
  Matrix B_u;
  Matrix B_d;
  Matrix C;
  int fault_flag = 0;

  int n_x() const { return static_cast<int>(A.rows()); }
  int n_u() const { return static_cast<int>(B_u.cols()); }
  int n_d() const { return static_cast<int>(B_d.cols()); }
  int n_y() const { return static_cast<int>(C.rows()); }
};

enum class DiscretizationMethod { zoh, forward_euler };

struct DiscreteModel {
  Matrix A;
  Matrix B_u;
  Matrix B_d;
  Matrix C;
  int fault_flag = 0;
  double Ts = 0.0;
  DiscretizationMethod method = DiscretizationMethod::zoh;

  int n_x() const { return static_cast<int>(A.rows()); }
  int n_u() const { return static_cast<int>(B_u.cols()); }
  int n_d() const { return static_cast<int>(B_d.cols()); }
  int n_y() const { return static_cast<int>(C.rows()); }
};

struct DisturbanceSplit {
  Matrix B_hat;    // n_x x 1, decoupled channel
  Matrix B_check;  // n_x x (n_d - 1), non-decoupled channels
  std::vector<int> decoupled_cols;
  std::vector<int> non_decoupled_cols;
};

namespace detail {

// Component matrices of the voltage controller, current controller and LCL filter.
struct Blocks {
  Matrix Bv1, Bv2, Cv, Dv1, Dv2;
  Matrix Bc1, Bc2, Cc, Dc1, Dc2;
  Matrix Al, Bl1, Bl2;
};

inline Blocks component_blocks(const MicrogridParams& p) {
  Blocks b;
  const double w = p.omega;
  b.Bv1 = Matrix::Identity(2, 2);
  b.Bv2 = Matrix::Zero(2, 6);
  b.Bv2(0, 2) = -1.0;
  b.Bv2(1, 3) = -1.0;
  b.Cv = p.K_I_v * Matrix::Identity(2, 2);
  b.Dv1 = p.K_P_v * Matrix::Identity(2, 2);
  b.Dv2 = Matrix::Zero(2, 6);
  b.Dv2.row(0) << 0, 0, -p.K_P_v, -w * p.C_f, p.F, 0;
  b.Dv2.row(1) << 0, 0, w * p.C_f, -p.K_P_v, 0, p.F;

  b.Bc1 = Matrix::Identity(2, 2);
  b.Bc2 = Matrix::Zero(2, 6);
  b.Bc2(0, 0) = -1.0;
  b.Bc2(1, 1) = -1.0;
  b.Cc = p.K_I_c * Matrix::Identity(2, 2);
  b.Dc1 = p.K_P_c * Matrix::Identity(2, 2);
  b.Dc2 = Matrix::Zero(2, 6);
  b.Dc2(0, 0) = -p.K_P_c;
  b.Dc2(0, 1) = -w * p.L_f;
  b.Dc2(1, 0) = w * p.L_f;
  b.Dc2(1, 1) = -p.K_P_c;

  b.Al = Matrix::Zero(6, 6);
  b.Al.row(0) << -p.R_f / p.L_f, w, -1.0 / p.L_f, 0, 0, 0;
  b.Al.row(1) << -w, -p.R_f / p.L_f, 0, -1.0 / p.L_f, 0, 0;
  b.Al.row(2) << 1.0 / p.C_f, 0, 0, w, -1.0 / p.C_f, 0;
  b.Al.row(3) << 0, 1.0 / p.C_f, -w, 0, 0, -1.0 / p.C_f;
  b.Al.row(4) << 0, 0, 1.0 / p.L_c, 0, -p.R_c / p.L_c, w;
  b.Al.row(5) << 0, 0, 0, 1.0 / p.L_c, -w, -p.R_c / p.L_c;
  b.Bl1 = Matrix::Zero(6, 2);
  b.Bl1(0, 0) = 1.0 / p.L_f;
  b.Bl1(1, 1) = 1.0 / p.L_f;
  b.Bl2 = Matrix::Zero(6, 2);
  b.Bl2(4, 0) = -1.0 / p.L_c;
  b.Bl2(5, 1) = -1.0 / p.L_c;
  return b;
}

inline Matrix output_matrix() {
  Matrix c = Matrix::Zero(kOutputDim, kStateDim);
  c.rightCols(2) = Matrix::Identity(2, 2);
  return c;
}

inline Matrix disturbance_matrix(const MicrogridParams& p, DisturbanceSetting setting) {
  if (setting == DisturbanceSetting::perfect) {
    Matrix bd = Matrix::Zero(kStateDim, 1);
    bd(8, 0) = 1.0;
    bd(9, 0) = 1.0;
    return bd;
  }
  Matrix bd = Matrix::Zero(kStateDim, 2);
  bd(8, 0) = -1.0 / p.L_c;
  bd(9, 1) = -1.0 / p.L_c;
  return bd;
}

}  // namespace detail

/// Fault-free model: x' = A_h x + B_h v_o_ref + B_d d, with zero columns for tau_dq in B_u.
inline ContinuousModel build_normal_model(const MicrogridParams& p,
                                          DisturbanceSetting setting = DisturbanceSetting::partially_decoupled) {
  p.validate();
  const auto b = detail::component_blocks(p);

  Matrix sel_io = Matrix::Zero(2, 6);
  sel_io.rightCols(2) = Matrix::Identity(2, 2);
  const Matrix load = p.R_L * Matrix::Identity(2, 2);
  const Matrix a33 = b.Al + b.Bl1 * (b.Dc1 * b.Dv2 + b.Dc2) + b.Bl2 * load * sel_io;

  ContinuousModel m;
  m.A = Matrix::Zero(kStateDim, kStateDim);
  m.A.block(0, 4, 2, 6) = b.Bv2;
  m.A.block(2, 0, 2, 2) = b.Bc1 * b.Cv;
  m.A.block(2, 4, 2, 6) = b.Bc1 * b.Dv2 + b.Bc2;
  m.A.block(4, 0, 6, 2) = b.Bl1 * b.Dc1 * b.Cv;
  m.A.block(4, 2, 6, 2) = b.Bl1 * b.Cc;
  m.A.block(4, 4, 6, 6) = a33;

  m.B_u = Matrix::Zero(kStateDim, kInputDim);
  m.B_u.block(0, 0, 2, 2) = b.Bv1;
  m.B_u.block(2, 0, 2, 2) = b.Bc1 * b.Dv1;
  m.B_u.block(4, 0, 6, 2) = b.Bl1 * b.Dc1 * b.Dv1;

  m.B_d = detail::disturbance_matrix(p, setting);
  m.C = detail::output_matrix();
  m.fault_flag = 0;
  return m;
}

/// Ground-fault model: bus voltage is shorted and the current reference is pinned to tau_dq.
/// The disturbance has no path into the state (B_d = 0).
inline ContinuousModel build_faulty_model(const MicrogridParams& p,
                                          DisturbanceSetting setting = DisturbanceSetting::partially_decoupled) {
  p.validate();
  const auto b = detail::component_blocks(p);

  ContinuousModel m;
  m.A = Matrix::Zero(kStateDim, kStateDim);
  m.A.block(0, 4, 2, 6) = b.Bv2;
  m.A.block(2, 4, 2, 6) = b.Bc2;
  m.A.block(4, 2, 6, 2) = b.Bl1 * b.Cc;
  m.A.block(4, 4, 6, 6) = b.Al + b.Bl1 * b.Dc2;

  m.B_u = Matrix::Zero(kStateDim, kInputDim);
  m.B_u.block(0, 0, 2, 2) = b.Bv1;           // B_uh1
  m.B_u.block(2, 2, 2, 2) = b.Bc1;           // B_uh2
  m.B_u.block(4, 2, 6, 2) = b.Bl1 * b.Dc1;

  m.B_d = Matrix::Zero(kStateDim, disturbance_dim(setting));
  m.C = detail::output_matrix();
  m.fault_flag = 1;
  return m;
}

/// A(f) = A_h + f (A_uh - A_h), B_u(f) = [B_h + f (B_uh1 - B_h), f B_uh2], B_d(f) = (1 - f) B_d.
inline ContinuousModel unified_model(const MicrogridParams& p, int f,
                                     DisturbanceSetting setting = DisturbanceSetting::partially_decoupled) {
  if (f != 0 && f != 1) fail(ErrorKind::validation, "fault flag must be 0 or 1");
  const auto normal = build_normal_model(p, setting);
  const auto faulty = build_faulty_model(p, setting);
  const double fd = static_cast<double>(f);
  ContinuousModel m;
  m.A = normal.A + fd * (faulty.A - normal.A);
  m.B_u = normal.B_u + fd * (faulty.B_u - normal.B_u);
  m.B_d = (1.0 - fd) * normal.B_d;
  m.C = normal.C;
  m.fault_flag = f;
  return m;
}

// dq projection with the 2/3 amplitude-invariant scaling.
inline Eigen::Vector2d dq_transform(const Eigen::Vector3d& abc, double theta) {
  constexpr double shift = 2.0 * std::numbers::pi / 3.0;
  Eigen::Matrix<double, 2, 3> P;
  P << std::cos(theta), std::cos(theta - shift), std::cos(theta + shift),
      std::sin(theta), std::sin(theta - shift), std::sin(theta + shift);
  return (2.0 / 3.0) * P * abc;
}

// Right inverse of dq_transform; the image is the zero-sum subspace of abc vectors.
inline Eigen::Vector3d inverse_dq_transform(const Eigen::Vector2d& dq, double theta) {
  constexpr double shift = 2.0 * std::numbers::pi / 3.0;
  Eigen::Matrix<double, 3, 2> Pinv;
  Pinv << std::cos(theta), std::sin(theta),
      std::cos(theta - shift), std::sin(theta - shift),
      std::cos(theta + shift), std::sin(theta + shift);
  return Pinv * dq;
}

/// Frame angle used by the abc import/export helpers: theta = omega * k * Ts.
inline double frame_angle(const MicrogridParams& p, long k) { return p.omega * static_cast<double>(k) * p.Ts; }

/// Exact zero-order hold (augmented-matrix exponential over [A B_u B_d]) or forward Euler.
inline DiscreteModel discretize(const ContinuousModel& model, double Ts,
                                DiscretizationMethod method = DiscretizationMethod::zoh) {
  if (!(Ts > 0.0) || !std::isfinite(Ts)) fail(ErrorKind::validation, "sampling period Ts must be positive");
  const Eigen::Index n = model.A.rows();
  const Eigen::Index nu = model.B_u.cols();
  const Eigen::Index nd = model.B_d.cols();

  DiscreteModel d;
  d.C = model.C;
  d.fault_flag = model.fault_flag;
  d.Ts = Ts;
  d.method = method;

  if (method == DiscretizationMethod::forward_euler) {
    d.A = Matrix::Identity(n, n) + Ts * model.A;
    d.B_u = Ts * model.B_u;
    d.B_d = Ts * model.B_d;
  } else {
    const Eigen::Index m = nu + nd;
    Matrix aug = Matrix::Zero(n + m, n + m);
    aug.topLeftCorner(n, n) = model.A;
    aug.block(0, n, n, nu) = model.B_u;
    aug.block(0, n + nu, n, nd) = model.B_d;
    const Matrix e = (aug * Ts).exp();
    d.A = e.topLeftCorner(n, n);
    d.B_u = e.block(0, n, n, nu);
    d.B_d = e.block(0, n + nu, n, nd);
  }
  if (!d.A.allFinite() || !d.B_u.allFinite() || !d.B_d.allFinite())
    fail(ErrorKind::numerical, "discretization produced non-finite entries");
  return d;
}

/// Partition B_d into the decoupled column and the remaining (non-decoupled) columns.
/// At most n_y - 1 channels can be decoupled from n_y measurements.
inline DisturbanceSplit split_disturbance(const Matrix& B_d, const std::vector<int>& decoupled_cols = {0},
                                          int n_y = kOutputDim) {
  if (static_cast<int>(decoupled_cols.size()) >= n_y)
    fail(ErrorKind::infeasible,
         "cannot decouple " + std::to_string(decoupled_cols.size()) + " disturbance channels with " +
             std::to_string(n_y) + " sensors: the number of unknown inputs must be smaller than the number of sensors");
  if (decoupled_cols.size() != 1) fail(ErrorKind::validation, "exactly one decoupled disturbance channel is required");
  const int col = decoupled_cols.front();
  if (col < 0 || col >= B_d.cols())
    fail(ErrorKind::validation, "decoupled channel index " + std::to_string(col) + " out of range");

  DisturbanceSplit s;
  s.decoupled_cols = decoupled_cols;
  s.B_hat = B_d.col(col);
  s.B_check = Matrix(B_d.rows(), B_d.cols() - 1);
  int j = 0;
  for (int c = 0; c < B_d.cols(); ++c) {
    if (c == col) continue;
    s.B_check.col(j++) = B_d.col(c);
    s.non_decoupled_cols.push_back(c);
  }
  return s;
}

}  // namespace gfd
