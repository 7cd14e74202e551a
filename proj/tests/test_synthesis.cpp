#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "gfd/pipeline.hpp"
#include "gfd/synthesis.hpp"

using namespace gfd;

namespace {

struct Reference {
  ModelSet models;
  DaeSystem dae;
  StackedDae stacked;
};

const Reference& reference() {
  static const Reference p = [] {
    Reference x;
    x.models = discrete_models(MicrogridParams{}, DisturbanceSetting::partially_decoupled);
    x.dae = build_dae(x.models.normal, x.models.faulty, x.models.split);
    x.stacked = stack_matrices(x.dae, 10);
    return x;
  }();
  return p;
}

// Section IV style synthesis (100 instances, T = 200), computed once.
const SynthesisResult& default_synthesis() {
  static const SynthesisResult r = synthesize(RunConfig{});
  return r;
}

SignatureMatrix zero_signature(const StackedDae& s, int T = 200) {
  SignatureMatrix sig;
  sig.Phi_bar = Matrix::Zero(s.constraint.rows(), s.constraint.rows());
  sig.Psi_bar = sig.Phi_bar;
  sig.T = T;
  return sig;
}

// r = N(q) L0 / a(q) applied to xi_bar by the difference equation, zero initial conditions;
// returns sum of r(c)^2 for c = 0..T.
double filtered_energy(const RowVector& nbar, const Matrix& blockdiag_block, const Denominator& a, const Matrix& inst,
                       int d_N) {
  const int T = static_cast<int>(inst.rows()) - 1;
  const int br = static_cast<int>(blockdiag_block.rows());
  const int d_a = a.degree();
  std::vector<double> w(T + 1, 0.0);  // (N(q) L0 xi)(k), using xi(k + s)
  for (int k = 0; k <= T; ++k)
    for (int s = 0; s <= d_N; ++s)
      if (k + s <= T) w[k] += (nbar.segment(s * br, br) * blockdiag_block * inst.row(k + s).transpose())(0, 0);
  std::vector<double> r(T + 1, 0.0);
  for (int c = d_a; c <= T; ++c) {
    double v = w[c - d_a];
    for (int j = 0; j < d_a; ++j) v -= a.coeffs[j] * r[c - d_a + j];
    r[c] = v;
  }
  double e = 0.0;
  for (double x : r) e += x * x;
  return e;
}

}  // namespace

TEST(Denominator, Factories) {
  const auto a = Denominator::deadbeat(10);
  EXPECT_EQ(a.degree(), 11);
  EXPECT_EQ(a.coeffs.back(), 1.0);
  EXPECT_EQ(a.max_root_modulus(), 0.0);
  const auto b = Denominator::repeated_pole(0.5, 2);  // (q - 0.5)^3
  ASSERT_EQ(b.degree(), 3);
  EXPECT_NEAR(b.coeffs[0], -0.125, 1e-15);
  EXPECT_NEAR(b.coeffs[1], 0.75, 1e-15);
  EXPECT_NEAR(b.coeffs[2], -1.5, 1e-15);
  EXPECT_NEAR(b.evaluate(1.0), 0.125, 1e-15);
  EXPECT_THROW(Denominator::repeated_pole(1.0, 2), Error);
  const auto c = Denominator::from_coefficients({-1.0, 2.0});  // 2q - 1 -> q - 0.5
  EXPECT_NEAR(c.coeffs[0], -0.5, 1e-15);
  EXPECT_NEAR(c.max_root_modulus(), 0.5, 1e-12);
}

TEST(ImpulseResponse, PureDelay) {
  const auto l = impulse_response(Denominator::deadbeat(0), 5);
  const std::vector<double> expected{0, 1, 0, 0, 0, 0};
  EXPECT_EQ(l, expected);
}

TEST(ImpulseResponse, FirstOrderPole) {
  const auto l = impulse_response(Denominator::from_coefficients({-0.5, 1.0}), 30);
  ASSERT_EQ(l.size(), 31u);
  // Oracle: y(k+1) = 0.5 y(k) + delta(k)
  double y = 0.0;
  for (int k = 0; k <= 30; ++k) {
    EXPECT_NEAR(l[k], y, 1e-15);
    y = 0.5 * y + (k == 0 ? 1.0 : 0.0);
  }
  EXPECT_DOUBLE_EQ(l[1], 1.0);
  EXPECT_DOUBLE_EQ(l[4], 0.125);
}

TEST(ImpulseResponse, DeadbeatDefault) {
  const auto l = impulse_response(Denominator::deadbeat(10), 40);
  for (int k = 0; k <= 40; ++k) EXPECT_EQ(l[k], k == 11 ? 1.0 : 0.0);
}

TEST(ImpulseResponse, UnstableRejected) {
  try {
    impulse_response(Denominator::from_coefficients({-1.5, 1.0}), 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("1.5"), std::string::npos);
  }
}

TEST(Gamma, ImpulseGivesShiftedIdentity) {
  const std::vector<double> l{1, 0, 0, 0};
  const Matrix g = build_gamma(l, 3, 0);
  ASSERT_EQ(g.rows(), 4);
  EXPECT_EQ(g, Matrix::Identity(4, 4));
  EXPECT_THROW(build_gamma(l, 3, 2), Error);
  const std::vector<double> l5{1, 0, 0, 0, 0, 0};
  const Matrix g2 = build_gamma(l5, 5, 1);
  EXPECT_EQ(g2, Matrix::Identity(5, 6));
}

TEST(Gamma, DefaultDimensions) {
  const Matrix g = build_gamma(impulse_response(Denominator::deadbeat(10), 200), 200, 10);
  // Rows l_0 .. l_{T - d_N}: 191 of them.
  EXPECT_EQ(g.rows(), 191);
  EXPECT_EQ(g.cols(), 201);
}

TEST(Gamma, RowsAreShifts) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> l(31);
  for (auto& v : l) v = u(rng);
  const Matrix g = build_gamma(l, 30, 4);
  for (int j = 1; j < g.rows(); ++j) {
    for (int c = 0; c < j; ++c) EXPECT_EQ(g(j, c), 0.0);
    for (int c = j; c <= 30; ++c) EXPECT_EQ(g(j, c), g(0, c - j));
  }
}

TEST(Signature, ZeroInstance) {
  const auto& p = reference();
  const Matrix gamma = build_gamma(impulse_response(Denominator::deadbeat(10), 200), 200, 10);
  const Matrix phi = signature_instance(Matrix::Zero(201, 6), p.stacked.Lbar0, gamma, 10);
  EXPECT_TRUE(phi.isZero(0.0));
  EXPECT_THROW(signature_instance(Matrix::Zero(150, 6), p.stacked.Lbar0, gamma, 10), Error);
}

TEST(Signature, ImpulseInstance) {
  // Impulse in channel 0 at time 0: only block row 0 of Xi has a nonzero entry, at (0, 0).
  const auto& p = reference();
  const int T = 40, d_N = 10;
  const Matrix gamma = build_gamma(impulse_response(Denominator::deadbeat(d_N), T), T, d_N);
  Matrix inst = Matrix::Zero(T + 1, 6);
  inst(0, 0) = 1.0;
  const Matrix phi = signature_instance(inst, p.stacked.Lbar0, gamma, d_N);
  Matrix expected = Matrix::Zero(132, 132);
  const double g00 = gamma.row(0).squaredNorm();
  expected.topLeftCorner(12, 12) = p.dae.L0().col(0) * p.dae.L0().col(0).transpose() * g00;
  EXPECT_LT((phi - expected).cwiseAbs().maxCoeff(), 1e-12 * expected.cwiseAbs().maxCoeff());
}

// N Phi_i N^T equals the energy of the directly filtered instance.
TEST(Signature, FilteringOracle) {
  const auto& p = reference();
  const int T = 200, d_N = 10;
  std::mt19937 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  for (const auto& a : {Denominator::deadbeat(d_N), Denominator::repeated_pole(0.6, d_N)}) {
    const Matrix gamma = build_gamma(impulse_response(a, T), T, d_N);
    for (int i = 0; i < 20; ++i) {
      Matrix xi(T + 1, 2);
      for (int k = 0; k <= T; ++k) xi.row(k) << g(rng), g(rng);
      const Matrix inst = pad_discrepancy(xi, 4);
      RowVector nbar(132);
      for (Eigen::Index j = 0; j < nbar.size(); ++j) nbar(j) = g(rng);
      const Matrix phi = signature_instance(inst, p.stacked.Lbar0, gamma, d_N);
      const double quad = (nbar * phi * nbar.transpose())(0, 0);
      const double direct = filtered_energy(nbar, p.dae.L0(), a, inst, d_N);
      EXPECT_NEAR(quad, direct, 1e-9 * std::abs(direct));
      Eigen::SelfAdjointEigenSolver<Matrix> es(phi);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * phi.norm());
    }
  }
}

TEST(Signature, Averaging) {
  const auto& p = reference();
  const auto a = Denominator::deadbeat(10);
  std::mt19937 rng(7);
  std::normal_distribution<double> g(0.0, 0.1);
  std::vector<Matrix> xi, dc;
  for (int i = 0; i < 3; ++i) {
    Matrix x(201, 2), d(201, 1);
    for (int k = 0; k <= 200; ++k) {
      x.row(k) << g(rng), g(rng);
      d(k, 0) = g(rng);
    }
    xi.push_back(x);
    dc.push_back(d);
  }
  const auto one = average_signature({xi[0]}, {dc[0]}, p.stacked, a, 200);
  const Matrix gamma = build_gamma(impulse_response(a, 200), 200, 10);
  EXPECT_TRUE(one.Phi_bar.isApprox(signature_instance(pad_discrepancy(xi[0], 4), p.stacked.Lbar0, gamma, 10), 1e-14));
  EXPECT_TRUE(one.Psi_bar.isApprox(signature_instance(dc[0], p.stacked.Ebar0, gamma, 10), 1e-14));

  const auto three = average_signature(xi, dc, p.stacked, a, 200);
  auto xi2 = xi, dc2 = dc;
  xi2.insert(xi2.end(), xi.begin(), xi.end());
  dc2.insert(dc2.end(), dc.begin(), dc.end());
  const auto six = average_signature(xi2, dc2, p.stacked, a, 200);
  EXPECT_TRUE(six.Phi_bar.isApprox(three.Phi_bar, 1e-13));
  EXPECT_TRUE(six.Psi_bar.isApprox(three.Psi_bar, 1e-13));

  const auto none = average_signature({}, {}, p.stacked, a, 200);
  EXPECT_TRUE(none.is_zero());
  EXPECT_EQ(none.Phi_bar.rows(), 132);

  std::vector<Matrix> bad{xi[0], xi[1].topRows(150)};
  EXPECT_THROW(average_signature(bad, {}, p.stacked, a, 200), Error);
}

TEST(Qp, ZeroSignatureDefaultConfiguration) {
  const auto& p = reference();
  const auto f = solve_qp(p.stacked, zero_signature(p.stacked), p.dae, Denominator::deadbeat(10), 1e-6);
  EXPECT_LE(f.constraint_residual, 1e-8);
  EXPECT_LE((f.N_bar * p.stacked.constraint).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_GT((f.N_bar * p.stacked.sensitivity.col(f.active_index))(0, 0), 0.0);
  EXPECT_LT(f.objective, 0.0);
  EXPECT_EQ(f.method, SynthesisMethod::qp);
}

TEST(Qp, NegationMirrorsObjective) {
  const auto& p = reference();
  const auto& r = default_synthesis();
  const auto& f = r.artifact.filter;
  const double eps = f.ridge;
  const RowVector n = f.N_bar;
  const RowVector g = p.stacked.sensitivity.col(f.active_index).transpose();
  const Matrix q = r.signature.total() + eps * Matrix::Identity(132, 132);
  const double plus = (n * q * n.transpose())(0, 0) - n.dot(g);
  const double minus = (-n * q * -n.transpose())(0, 0) - (-n).dot(-g);
  EXPECT_NEAR(plus, minus, 1e-12 * std::abs(plus));
  EXPECT_NEAR(design_objective(n, p.stacked, r.signature, eps), design_objective(-n, p.stacked, r.signature, eps),
              1e-12 * std::abs(plus));
}

// Toy problem with a 2-D constraint null space: the QP optimum matches a brute-force grid
// search over null-space coordinates using the infinity-norm objective.
TEST(Qp, GridSearchOracle) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 4; ++trial) {
    const int nx = 3, ny = 3;
    DaeSystem dae;
    dae.n_x = nx;
    dae.n_y = ny;
    dae.n_u = 1;
    auto rnd = [&](int r, int c) {
      Matrix m(r, c);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = u(rng);
      return m;
    };
    dae.H1 = Matrix::Zero(6, 4);
    dae.H1.topLeftCorner(3, 3) = -Matrix::Identity(3, 3);
    dae.H0 = {rnd(6, 4), rnd(6, 4)};
    dae.H0[0].bottomRightCorner(3, 1).setZero();
    dae.L = {rnd(6, 4), rnd(6, 4)};
    dae.E = {Matrix::Zero(6, 0), Matrix::Zero(6, 0)};
    const auto s = stack_matrices(dae, 0);
    const auto rep = feasibility_check(s);
    ASSERT_EQ(rep.null_dim, 2);

    SignatureMatrix sig;
    const Matrix b = rnd(6, 6);
    sig.Phi_bar = b * b.transpose() * 0.5;
    sig.Psi_bar = Matrix::Zero(6, 6);
    const double eps = 1e-3;
    const auto f = solve_qp(s, sig, dae, Denominator::deadbeat(0), eps);

    // Independent null-space basis of G^T from a full-pivot LU kernel.
    const Matrix kernel = s.constraint.transpose().fullPivLu().kernel();
    ASSERT_EQ(kernel.cols(), 2);
    const Matrix q = sig.total() + eps * Matrix::Identity(6, 6);
    auto objective = [&](double y0, double y1) {
      const RowVector n = (kernel.col(0) * y0 + kernel.col(1) * y1).transpose();
      return (n * q * n.transpose())(0, 0) - (n * s.sensitivity).cwiseAbs().maxCoeff();
    };
    // Box large enough to contain every per-direction minimizer.
    const Matrix qz = kernel.transpose() * q * kernel;
    const Matrix cz = kernel.transpose() * s.sensitivity;
    const double radius = qz.inverse().norm() * cz.colwise().norm().maxCoeff();
    double best = std::numeric_limits<double>::infinity();
    double by0 = 0, by1 = 0;
    const int steps = 800;
    for (int i = -steps; i <= steps; ++i)
      for (int j = -steps; j <= steps; ++j) {
        const double y0 = radius * i / steps, y1 = radius * j / steps;
        const double v = objective(y0, y1);
        if (v < best) {
          best = v;
          by0 = y0;
          by1 = y1;
        }
      }
    // Local refinement around the best grid point.
    double h = radius / steps;
    for (int it = 0; it < 40; ++it, h *= 0.5)
      for (int i = -2; i <= 2; ++i)
        for (int j = -2; j <= 2; ++j) {
          const double v = objective(by0 + i * h, by1 + j * h);
          if (v < best) {
            best = v;
            by0 += i * h;
            by1 += j * h;
          }
        }
    ASSERT_LT(best, 0.0);
    EXPECT_LE(std::abs(f.objective - best), 0.01 * std::abs(best)) << "trial " << trial;
    EXPECT_LE(f.objective, best + 1e-9 * std::abs(best));
  }
}

TEST(Qp, InfeasibleConstraintRejected) {
  DaeSystem dae;
  dae.n_x = 3;
  dae.n_y = 1;
  dae.n_u = 1;
  dae.H1 = Matrix::Zero(4, 4);
  dae.H1.topLeftCorner(3, 3) = -Matrix::Identity(3, 3);
  dae.H0 = {Matrix::Random(4, 4), Matrix::Random(4, 4)};
  dae.L = {Matrix::Random(4, 2), Matrix::Random(4, 2)};
  dae.E = {Matrix::Zero(4, 0), Matrix::Zero(4, 0)};
  const auto s = stack_matrices(dae, 0);
  try {
    solve_qp(s, zero_signature(s), dae, Denominator::deadbeat(0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::infeasible);
  }
}

TEST(Qp, ZeroRidgeWithZeroSignatureIsUnbounded) {
  const auto& p = reference();
  try {
    solve_qp(p.stacked, zero_signature(p.stacked), p.dae, Denominator::deadbeat(10), 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::synthesis);
  }
}

TEST(Analytic, ConvergesToQp) {
  const auto& p = reference();
  const auto& r = default_synthesis();
  const auto& qp = r.artifact.filter;
  const double eps = qp.ridge;
  const double target = qp.objective;
  double previous = std::numeric_limits<double>::infinity();
  for (double delta : {1e2, 1e4, 1e6}) {
    const auto f = solve_analytic(p.stacked, r.signature, p.dae, qp.denominator, delta, eps / delta);
    const double gap = std::abs(design_objective(f.N_bar, p.stacked, r.signature, eps) - target);
    EXPECT_LE(gap, previous) << "delta " << delta;
    previous = gap;
    if (delta == 1e6) {
      EXPECT_LE(f.constraint_residual, 1e-4 * f.N_bar.norm());
      EXPECT_LE(gap, 0.01 * std::abs(target));
    }
  }
}

TEST(Analytic, ZeroSignatureReducesToConstraintTerm) {
  const auto& p = reference();
  const double delta = 1e4, ridge = 1e-3;
  const auto f = solve_analytic(p.stacked, zero_signature(p.stacked), p.dae, Denominator::deadbeat(10), delta, ridge);
  const Matrix m = p.stacked.constraint * p.stacked.constraint.transpose() + ridge * Matrix::Identity(132, 132);
  const RowVector expected =
      p.stacked.sensitivity.col(f.active_index).transpose() / (2.0 * delta) * m.fullPivLu().inverse();
  EXPECT_LT((f.N_bar - expected).norm(), 1e-9 * expected.norm());
  EXPECT_FALSE(f.ridge_retried);
}

TEST(Analytic, SingularInnerMatrixRetriesWithRidge) {
  const auto& p = reference();
  const auto f = solve_analytic(p.stacked, zero_signature(p.stacked), p.dae, Denominator::deadbeat(10), 1e6, 0.0);
  EXPECT_TRUE(f.ridge_retried);
  EXPECT_DOUBLE_EQ(f.ridge, kDefaultRidge / 1e6);
  EXPECT_GT((f.N_bar * p.stacked.sensitivity.col(f.active_index))(0, 0), 0.0);
}

TEST(Analytic, ArgmaxOverAllDirections) {
  const auto& p = reference();
  const auto& r = default_synthesis();
  const double delta = 1e4;
  const auto f = solve_analytic(p.stacked, r.signature, p.dae, Denominator::deadbeat(10), delta, 1e-6 / delta);
  const Matrix m = r.signature.total() / delta + p.stacked.constraint * p.stacked.constraint.transpose() +
                   1e-6 / delta * Matrix::Identity(132, 132);
  const auto lu = m.fullPivLu();
  double best = -1;
  int bi = -1;
  for (int i = 0; i < 11; ++i) {
    const Vector ni = lu.solve(p.stacked.sensitivity.col(i)) / (2.0 * delta);
    const double v = std::abs(ni.dot(p.stacked.sensitivity.col(i)));
    if (v > best) {
      best = v;
      bi = i;
    }
  }
  EXPECT_EQ(f.active_index, bi);
}

TEST(Threshold, ScalingAndEdgeCases) {
  const auto& p = reference();
  const auto& r = default_synthesis();
  const auto& f = r.artifact.filter;
  const auto zero = compute_threshold(f, zero_signature(p.stacked), 5.0, 200);
  EXPECT_EQ(zero.J_th, 0.0);
  const auto t5 = compute_threshold(f, r.signature, 5.0, 200);
  const auto t10 = compute_threshold(f, r.signature, 10.0, 200);
  const auto t5h = compute_threshold(f, r.signature, 5.0, 100);
  EXPECT_GT(t5.J_th, 0.0);
  EXPECT_NEAR(t10.J_th, 2.0 * t5.J_th, 1e-14 * t10.J_th);
  EXPECT_NEAR(t5h.J_th, 2.0 * t5.J_th, 1e-14 * t5h.J_th);
  EXPECT_NEAR(t5.J_th, 5.0 / 200.0 * (f.N_bar * r.signature.total() * f.N_bar.transpose())(0, 0), 1e-12 * t5.J_th);
  EXPECT_THROW(compute_threshold(f, r.signature, 0.5, 200), Error);
  const auto floored = compute_threshold(f, zero_signature(p.stacked), 5.0, 200, envelope_floor(5.0, 1e-3));
  EXPECT_DOUBLE_EQ(floored.J_th, 5e-3);
  EXPECT_EQ(floored.markov, 0.0);
}

TEST(Detectability, ZeroThresholdAndZeroInput) {
  const auto& p = reference();
  const auto& r = default_synthesis();
  const auto& f = r.artifact.filter;
  const auto d0 = detectability_check(f, p.models.faulty, MicrogridParams{}.input(1), 0.0);
  EXPECT_FALSE(d0.marginal);
  EXPECT_NE(d0.steady_residual, 0.0);
  EXPECT_TRUE(d0.detectable);
  const auto dz = detectability_check(f, p.models.faulty, Vector::Zero(4), 0.7);
  EXPECT_EQ(dz.steady_residual, 0.0);
  EXPECT_DOUBLE_EQ(dz.margin, -0.7);
  EXPECT_FALSE(dz.detectable);
}

TEST(Detectability, DefaultConfiguration) {
  const auto& r = default_synthesis();
  EXPECT_TRUE(r.detectability.detectable);
  EXPECT_GT(r.detectability.margin, 0.0);
  EXPECT_LT(r.detectability.observable_dim, 10);
}

TEST(Detectability, MarginalWhenIntegratorIsObservable) {
  // A pure integrator seen by the output: I - A_o is singular.
  DiscreteModel m;
  m.A = Matrix::Identity(1, 1);
  m.B_u = Matrix::Ones(1, 1);
  m.C = Matrix::Ones(1, 1);
  m.B_d = Matrix::Zero(1, 0);
  FilterCoefficients f;
  f.d_N = 0;
  f.N_bar = RowVector::Ones(2);
  f.L0 = Matrix::Identity(2, 2);
  f.denominator = Denominator::deadbeat(0);
  const auto d = detectability_check(f, m, Vector::Ones(1), 0.0);
  EXPECT_TRUE(d.marginal);
  EXPECT_FALSE(d.detectable);
}
