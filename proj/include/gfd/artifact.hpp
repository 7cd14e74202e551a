#pragma once

// Versioned text file holding everything the detector needs, so detection can run without
// re-synthesis. Numbers are written with 17 significant digits and read back exactly.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>

#include "gfd/error.hpp"
#include "gfd/model.hpp"
#include "gfd/synthesis.hpp"

namespace gfd {

inline constexpr const char* kFilterHeader = "gfd-filter v1";

struct FilterArtifact {
  FilterCoefficients filter;
  Threshold threshold;
  DisturbanceSetting setting = DisturbanceSetting::partially_decoupled;
  int eval_window = 1;
  bool prime = true;
};

namespace detail {
inline void write_rows(std::ostream& os, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << m(i, j);
    os << '\n';
  }
}

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  void expect(const std::string& key) {
    std::string tok;
    if (!(in_ >> tok) || tok != key) fail(ErrorKind::io, "filter file: expected '" + key + "', got '" + tok + "'");
  }
  template <typename T>
  T read(const char* what) {
    T v{};
    if (!(in_ >> v)) fail(ErrorKind::io, std::string("filter file: cannot read ") + what);
    return v;
  }
  double number(const char* what) {
    const std::string tok = read<std::string>(what);
    if (tok == "nan") return std::numeric_limits<double>::quiet_NaN();
    try {
      std::size_t pos = 0;
      const double v = std::stod(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      fail(ErrorKind::io, std::string("filter file: bad number for ") + what + ": " + tok);
    }
  }
  Matrix matrix(const char* what) {
    const auto r = read<long>(what);
    const auto c = read<long>(what);
    if (r < 0 || c < 0 || r * c > 10'000'000) fail(ErrorKind::io, std::string("filter file: bad shape for ") + what);
    Matrix m(r, c);
    for (long i = 0; i < r; ++i)
      for (long j = 0; j < c; ++j) m(i, j) = number(what);
    return m;
  }

 private:
  std::istream& in_;
};
}  // namespace detail

inline void write_filter(std::ostream& os, const FilterArtifact& a) {
  const auto& f = a.filter;
  const auto& t = a.threshold;
  os << std::setprecision(17);
  os << kFilterHeader << '\n';
  os << "setting " << (a.setting == DisturbanceSetting::perfect ? "perfect" : "partially_decoupled") << '\n';
  os << "method " << to_string(f.method) << '\n';
  os << "d_N " << f.d_N << '\n';
  os << "denominator " << f.denominator.coeffs.size();
  for (double c : f.denominator.coeffs) os << ' ' << c;
  os << '\n';
  os << "ridge " << f.ridge << '\n';
  os << "delta ";
  if (f.delta) os << *f.delta;
  else os << "none";
  os << '\n';
  os << "ridge_retried " << (f.ridge_retried ? 1 : 0) << '\n';
  os << "active_index " << f.active_index << '\n';
  os << "active_sign " << f.active_sign << '\n';
  os << "objective " << f.objective << '\n';
  os << "constraint_residual " << f.constraint_residual << '\n';
  os << "threshold " << t.J_th << ' ' << t.lambda << ' ' << t.T << ' ' << t.base << ' ' << t.markov << ' ' << t.floor
     << '\n';
  os << "eval_window " << a.eval_window << '\n';
  os << "prime " << (a.prime ? 1 : 0) << '\n';
  os << "L0 " << f.L0.rows() << ' ' << f.L0.cols() << '\n';
  detail::write_rows(os, f.L0);
  const int bs = f.block_size();
  os << "N " << f.d_N + 1 << ' ' << bs << '\n';
  Matrix blocks(f.d_N + 1, bs);
  for (int s = 0; s <= f.d_N; ++s) blocks.row(s) = f.block(s);
  detail::write_rows(os, blocks);
  os << "end\n";
}

inline FilterArtifact read_filter(std::istream& in) {
  std::string header;
  std::getline(in, header);
  if (header != kFilterHeader) fail(ErrorKind::io, "not a filter file (header '" + header + "')");
  detail::TokenReader r(in);
  FilterArtifact a;
  auto& f = a.filter;
  r.expect("setting");
  const auto setting = r.read<std::string>("setting");
  if (setting == "perfect") a.setting = DisturbanceSetting::perfect;
  else if (setting == "partially_decoupled") a.setting = DisturbanceSetting::partially_decoupled;
  else fail(ErrorKind::io, "filter file: unknown setting " + setting);
  r.expect("method");
  const auto method = r.read<std::string>("method");
  if (method == "qp") f.method = SynthesisMethod::qp;
  else if (method == "analytic") f.method = SynthesisMethod::analytic;
  else fail(ErrorKind::io, "filter file: unknown method " + method);
  r.expect("d_N");
  f.d_N = r.read<int>("d_N");
  r.expect("denominator");
  const auto nc = r.read<long>("denominator size");
  if (nc < 2 || nc > 10000) fail(ErrorKind::io, "filter file: bad denominator size");
  f.denominator.coeffs.resize(nc);
  for (auto& c : f.denominator.coeffs) c = r.number("denominator");
  r.expect("ridge");
  f.ridge = r.number("ridge");
  r.expect("delta");
  const auto delta = r.read<std::string>("delta");
  if (delta != "none") f.delta = std::stod(delta);
  r.expect("ridge_retried");
  f.ridge_retried = r.read<int>("ridge_retried") != 0;
  r.expect("active_index");
  f.active_index = r.read<int>("active_index");
  r.expect("active_sign");
  f.active_sign = r.read<int>("active_sign");
  r.expect("objective");
  f.objective = r.number("objective");
  r.expect("constraint_residual");
  f.constraint_residual = r.number("constraint_residual");
  r.expect("threshold");
  auto& t = a.threshold;
  t.J_th = r.number("J_th");
  t.lambda = r.number("lambda");
  t.T = r.read<int>("T");
  t.base = r.number("base");
  t.markov = r.number("markov");
  t.floor = r.number("floor");
  r.expect("eval_window");
  a.eval_window = r.read<int>("eval_window");
  r.expect("prime");
  a.prime = r.read<int>("prime") != 0;
  r.expect("L0");
  f.L0 = r.matrix("L0");
  r.expect("N");
  const Matrix blocks = r.matrix("N");
  r.expect("end");
  if (blocks.rows() != f.d_N + 1 || blocks.cols() != f.L0.rows())
    fail(ErrorKind::io, "filter file: N blocks do not match d_N and L0");
  if (f.denominator.degree() <= f.d_N) fail(ErrorKind::io, "filter file: denominator degree must exceed d_N");
  f.N_bar.resize(blocks.size());
  for (Eigen::Index s = 0; s < blocks.rows(); ++s) f.N_bar.segment(s * blocks.cols(), blocks.cols()) = blocks.row(s);
  return a;
}

inline void save_filter(const FilterArtifact& a, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write filter file " + path.string());
  write_filter(out, a);
  if (!out) fail(ErrorKind::io, "error while writing " + path.string());
}

inline FilterArtifact load_filter(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open filter file " + path.string());
  return read_filter(in);
}

}  // namespace gfd
