#pragma once

#include <stdexcept>
#include <string>

namespace gfd {

enum class ErrorKind {
  validation,  // bad parameter or config value
  structural,  // inconsistent matrix dimensions
  numerical,   // non-finite values, singular systems
  infeasible,  // constraint set empty or decoupling impossible
  synthesis,   // optimizer could not produce a usable filter
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::structural: return "structural";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::synthesis: return "synthesis";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace gfd
