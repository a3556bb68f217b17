#pragma once

#include <stdexcept>
#include <string>

namespace clothdiff {

enum class ErrorKind {
  kShape,        // tensor or array dimensions disagree
  kNumeric,      // NaN/Inf or a diverging computation
  kDegenerate,   // geometrically degenerate input (empty mask, collinear points, ...)
  kFormat,       // malformed or unsupported file contents
  kInvalidArgument,
  kIo,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kDegenerate: return "degenerate";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace clothdiff
