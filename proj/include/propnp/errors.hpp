#pragma once

#include <stdexcept>
#include <string>

namespace propnp {

// Base class for all recoverable errors raised by the library. Each error
// carries a stable machine-readable code used by the CLI for reporting.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error(msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// A point projects at or behind the camera plane (z <= z_min).
struct NonPositiveDepth : Error {
  explicit NonPositiveDepth(const std::string& msg)
      : Error("non_positive_depth", msg) {}
};

// The damped normal equations are numerically singular.
struct SingularSystem : Error {
  explicit SingularSystem(const std::string& msg)
      : Error("singular_system", msg) {}
};

// Every pose hypothesis failed the depth checks.
struct NoValidHypothesis : Error {
  explicit NoValidHypothesis(const std::string& msg)
      : Error("no_valid_hypothesis", msg) {}
};

// A distribution fit failed on degenerate weighted samples.
struct DegenerateFit : Error {
  explicit DegenerateFit(const std::string& msg)
      : Error("degenerate_fit", msg) {}
};

// Fixed-point parameter estimation failed to converge.
struct FixedPointDivergence : Error {
  explicit FixedPointDivergence(const std::string& msg)
      : Error("fixed_point_divergence", msg) {}
};

// Training loss became non-finite or grew persistently.
struct DivergenceDetected : Error {
  explicit DivergenceDetected(const std::string& msg)
      : Error("divergence_detected", msg) {}
};

// An input problem violates a structural precondition (too few points,
// non-positive weights, ...). Distinct from schema errors: the file parsed
// fine but the data cannot be solved.
struct InvalidProblem : Error {
  explicit InvalidProblem(const std::string& msg)
      : Error("invalid_problem", msg) {}
};

// Malformed input document; message names the offending field.
struct SchemaError : Error {
  explicit SchemaError(const std::string& msg) : Error("schema_error", msg) {}
};

}  // namespace propnp
