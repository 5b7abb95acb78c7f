#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace overlap {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input (CSV schema, shape mismatch, out-of-range values).
class InputError : public Error {
 public:
  using Error::Error;
};

// The requested program has no finite, well-posed answer (zero weights, empty arm, ...).
class DegenerateProblem : public Error {
 public:
  using Error::Error;
};

// Numerical solver did not reach its tolerance.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double gap) : Error(what), gap_(gap) {}
  double duality_gap() const noexcept { return gap_; }

 private:
  double gap_;
};

// Transportation instance with no feasible matrix; carries the rows of a violated cut.
class InfeasibleTransport : public Error {
 public:
  InfeasibleTransport(const std::string& what, std::vector<std::size_t> cut_rows,
                      double routed, double required)
      : Error(what), cut_rows_(std::move(cut_rows)), routed_(routed), required_(required) {}

  const std::vector<std::size_t>& cut_rows() const noexcept { return cut_rows_; }
  double routed() const noexcept { return routed_; }
  double required() const noexcept { return required_; }

 private:
  std::vector<std::size_t> cut_rows_;
  double routed_;
  double required_;
};

}  // namespace overlap
