#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dhpe {

/// Raised when an iteration produces non-finite values or an inner solver
/// exhausts its budget without meeting its tolerance.
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the inner loop of an HPE iteration cannot certify a pair
/// within the configured number of refinements.
class certification_failure : public std::runtime_error {
 public:
  certification_failure(std::size_t iteration, double lhs, double rhs)
      : std::runtime_error("certification failed at outer iteration " +
                           std::to_string(iteration) + " (lhs=" +
                           std::to_string(lhs) + ", rhs=" +
                           std::to_string(rhs) + ")"),
        iteration_(iteration),
        lhs_(lhs),
        rhs_(rhs) {}

  std::size_t iteration() const noexcept { return iteration_; }
  double lhs() const noexcept { return lhs_; }
  double rhs() const noexcept { return rhs_; }

 private:
  std::size_t iteration_;
  double lhs_;
  double rhs_;
};

}  // namespace dhpe
