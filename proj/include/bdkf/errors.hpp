#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace bdkf {

// Incompatible matrix or block dimensions.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid model definition or configuration (non-PSD covariance, bad counts, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A matrix that must be positive-definite or invertible is not.
class SingularityError : public std::runtime_error {
 public:
  SingularityError(const std::string& what, long block = -1)
      : std::runtime_error(what), block_(block) {}

  // Offending block index, or -1 when the failure is not tied to a block.
  long block() const noexcept { return block_; }

 private:
  long block_;
};

// Fixed-point iteration hit its iteration cap.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual, std::vector<double> tail)
      : std::runtime_error(what), residual_(residual), tail_(std::move(tail)) {}

  double residual() const noexcept { return residual_; }
  // Last few residuals, oldest first.
  const std::vector<double>& residual_tail() const noexcept { return tail_; }

 private:
  double residual_;
  std::vector<double> tail_;
};

// Input outside the domain where an analysis quantity is defined
// (unstable closed loop, defective eigenvector basis, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace bdkf
