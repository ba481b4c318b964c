#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace dgpmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Raised when a factorization or integration cannot be stabilized.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when an object is used in a state that does not permit the call
// (e.g. drawing from an empty reservoir).
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Raised for malformed run configuration (files or flags).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-fatal events collected by long-running routines.
using Warnings = std::vector<std::string>;

}  // namespace dgpmpc
