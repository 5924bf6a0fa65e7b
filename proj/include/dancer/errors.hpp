#pragma once

#include <stdexcept>
#include <string>

namespace dancer {

/// Malformed or missing input data (datasets, images, checkpoints, configs).
/// CLI maps this to exit code 2.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values where finite ones are required (diverged training,
/// non-finite loss in a gradient check). CLI maps this to exit code 3.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dancer
