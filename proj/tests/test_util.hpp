#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "dancer/grad_check.hpp"

namespace testutil {

/// 32-bit gradient checks use the float-optimal central-difference step
/// (~cbrt(machine epsilon) = 4e-3); the library default of 1e-3 stays for
/// callers but amplifies rounding noise in the quotient at this precision.
inline dancer::GradCheckOpts<float> f32_opts() {
  dancer::GradCheckOpts<float> o;
  o.epsilon = 4e-3f;
  return o;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("dancer_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace testutil
