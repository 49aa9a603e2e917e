#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "spim/linalg.hpp"

namespace testing_util {

inline spim::CMatrix random_cmatrix(int rows, int cols, std::mt19937_64 &rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  spim::CMatrix m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) {
      m(i, j) = spim::cplx(g(rng), g(rng));
    }
  }
  return m;
}

inline spim::CVector random_cvector(int n, std::mt19937_64 &rng) {
  return random_cmatrix(n, 1, rng).col(0);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string &name) {
  const auto p = std::filesystem::temp_directory_path() / ("spim_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

} // namespace testing_util
