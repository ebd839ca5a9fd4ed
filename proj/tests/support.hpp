#pragma once

#include "xcal/config.hpp"
#include "xcal/data.hpp"
#include "xcal/rng.hpp"
#include "xcal/types.hpp"

#include "json.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace xcal::test {

inline Vector random_vector(std::mt19937_64& gen, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (auto& x : v) x = u(gen);
  return v;
}

inline RowMatrix random_matrix(std::mt19937_64& gen, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                               double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = u(gen);
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("xcal_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Default study shrunk to a few seconds of work, with every path under `root`.
inline nlohmann::json small_config(const std::filesystem::path& root) {
  auto j = nlohmann::json::parse(default_config_json());
  j["transform"]["n_quantiles"] = 0;
  j["gp"]["n_max"] = 150;
  j["gp"]["steps"] = 30;
  j["abc"]["n_pilot"] = 100;
  j["abc"]["n_main"] = 400;
  j["abc"]["n_desired"] = 40;
  j["abc"]["zeta"] = 0.2;
  j["simulate"]["training_duration_s"] = 800;
  j["paths"] = {{"data_dir", (root / "data").string()},
                {"artifact_dir", (root / "artifacts").string()},
                {"report_dir", (root / "reports").string()}};
  for (const char* sub : {"data", "artifacts", "reports"}) std::filesystem::create_directories(root / sub);
  return j;
}

}  // namespace xcal::test
