#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "adasim/error.hpp"
#include "adasim/numcore.hpp"

// Fails unless `stmt` throws adasim::Error of the given kind.
#define EXPECT_ADASIM_ERROR(stmt, expected_kind)                                   \
  do {                                                                             \
    try {                                                                          \
      stmt;                                                                        \
      ADD_FAILURE() << "expected " << adasim::to_string(expected_kind) << " from " \
                    << #stmt;                                                      \
    } catch (const adasim::Error& e_) {                                            \
      EXPECT_EQ(e_.kind(), expected_kind) << e_.what();                            \
    }                                                                              \
  } while (0)

namespace testutil {

inline adasim::Vector random_vector(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  adasim::Vector v(n);
  for (int k = 0; k < n; ++k) v[k] = g(rng);
  return v;
}

inline adasim::Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  adasim::Matrix m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = g(rng);
  return m;
}

inline adasim::MlpEncoder random_mlp(std::vector<int> widths, std::uint64_t seed,
                                     adasim::Activation hidden = adasim::Activation::kRelu) {
  adasim::Rng rng(seed);
  return adasim::MlpEncoder::random(widths, hidden, adasim::Activation::kIdentity, rng);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("adasim-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
