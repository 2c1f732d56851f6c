#pragma once

// Independent reference implementations used only by the tests.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "stare/matrix.hpp"
#include "stare/parse_tree.hpp"
#include "stare/rng.hpp"

namespace stare::testing {

// Every labeled ordered tree with 1..max_nodes nodes over `alphabet`.
std::vector<ParseTree> all_trees(std::size_t max_nodes, const std::vector<std::string>& alphabet);

// Random tree with exactly `nodes` nodes; labels drawn from `alphabet`.
ParseTree random_tree(Rng& rng, std::size_t nodes, const std::vector<std::string>& alphabet);

// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
// Eigenvectors are the columns of `vectors`, eigenvalues unsorted.
struct SymmetricEigen {
  std::vector<double> values;
  Matrix vectors;
};
SymmetricEigen jacobi_eigen(const Matrix& symmetric);

// Top right singular vector of W from the dense Jacobi decomposition of
// W^T W, with the first component above 1e-12 in magnitude made positive.
std::vector<double> dense_top_right_singular_vector(const Matrix& W);

// Positive and hard negatives by exhaustive search over `pool`, given the
// anchor's similarity to every corpus position.
struct OracleGroup {
  std::size_t positive = 0;
  std::vector<std::size_t> hard_negatives;
};
OracleGroup brute_force_group(const std::vector<double>& sims, std::vector<std::size_t> pool,
                              std::size_t n_hard);

// Central difference of f at params[i].
double central_difference(const std::function<double()>& f, std::vector<double>& params,
                          std::size_t i, double eps);
double central_difference(const std::function<double()>& f, double* param, double eps);

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
double relative_error(const std::vector<double>& a, const std::vector<double>& b);

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "stare-test");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

// Directory holding tests/fixtures (set at build time).
std::filesystem::path fixture_dir();

}  // namespace stare::testing
