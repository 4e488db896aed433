#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace ifa {

// N x J matrix of graded responses. Item j takes codes 0 .. C_j - 1.
struct Dataset {
  std::size_t n_respondents = 0;
  std::size_t n_items = 0;
  std::vector<int> responses;  // row-major N x J
  std::vector<int> category_counts;

  int at(std::size_t i, std::size_t j) const { return responses[i * n_items + j]; }
  std::span<const int> row(std::size_t i) const {
    return {responses.data() + i * n_items, n_items};
  }

  // Throws DataError if any invariant is violated.
  void validate() const;

  // Rows in the given order; category counts are carried over unchanged.
  Dataset select_rows(std::span<const std::size_t> rows) const;
};

// Column offset of each item block in the one-hot layout, plus the total
// width as the final entry (size J + 1).
std::vector<std::size_t> item_offsets(std::span<const int> category_counts);

struct EncodedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;        // row-major rows x cols
  std::vector<std::size_t> offsets;  // per-item block start

  double at(std::size_t i, std::size_t c) const { return values[i * cols + c]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
};

EncodedMatrix one_hot(const Dataset& d);

// Active one-hot column of every item for one respondent: offset[j] + y_ij.
void active_columns(std::span<const int> y, std::span<const std::size_t> offsets,
                    std::span<std::size_t> out);

struct CsvOptions {
  char delimiter = ',';
  // When set, replaces the inferred 1 + max(code) per column.
  std::optional<std::vector<int>> category_counts;
};

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options = {});
void write_csv(const Dataset& d, const std::filesystem::path& path, char delimiter = ',');

struct GeneratingParams {
  Eigen::MatrixXd loadings;                  // J x P
  std::vector<std::vector<double>> intercepts;  // per item, strictly decreasing
  Eigen::MatrixXd factor_corr;               // P x P
  double scaling = 1.702;

  std::size_t n_items() const { return static_cast<std::size_t>(loadings.rows()); }
  std::size_t latent_dim() const { return static_cast<std::size_t>(loadings.cols()); }
  std::vector<int> category_counts() const;

  // Throws DataError on shape or ordering problems and NumericalError when
  // factor_corr is not positive definite.
  void validate() const;
};

struct SimulatedData {
  Dataset data;
  Eigen::MatrixXd scores;  // N x P true factor scores
};

SimulatedData simulate_with_scores(const GeneratingParams& gp, std::size_t n, std::uint64_t seed);
Dataset simulate(const GeneratingParams& gp, std::size_t n, std::uint64_t seed);

// Five correlated factors, ten items each, zero cross-loadings. With
// categories = 5 every item has four intercepts; with categories = 2 each
// item keeps one of its four intercepts, chosen with `seed`.
GeneratingParams simple_structure_template(int categories = 5, std::uint64_t seed = 0);

// Smaller perfect-simple-structure design for smoke runs and tests.
GeneratingParams small_template(std::size_t n_items, std::size_t latent_dim, int categories,
                                std::uint64_t seed);

}  // namespace ifa
