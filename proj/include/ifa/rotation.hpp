#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ifa/errors.hpp"

namespace ifa {

// Oblique rotation result. With unrotated loadings A and transform T (unit
// length columns), rotated loadings are L = A (T^T)^{-1}, so A = L T^T, and
// the factor correlation matrix is Phi = T^T T.
struct RotationSolution {
  Eigen::MatrixXd rotated_loadings;
  Eigen::MatrixXd factor_corr;
  Eigen::MatrixXd transform;
  double criterion_value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t best_start = 0;
};

struct GeominOptions {
  double epsilon = 0.01;
  std::size_t n_starts = 30;
  double tol = 1e-5;
  std::size_t max_iter = 500;
  std::uint64_t seed = 0;
};

struct GeominValue {
  double value;
  Eigen::MatrixXd gradient;  // d Q / d L
};
// Q(L) = sum_j (prod_p (l_jp^2 + eps))^(1/P)
GeominValue geomin_criterion(const Eigen::MatrixXd& loadings, double epsilon);

// Raised when no start reaches tol within max_iter; carries the best
// partial solution.
class RotationError : public NumericalError {
 public:
  RotationError(const std::string& what, RotationSolution best)
      : NumericalError(what), best_(std::move(best)) {}
  const RotationSolution& best() const { return best_; }

 private:
  RotationSolution best_;
};

// Gradient-projection oblique Geomin from a single starting transform.
// The criterion trace is appended to `history` when given.
RotationSolution geomin_from_start(const Eigen::MatrixXd& loadings, const Eigen::MatrixXd& start,
                                   const GeominOptions& options,
                                   std::vector<double>* history = nullptr);

// Best of n_starts: start 0 is the identity, the rest are random orthogonal
// matrices. Starts run in parallel; ties break by start index.
RotationSolution geomin_rotate(const Eigen::MatrixXd& loadings, const GeominOptions& options = {});

// Factor scores expressed in the rotated basis: Z = X T, so that L z = A x.
Eigen::MatrixXd rotate_scores(const Eigen::MatrixXd& scores, const RotationSolution& rotation);

struct AlignmentRecord {
  std::vector<std::size_t> permutation;  // aligned column a = comparison column permutation[a]
  std::vector<int> signs;                // sign applied to comparison column p
  double mse = 0.0;
  std::vector<double> congruence;        // per aligned column
  double mean_congruence = 0.0;
};

struct Alignment {
  AlignmentRecord record;
  Eigen::MatrixXd aligned;
};

// Picks the column permutation and signs minimizing element-wise MSE
// against the reference. A comparison column is negated when that brings it
// closer to its matched reference column; against a reference with positive
// column sums this flips columns whose sum is negative.
Alignment align(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& comparison);

// Applies a record's signs and permutation to columns of any N x P matrix
// (e.g. factor scores).
Eigen::MatrixXd apply_alignment(const Eigen::MatrixXd& m, const AlignmentRecord& record);

// Applies signs and permutation to both rows and columns of Phi.
Eigen::MatrixXd align_correlations(const Eigen::MatrixXd& phi, const AlignmentRecord& record);

double tucker_congruence(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
std::vector<double> column_congruence(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

enum class CongruenceAggregate { mean, min, matrix };
CongruenceAggregate parse_congruence_aggregate(std::string_view name);

inline constexpr double kEquivalenceThreshold = 0.98;

// Congruence of two aligned matrices under the chosen aggregate.
double aggregate_congruence(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            CongruenceAggregate how);
bool equivalent(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                CongruenceAggregate how = CongruenceAggregate::mean,
                double threshold = kEquivalenceThreshold);

// Optimal assignment on a square cost matrix (row r -> column result[r]).
std::vector<std::size_t> min_cost_assignment(const Eigen::MatrixXd& cost);
std::vector<std::size_t> min_cost_assignment_exhaustive(const Eigen::MatrixXd& cost);

}  // namespace ifa
