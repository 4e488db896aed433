#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ifa/data.hpp"
#include "ifa/rotation.hpp"
#include "ifa/trainer.hpp"

namespace ifa {

struct HoldoutSplit {
  Dataset train;
  Dataset holdout;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> holdout_rows;  // Omega
};

// Respondent-level split without replacement. Throws ConfigError when the
// fraction is outside (0, 1), when the holdout would be empty, or when fewer
// than min_train rows stay in the training part.
HoldoutSplit holdout_split(const Dataset& d, double fraction, std::uint64_t seed,
                           std::size_t min_train = 1);

inline constexpr std::size_t kDefaultEvalSamples = 5000;

// Per-respondent log (1/R sum_r w_r) with pointwise weights.
std::vector<double> approx_loglik_rows(const FittedModel& model, const Dataset& holdout,
                                       std::size_t R_eval, std::uint64_t seed);
// Sum over the holdout rows.
double approx_loglik(const FittedModel& model, const Dataset& holdout,
                     std::size_t R_eval = kDefaultEvalSamples, std::uint64_t seed = 0);

namespace kernels {
std::vector<double> approx_loglik_serial(const FittedModel& model, const Dataset& holdout,
                                         std::size_t R_eval, std::uint64_t seed);
std::vector<double> approx_loglik_omp(const FittedModel& model, const Dataset& holdout,
                                      std::size_t R_eval, std::uint64_t seed);
}  // namespace kernels

struct ScreePoint {
  std::size_t latent_dim = 0;
  double neg_approx_loglik = 0.0;
  double holdout_fraction = 0.0;
  std::size_t R_eval = 0;
  bool converged = false;
  std::size_t iterations = 0;
};

struct ScreeOptions {
  double holdout_fraction = 0.2;
  std::size_t R_eval = kDefaultEvalSamples;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// Fits each P on one common training split and scores the holdout. The
// template's latent_dim and seed are replaced per point.
std::vector<ScreePoint> scree_curve(const Dataset& d, const std::vector<std::size_t>& latent_dims,
                                    const FitConfig& cfg_template, const ScreeOptions& options);

// P at the largest second difference of -l(P); needs at least three points.
// Informational only.
std::optional<std::size_t> elbow_annotation(const std::vector<ScreePoint>& points);

// J x P copy of the model's loadings.
Eigen::MatrixXd loading_matrix(const ItemBank& bank);

// Posterior means mu_i, N x P.
Eigen::MatrixXd map_scores(const FittedModel& model, const Dataset& d);

// Share of log sigma outputs at or below the lower clamp over the first
// max_rows respondents. Values near 1 mean the posterior collapsed to a point
// early in fitting, which usually calls for a smaller learning rate.
double collapsed_fraction(const FittedModel& model, const Dataset& data, std::size_t max_rows = 1000);

// Estimated or true parameters of one replication, already aligned.
struct ParameterSet {
  Eigen::MatrixXd loadings;         // J x P
  std::vector<double> intercepts;   // constrained, all items concatenated
  Eigen::MatrixXd factor_corr;      // P x P
};

struct BlockSummary {
  std::string name;
  std::size_t count = 0;
  double rmse = 0.0;           // sqrt of mean per-parameter MSE
  double mean_abs_bias = 0.0;
  double median_abs_bias = 0.0;
  double median_mse = 0.0;
  double replication_rmse_mean = 0.0;  // RMSE within each replication, averaged
  double replication_rmse_sd = 0.0;
};

struct MetricReport {
  std::size_t replications = 0;
  std::vector<double> bias;  // loadings, then intercepts, then factor_corr lower triangle
  std::vector<double> mse;
  std::vector<BlockSummary> blocks;
  // Per factor, mean over replications of corr(aligned MAP score, true score).
  std::vector<double> score_correlations;
};

// Bias and MSE per parameter across replications.
MetricReport bias_mse(const std::vector<ParameterSet>& estimates, const ParameterSet& truth);

// Generic form over flat vectors. Blocks are given as (name, size) in order.
MetricReport bias_mse(const std::vector<Eigen::VectorXd>& estimates, const Eigen::VectorXd& truth,
                      const std::vector<std::pair<std::string, std::size_t>>& blocks);

Eigen::VectorXd flatten(const ParameterSet& p);

// Pearson correlation per column.
std::vector<double> column_correlations(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace ifa
