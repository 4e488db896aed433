#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ifa/data.hpp"
#include "ifa/postfit.hpp"
#include "ifa/rotation.hpp"
#include "ifa/trainer.hpp"

namespace ifa {

// Geomin-rotates a fitted model and aligns it to reference loadings.
struct AlignedEstimate {
  ParameterSet parameters;
  RotationSolution rotation;
  AlignmentRecord alignment;
};
AlignedEstimate align_to_reference(const FittedModel& model, const Eigen::MatrixXd& reference,
                                   const GeominOptions& rotation);

// MAP scores rotated and aligned the same way as the loadings.
Eigen::MatrixXd aligned_scores(const FittedModel& model, const Dataset& d,
                               const AlignedEstimate& estimate);

struct ReplicationOptions {
  GeneratingParams truth;
  std::size_t n_respondents = 500;
  std::size_t replications = 2;
  FitConfig fit;  // latent_dim defaults to the truth's when 0; seed is replaced
  GeominOptions rotation;
  std::uint64_t root_seed = 0;
  std::size_t jobs = 1;
};

struct ReplicationResult {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  ParameterSet aligned;
  std::vector<double> score_correlations;
  double mean_congruence = 0.0;
  double loadings_mse = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  double seconds = 0.0;
};

struct StudyReport {
  MetricReport metrics;
  std::vector<ReplicationResult> replications;
  std::size_t failed = 0;
};

// Seed of replication `index`: derive_seed(root, streams::kReplication, index).
ReplicationResult run_replication(const ReplicationOptions& options, std::size_t index);

// Runs all replications on `jobs` worker threads. Results are ordered by
// index and do not depend on jobs. Failed replications are excluded from the
// metrics and counted.
StudyReport run_replications(const ReplicationOptions& options);

// Number of worker threads honoring the IFA_THREADS cap.
std::size_t effective_jobs(std::size_t requested);

}  // namespace ifa
