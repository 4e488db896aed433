#include "ifa/study.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ifa/errors.hpp"
#include "ifa/rng.hpp"

namespace ifa {

AlignedEstimate align_to_reference(const FittedModel& model, const Eigen::MatrixXd& reference,
                                   const GeominOptions& rotation) {
  const auto& bank = model.item_bank;
  const Eigen::MatrixXd loadings = loading_matrix(bank);
  if (reference.rows() != loadings.rows() || reference.cols() != loadings.cols()) {
    throw DataError("reference loadings do not match the model's J x P shape");
  }
  AlignedEstimate out;
  try {
    out.rotation = geomin_rotate(loadings, rotation);
  } catch (const RotationError& e) {
    out.rotation = e.best();
  }
  auto al = align(reference, out.rotation.rotated_loadings);
  out.alignment = al.record;
  out.parameters.loadings = std::move(al.aligned);
  out.parameters.factor_corr = align_correlations(out.rotation.factor_corr, out.alignment);
  for (std::size_t j = 0; j < bank.n_items; ++j) {
    for (double a : bank.intercepts(j)) out.parameters.intercepts.push_back(a);
  }
  return out;
}

Eigen::MatrixXd aligned_scores(const FittedModel& model, const Dataset& d, const AlignedEstimate& estimate) {
  return apply_alignment(rotate_scores(map_scores(model, d), estimate.rotation), estimate.alignment);
}

namespace {

ParameterSet truth_set(const GeneratingParams& gp) {
  ParameterSet t;
  t.loadings = gp.loadings;
  t.factor_corr = gp.factor_corr;
  for (const auto& item : gp.intercepts) t.intercepts.insert(t.intercepts.end(), item.begin(), item.end());
  return t;
}

}  // namespace

ReplicationResult run_replication(const ReplicationOptions& options, std::size_t index) {
  ReplicationResult res;
  res.index = index;
  res.seed = derive_seed(options.root_seed, streams::kReplication, index);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const auto sim = simulate_with_scores(options.truth, options.n_respondents,
                                          derive_seed(res.seed, streams::kSimulate));
    FitConfig cfg = options.fit;
    if (cfg.latent_dim == 0) cfg.latent_dim = options.truth.latent_dim();
    cfg.scaling = options.truth.scaling;
    cfg.seed = res.seed;
    const auto model = fit(sim.data, cfg);
    GeominOptions rot = options.rotation;
    rot.seed = derive_seed(res.seed, streams::kRotation);
    const auto est = align_to_reference(model, options.truth.loadings, rot);
    res.aligned = est.parameters;
    res.mean_congruence = est.alignment.mean_congruence;
    res.loadings_mse = est.alignment.mse;
    res.score_correlations = column_correlations(aligned_scores(model, sim.data, est), sim.scores);
    res.converged = model.converged;
    res.iterations = model.iterations_run;
    res.ok = true;
  } catch (const std::exception& e) {
    res.error = e.what();
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

StudyReport run_replications(const ReplicationOptions& options) {
  if (options.replications < 1) throw ConfigError("at least one replication is required");
  options.truth.validate();
  const std::size_t n = options.replications;
  const std::size_t jobs = std::min(effective_jobs(options.jobs), n);
  StudyReport report;
  report.replications.resize(n);
  if (jobs <= 1) {
    for (std::size_t k = 0; k < n; ++k) report.replications[k] = run_replication(options, k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
#ifdef _OPENMP
        omp_set_num_threads(1);
#endif
        for (std::size_t k = next++; k < n; k = next++) report.replications[k] = run_replication(options, k);
      });
    }
    for (auto& t : workers) t.join();
  }

  std::vector<ParameterSet> ok;
  const std::size_t P = options.truth.latent_dim();
  std::vector<double> corr_sum(P, 0.0);
  for (const auto& r : report.replications) {
    if (!r.ok) {
      ++report.failed;
      continue;
    }
    ok.push_back(r.aligned);
    for (std::size_t p = 0; p < P; ++p) corr_sum[p] += r.score_correlations[p];
  }
  if (ok.empty()) {
    throw NumericalError("every replication failed; first error: " + report.replications.front().error);
  }
  report.metrics = bias_mse(ok, truth_set(options.truth));
  report.metrics.score_correlations.resize(P);
  for (std::size_t p = 0; p < P; ++p) report.metrics.score_correlations[p] = corr_sum[p] / static_cast<double>(ok.size());
  return report;
}

std::size_t effective_jobs(std::size_t requested) {
  std::size_t jobs = requested;
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("IFA_THREADS"); env && *env) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (*end != '\0' || cap < 1) throw ConfigError("IFA_THREADS must be a positive integer, got '" + std::string(env) + "'");
    jobs = std::min(jobs, static_cast<std::size_t>(cap));
  }
  return jobs;
}

}  // namespace ifa
