#include "ifa/postfit.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "ifa/errors.hpp"
#include "ifa/objective.hpp"
#include "ifa/rng.hpp"

namespace ifa {

HoldoutSplit holdout_split(const Dataset& d, double fraction, std::uint64_t seed, std::size_t min_train) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("holdout fraction must lie strictly between 0 and 1, got " + std::to_string(fraction));
  }
  const std::size_t N = d.n_respondents;
  const auto n_hold = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(N)));
  if (n_hold == 0) throw ConfigError("holdout fraction leaves no holdout respondents");
  if (N - std::min(N, n_hold) < std::max<std::size_t>(min_train, 1)) {
    throw ConfigError("holdout fraction leaves fewer than " + std::to_string(std::max<std::size_t>(min_train, 1)) +
                      " training respondents");
  }
  std::vector<std::size_t> idx(N);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  HoldoutSplit s;
  s.holdout_rows.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
  s.train_rows.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());
  std::sort(s.holdout_rows.begin(), s.holdout_rows.end());
  std::sort(s.train_rows.begin(), s.train_rows.end());
  s.train = d.select_rows(s.train_rows);
  s.holdout = d.select_rows(s.holdout_rows);
  return s;
}

namespace {

// Scoring data must use the model's category counts.
Dataset conform(const FittedModel& model, const Dataset& d) {
  const auto& bank = model.item_bank;
  if (d.n_items != bank.n_items) {
    throw DataError("data has " + std::to_string(d.n_items) + " items but the model has " +
                    std::to_string(bank.n_items));
  }
  if (d.category_counts == bank.category_counts) return d;
  Dataset out = d;
  out.category_counts = bank.category_counts;
  out.validate();
  return out;
}

double respondent_loglik(const FittedModel& model, const Dataset& d, const std::vector<std::size_t>& offsets,
                         std::size_t row, std::size_t R, std::uint64_t seed, ForwardTape& tape,
                         std::vector<std::size_t>& active, std::vector<double>& lw) {
  const std::size_t P = model.item_bank.latent_dim;
  const auto y = d.row(row);
  active.resize(d.n_items);
  active_columns(y, offsets, active);
  forward_sparse(model.encoder, active, tape);
  std::vector<double> mu(tape.output.begin(), tape.output.begin() + static_cast<std::ptrdiff_t>(P));
  std::vector<double> ls(P), sigma(P), x(P), eps(P);
  for (std::size_t p = 0; p < P; ++p) {
    ls[p] = clamp_log_sigma(tape.output[P + p]);
    sigma[p] = std::exp(ls[p]);
  }
  Rng rng(derive_seed(seed, streams::kEvaluation, row));
  std::normal_distribution<double> normal;
  lw.resize(R);
  for (std::size_t r = 0; r < R; ++r) {
    for (auto& e : eps) e = normal(rng);
    reparameterize(mu, sigma, eps, x);
    lw[r] = log_weight(model.item_bank, y, x, mu, ls, WeightMode::pointwise);
  }
  return log_sum_exp(lw) - std::log(static_cast<double>(R));
}

void check_eval(std::size_t R_eval) {
  if (R_eval < 1) throw ConfigError("evaluation sample count must be at least 1");
}

}  // namespace

namespace kernels {

std::vector<double> approx_loglik_serial(const FittedModel& model, const Dataset& holdout, std::size_t R_eval,
                                         std::uint64_t seed) {
  check_eval(R_eval);
  const Dataset d = conform(model, holdout);
  const auto offsets = item_offsets(d.category_counts);
  std::vector<double> out(d.n_respondents);
  ForwardTape tape;
  std::vector<std::size_t> active;
  std::vector<double> lw;
  for (std::size_t i = 0; i < d.n_respondents; ++i) {
    out[i] = respondent_loglik(model, d, offsets, i, R_eval, seed, tape, active, lw);
  }
  return out;
}

std::vector<double> approx_loglik_omp(const FittedModel& model, const Dataset& holdout, std::size_t R_eval,
                                      std::uint64_t seed) {
  check_eval(R_eval);
  const Dataset d = conform(model, holdout);
  const auto offsets = item_offsets(d.category_counts);
  std::vector<double> out(d.n_respondents);
#pragma omp parallel
  {
    ForwardTape tape;
    std::vector<std::size_t> active;
    std::vector<double> lw;
#pragma omp for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(d.n_respondents); ++i) {
      const auto ui = static_cast<std::size_t>(i);
      out[ui] = respondent_loglik(model, d, offsets, ui, R_eval, seed, tape, active, lw);
    }
  }
  return out;
}

}  // namespace kernels

std::vector<double> approx_loglik_rows(const FittedModel& model, const Dataset& holdout, std::size_t R_eval,
                                       std::uint64_t seed) {
  return kernels::approx_loglik_omp(model, holdout, R_eval, seed);
}

double approx_loglik(const FittedModel& model, const Dataset& holdout, std::size_t R_eval, std::uint64_t seed) {
  const auto rows = approx_loglik_rows(model, holdout, R_eval, seed);
  double s = 0.0;
  for (double v : rows) s += v;
  if (!std::isfinite(s)) throw NumericalError("approximate holdout log-likelihood is not finite");
  return s;
}

namespace {

std::string at_dim(std::size_t P, const std::exception& e) {
  return "scree fit at P = " + std::to_string(P) + ": " + e.what();
}

}  // namespace

std::vector<ScreePoint> scree_curve(const Dataset& d, const std::vector<std::size_t>& latent_dims,
                                    const FitConfig& cfg_template, const ScreeOptions& options) {
  if (latent_dims.empty()) throw ConfigError("scree needs at least one latent dimension");
  for (std::size_t k = 0; k < latent_dims.size(); ++k) {
    if (latent_dims[k] < 1) throw ConfigError("scree latent dimensions must be at least 1");
    if (k > 0 && latent_dims[k] <= latent_dims[k - 1]) {
      throw ConfigError("scree latent dimensions must be strictly ascending");
    }
  }
  const auto split = holdout_split(d, options.holdout_fraction, derive_seed(options.seed, streams::kHoldout));
  std::vector<ScreePoint> points(latent_dims.size());
  std::vector<std::exception_ptr> errors(latent_dims.size());
  const auto n = static_cast<std::ptrdiff_t>(latent_dims.size());
  const int jobs = static_cast<int>(std::max<std::size_t>(options.jobs, 1));
#pragma omp parallel for schedule(dynamic, 1) num_threads(jobs) if (jobs > 1)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    try {
      FitConfig cfg = cfg_template;
      cfg.latent_dim = latent_dims[uk];
      cfg.seed = derive_seed(options.seed, streams::kScree, cfg.latent_dim);
      const auto model = fit(split.train, cfg);
      ScreePoint& pt = points[uk];
      pt.latent_dim = cfg.latent_dim;
      pt.neg_approx_loglik = -approx_loglik(model, split.holdout, options.R_eval,
                                            derive_seed(options.seed, streams::kEvaluation, cfg.latent_dim));
      pt.holdout_fraction = options.holdout_fraction;
      pt.R_eval = options.R_eval;
      pt.converged = model.converged;
      pt.iterations = model.iterations_run;
    } catch (const ConfigError& e) {
      errors[uk] = std::make_exception_ptr(ConfigError(at_dim(latent_dims[uk], e)));
    } catch (const DataError& e) {
      errors[uk] = std::make_exception_ptr(DataError(at_dim(latent_dims[uk], e)));
    } catch (const std::exception& e) {
      errors[uk] = std::make_exception_ptr(NumericalError(at_dim(latent_dims[uk], e)));
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return points;
}

std::optional<std::size_t> elbow_annotation(const std::vector<ScreePoint>& points) {
  if (points.size() < 3) return std::nullopt;
  auto sorted = points;
  std::sort(sorted.begin(), sorted.end(),
            [](const ScreePoint& a, const ScreePoint& b) { return a.latent_dim < b.latent_dim; });
  std::optional<std::size_t> best;
  double best_d2 = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < sorted.size(); ++i) {
    const double d2 = sorted[i - 1].neg_approx_loglik - 2.0 * sorted[i].neg_approx_loglik +
                      sorted[i + 1].neg_approx_loglik;
    if (d2 > best_d2) {
      best_d2 = d2;
      best = sorted[i].latent_dim;
    }
  }
  return best;
}

Eigen::MatrixXd loading_matrix(const ItemBank& bank) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      bank.loadings.data(), static_cast<Eigen::Index>(bank.n_items), static_cast<Eigen::Index>(bank.latent_dim));
}

Eigen::MatrixXd map_scores(const FittedModel& model, const Dataset& data) {
  const Dataset d = conform(model, data);
  const std::size_t P = model.item_bank.latent_dim;
  const auto offsets = item_offsets(d.category_counts);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(d.n_respondents), static_cast<Eigen::Index>(P));
#pragma omp parallel
  {
    ForwardTape tape;
    std::vector<std::size_t> active(d.n_items);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(d.n_respondents); ++i) {
      active_columns(d.row(static_cast<std::size_t>(i)), offsets, active);
      forward_sparse(model.encoder, active, tape);
      for (std::size_t p = 0; p < P; ++p) out(i, static_cast<Eigen::Index>(p)) = tape.output[p];
    }
  }
  return out;
}

double collapsed_fraction(const FittedModel& model, const Dataset& data, std::size_t max_rows) {
  const Dataset d = conform(model, data);
  const std::size_t P = model.item_bank.latent_dim;
  const std::size_t n = std::min(d.n_respondents, max_rows);
  if (n == 0 || P == 0) return 0.0;
  const auto offsets = item_offsets(d.category_counts);
  ForwardTape tape;
  std::vector<std::size_t> active(d.n_items);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    active_columns(d.row(i), offsets, active);
    forward_sparse(model.encoder, active, tape);
    for (std::size_t p = 0; p < P; ++p) hits += tape.output[P + p] <= kLogSigmaMin;
  }
  return static_cast<double>(hits) / static_cast<double>(n * P);
}

Eigen::VectorXd flatten(const ParameterSet& p) {
  const auto P = p.factor_corr.rows();
  const auto n_corr = P * (P - 1) / 2;
  Eigen::VectorXd v(p.loadings.size() + static_cast<Eigen::Index>(p.intercepts.size()) + n_corr);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < p.loadings.rows(); ++j)
    for (Eigen::Index c = 0; c < p.loadings.cols(); ++c) v[k++] = p.loadings(j, c);
  for (double a : p.intercepts) v[k++] = a;
  for (Eigen::Index r = 1; r < P; ++r)
    for (Eigen::Index c = 0; c < r; ++c) v[k++] = p.factor_corr(r, c);
  return v;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace

MetricReport bias_mse(const std::vector<Eigen::VectorXd>& estimates, const Eigen::VectorXd& truth,
                      const std::vector<std::pair<std::string, std::size_t>>& blocks) {
  if (estimates.empty()) throw ConfigError("bias and MSE need at least one replication");
  std::size_t total = 0;
  for (const auto& b : blocks) total += b.second;
  if (total != static_cast<std::size_t>(truth.size())) throw ConfigError("parameter blocks do not cover the vector");
  for (const auto& e : estimates) {
    if (e.size() != truth.size()) throw DataError("estimate and truth differ in length");
  }
  const auto n = static_cast<double>(estimates.size());
  MetricReport rep;
  rep.replications = estimates.size();
  rep.bias.assign(total, 0.0);
  rep.mse.assign(total, 0.0);
  for (const auto& e : estimates) {
    for (std::size_t k = 0; k < total; ++k) {
      const double d = e[static_cast<Eigen::Index>(k)] - truth[static_cast<Eigen::Index>(k)];
      rep.bias[k] += d;
      rep.mse[k] += d * d;
    }
  }
  for (std::size_t k = 0; k < total; ++k) {
    rep.bias[k] /= n;
    rep.mse[k] /= n;
  }
  std::size_t start = 0;
  for (const auto& [name, size] : blocks) {
    BlockSummary s;
    s.name = name;
    s.count = size;
    if (size > 0) {
      std::vector<double> abs_bias(size), mse(size);
      for (std::size_t k = 0; k < size; ++k) {
        abs_bias[k] = std::abs(rep.bias[start + k]);
        mse[k] = rep.mse[start + k];
      }
      s.rmse = std::sqrt(std::accumulate(mse.begin(), mse.end(), 0.0) / static_cast<double>(size));
      s.mean_abs_bias = std::accumulate(abs_bias.begin(), abs_bias.end(), 0.0) / static_cast<double>(size);
      s.median_abs_bias = median(abs_bias);
      s.median_mse = median(mse);
      std::vector<double> per_rep;
      for (const auto& e : estimates) {
        const auto seg = e.segment(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(size)) -
                         truth.segment(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(size));
        per_rep.push_back(std::sqrt(seg.squaredNorm() / static_cast<double>(size)));
      }
      const double m = std::accumulate(per_rep.begin(), per_rep.end(), 0.0) / n;
      double ss = 0.0;
      for (double r : per_rep) ss += (r - m) * (r - m);
      s.replication_rmse_mean = m;
      s.replication_rmse_sd = per_rep.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    }
    rep.blocks.push_back(std::move(s));
    start += size;
  }
  return rep;
}

MetricReport bias_mse(const std::vector<ParameterSet>& estimates, const ParameterSet& truth) {
  std::vector<Eigen::VectorXd> flat;
  flat.reserve(estimates.size());
  for (const auto& e : estimates) {
    if (e.loadings.rows() != truth.loadings.rows() || e.loadings.cols() != truth.loadings.cols() ||
        e.intercepts.size() != truth.intercepts.size() || e.factor_corr.rows() != truth.factor_corr.rows()) {
      throw DataError("estimate and truth have different parameter shapes");
    }
    flat.push_back(flatten(e));
  }
  const auto P = static_cast<std::size_t>(truth.factor_corr.rows());
  return bias_mse(flat, flatten(truth),
                  {{"loadings", static_cast<std::size_t>(truth.loadings.size())},
                   {"intercepts", truth.intercepts.size()},
                   {"factor_corr", P * (P - 1) / 2}});
}

std::vector<double> column_correlations(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DataError("correlation needs matching shapes");
  if (a.rows() < 2) throw DataError("correlation needs at least two rows");
  std::vector<double> out(static_cast<std::size_t>(a.cols()));
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const Eigen::VectorXd x = a.col(c).array() - a.col(c).mean();
    const Eigen::VectorXd y = b.col(c).array() - b.col(c).mean();
    const double den = std::sqrt(x.squaredNorm() * y.squaredNorm());
    if (den == 0.0) throw DataError("correlation is undefined for a constant column");
    out[static_cast<std::size_t>(c)] = x.dot(y) / den;
  }
  return out;
}

}  // namespace ifa
