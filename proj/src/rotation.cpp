#include "ifa/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ifa/rng.hpp"

namespace ifa {

GeominValue geomin_criterion(const Eigen::MatrixXd& loadings, double epsilon) {
  const auto P = static_cast<double>(loadings.cols());
  const Eigen::ArrayXXd l2 = loadings.array().square() + epsilon;
  const Eigen::ArrayXd pro = (l2.log().rowwise().sum() / P).exp();
  GeominValue out;
  out.value = pro.sum();
  out.gradient = ((2.0 / P) * (loadings.array() / l2)).colwise() * pro;
  return out;
}

namespace {

Eigen::MatrixXd normalize_columns(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c).normalize();
  return out;
}

struct Evaluation {
  Eigen::MatrixXd rotated;
  Eigen::MatrixXd grad_t;  // d Q / d T
  double value;
};

Evaluation evaluate(const Eigen::MatrixXd& a, const Eigen::MatrixXd& t, double epsilon) {
  const Eigen::MatrixXd t_inv = t.inverse();
  Evaluation e;
  e.rotated = a * t_inv.transpose();
  const auto q = geomin_criterion(e.rotated, epsilon);
  e.value = q.value;
  e.grad_t = -(e.rotated.transpose() * q.gradient * t_inv).transpose();
  return e;
}

Eigen::MatrixXd random_orthogonal(Eigen::Index p, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(p, p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < p; ++c) {
    if (r(c, c) < 0.0) q.col(c) = -q.col(c);
  }
  return q;
}

RotationSolution identity_solution(const Eigen::MatrixXd& loadings, double epsilon) {
  const auto P = loadings.cols();
  RotationSolution s;
  s.rotated_loadings = loadings;
  s.transform = Eigen::MatrixXd::Identity(P, P);
  s.factor_corr = Eigen::MatrixXd::Identity(P, P);
  s.criterion_value = geomin_criterion(loadings, epsilon).value;
  s.converged = true;
  return s;
}

void check_rotation_input(const Eigen::MatrixXd& loadings) {
  if (loadings.cols() < 1) throw ConfigError("cannot rotate a loading matrix without columns");
  if (loadings.cols() > 1 && loadings.rows() <= loadings.cols()) {
    throw ConfigError("Geomin rotation needs more items than factors");
  }
  if (!loadings.allFinite()) throw DataError("loadings to rotate must be finite");
}

}  // namespace

RotationSolution geomin_from_start(const Eigen::MatrixXd& loadings, const Eigen::MatrixXd& start,
                                   const GeominOptions& options, std::vector<double>* history) {
  check_rotation_input(loadings);
  if (loadings.cols() == 1) return identity_solution(loadings, options.epsilon);

  Eigen::MatrixXd t = normalize_columns(start);
  Evaluation cur = evaluate(loadings, t, options.epsilon);
  if (history) history->push_back(cur.value);
  double step = 1.0;
  bool converged = false;
  std::size_t iter = 0;
  for (; iter < options.max_iter; ++iter) {
    // Project the gradient onto the tangent space of unit-column matrices.
    const Eigen::RowVectorXd diag = (t.array() * cur.grad_t.array()).colwise().sum();
    const Eigen::MatrixXd gp = cur.grad_t - t * diag.asDiagonal();
    const double s = gp.norm();
    if (s < options.tol) {
      converged = true;
      break;
    }
    step *= 2.0;
    Eigen::MatrixXd t_new;
    Evaluation next;
    bool accepted = false;
    for (int half = 0; half <= 10; ++half) {
      t_new = normalize_columns(t - step * gp);
      next = evaluate(loadings, t_new, options.epsilon);
      if (cur.value - next.value > 0.5 * s * s * step) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    // Without sufficient decrease, still take a step that does not raise the
    // criterion; otherwise the iteration has stalled.
    if (!accepted && !(next.value <= cur.value)) break;
    t = std::move(t_new);
    cur = std::move(next);
    if (history) history->push_back(cur.value);
  }

  RotationSolution sol;
  sol.rotated_loadings = cur.rotated;
  sol.transform = t;
  sol.factor_corr = t.transpose() * t;
  sol.factor_corr.diagonal().setOnes();
  sol.criterion_value = cur.value;
  sol.iterations = iter;
  sol.converged = converged;
  return sol;
}

RotationSolution geomin_rotate(const Eigen::MatrixXd& loadings, const GeominOptions& options) {
  check_rotation_input(loadings);
  if (loadings.cols() == 1) return identity_solution(loadings, options.epsilon);
  const std::size_t n = std::max<std::size_t>(options.n_starts, 1);
  const auto P = loadings.cols();
  std::vector<RotationSolution> sols(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(n); ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const Eigen::MatrixXd start = uk == 0 ? Eigen::MatrixXd::Identity(P, P)
                                          : random_orthogonal(P, derive_seed(options.seed, streams::kRotation, uk));
    sols[uk] = geomin_from_start(loadings, start, options);
    sols[uk].best_start = uk;
  }
  std::size_t best = n;
  std::size_t best_any = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (sols[k].criterion_value < sols[best_any].criterion_value) best_any = k;
    if (sols[k].converged && (best == n || sols[k].criterion_value < sols[best].criterion_value)) best = k;
  }
  if (best == n) {
    throw RotationError("Geomin rotation did not converge from any of " + std::to_string(n) + " starts",
                        sols[best_any]);
  }
  return sols[best];
}

Eigen::MatrixXd rotate_scores(const Eigen::MatrixXd& scores, const RotationSolution& rotation) {
  return scores * rotation.transform;
}

std::vector<std::size_t> min_cost_assignment_exhaustive(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  std::vector<std::size_t> perm(n), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t r = 0; r < n; ++r) c += cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(perm[r]));
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<std::size_t> min_cost_assignment(const Eigen::MatrixXd& cost) {
  if (cost.rows() != cost.cols()) throw ConfigError("assignment needs a square cost matrix");
  const auto n = static_cast<std::size_t>(cost.rows());
  if (n <= 8) return min_cost_assignment_exhaustive(cost);
  // Hungarian method with potentials, 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> result(n);
  for (std::size_t j = 1; j <= n; ++j) result[match[j] - 1] = j - 1;
  return result;
}

double tucker_congruence(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.squaredNorm();
  const double nb = b.squaredNorm();
  if (na == 0.0 || nb == 0.0) throw DataError("Tucker congruence is undefined for a zero vector");
  return a.dot(b) / std::sqrt(na * nb);
}

std::vector<double> column_congruence(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DataError("congruence needs matching shapes");
  std::vector<double> out(static_cast<std::size_t>(a.cols()));
  for (Eigen::Index c = 0; c < a.cols(); ++c) out[static_cast<std::size_t>(c)] = tucker_congruence(a.col(c), b.col(c));
  return out;
}

Eigen::MatrixXd apply_alignment(const Eigen::MatrixXd& m, const AlignmentRecord& record) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index a = 0; a < m.cols(); ++a) {
    const auto src = static_cast<Eigen::Index>(record.permutation[static_cast<std::size_t>(a)]);
    out.col(a) = static_cast<double>(record.signs[static_cast<std::size_t>(src)]) * m.col(src);
  }
  return out;
}

Alignment align(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& comparison) {
  if (reference.rows() != comparison.rows() || reference.cols() != comparison.cols()) {
    throw DataError("align needs matrices of the same shape");
  }
  const auto P = comparison.cols();
  AlignmentRecord rec;
  // Each column pair is compared under the sign that brings it closer, so the
  // reference itself may carry columns with negative sums.
  Eigen::MatrixXd cost(P, P);
  for (Eigen::Index a = 0; a < P; ++a)
    for (Eigen::Index b = 0; b < P; ++b) {
      const double s = reference.col(a).dot(comparison.col(b)) < 0.0 ? -1.0 : 1.0;
      cost(a, b) = (reference.col(a) - s * comparison.col(b)).squaredNorm();
    }
  rec.permutation = min_cost_assignment(cost);
  rec.signs.assign(static_cast<std::size_t>(P), 1);
  for (Eigen::Index a = 0; a < P; ++a) {
    const auto b = static_cast<Eigen::Index>(rec.permutation[static_cast<std::size_t>(a)]);
    if (reference.col(a).dot(comparison.col(b)) < 0.0) rec.signs[static_cast<std::size_t>(b)] = -1;
  }

  Alignment out;
  out.aligned = apply_alignment(comparison, rec);
  rec.mse = (out.aligned - reference).squaredNorm() / static_cast<double>(reference.size());
  rec.congruence = column_congruence(reference, out.aligned);
  rec.mean_congruence =
      std::accumulate(rec.congruence.begin(), rec.congruence.end(), 0.0) / static_cast<double>(P);
  out.record = std::move(rec);
  return out;
}

Eigen::MatrixXd align_correlations(const Eigen::MatrixXd& phi, const AlignmentRecord& record) {
  const auto P = phi.rows();
  Eigen::MatrixXd out(P, P);
  for (Eigen::Index a = 0; a < P; ++a) {
    const auto pa = static_cast<Eigen::Index>(record.permutation[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < P; ++b) {
      const auto pb = static_cast<Eigen::Index>(record.permutation[static_cast<std::size_t>(b)]);
      out(a, b) = record.signs[static_cast<std::size_t>(pa)] * record.signs[static_cast<std::size_t>(pb)] * phi(pa, pb);
    }
  }
  return out;
}

CongruenceAggregate parse_congruence_aggregate(std::string_view name) {
  if (name == "mean") return CongruenceAggregate::mean;
  if (name == "min") return CongruenceAggregate::min;
  if (name == "matrix") return CongruenceAggregate::matrix;
  throw ConfigError("unknown congruence aggregate '" + std::string(name) + "' (mean, min, matrix)");
}

double aggregate_congruence(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, CongruenceAggregate how) {
  if (how == CongruenceAggregate::matrix) {
    const Eigen::Map<const Eigen::VectorXd> va(a.data(), a.size());
    const Eigen::Map<const Eigen::VectorXd> vb(b.data(), b.size());
    return tucker_congruence(va, vb);
  }
  const auto per = column_congruence(a, b);
  if (how == CongruenceAggregate::min) return *std::min_element(per.begin(), per.end());
  return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

bool equivalent(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, CongruenceAggregate how,
                double threshold) {
  return aggregate_congruence(a, b, how) > threshold;
}

}  // namespace ifa
