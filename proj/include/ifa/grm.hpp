#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ifa {

inline constexpr double kDefaultScaling = 1.702;

// Item parameters of the graded response model.
//
// Intercepts are stored unconstrained: for item j the first raw value is
// alpha_{j,1} itself and each further raw value u gives the gap
// alpha_{j,k-1} - alpha_{j,k} = exp(u). Any raw vector therefore maps to a
// strictly decreasing intercept sequence, which keeps every category
// probability positive.
struct ItemBank {
  std::size_t n_items = 0;
  std::size_t latent_dim = 0;
  std::vector<double> loadings;        // J x P row-major
  std::vector<double> raw_intercepts;  // item j occupies [intercept_offsets[j], +C_j - 1)
  std::vector<int> category_counts;
  std::vector<std::size_t> intercept_offsets;  // size J + 1
  double scaling = kDefaultScaling;

  std::span<const double> loading_row(std::size_t j) const {
    return {loadings.data() + j * latent_dim, latent_dim};
  }
  std::span<double> loading_row(std::size_t j) {
    return {loadings.data() + j * latent_dim, latent_dim};
  }
  std::span<const double> raw(std::size_t j) const {
    return {raw_intercepts.data() + intercept_offsets[j],
            intercept_offsets[j + 1] - intercept_offsets[j]};
  }
  std::vector<double> intercepts(std::size_t j) const;
};

std::vector<double> constrain_intercepts(std::span<const double> raw);
// Inverse of constrain_intercepts. Throws DataError unless strictly decreasing.
std::vector<double> unconstrain_intercepts(std::span<const double> ordered);

// Pr(y >= k | x) for k = 0 .. C_j.
std::vector<double> boundary_probs(const ItemBank& bank, std::size_t item, std::span<const double> x);
// Pr(y = k | x) for k = 0 .. C_j - 1.
std::vector<double> category_probs(const ItemBank& bank, std::size_t item, std::span<const double> x);

double cond_log_lik(const ItemBank& bank, std::span<const double> x, std::span<const int> y);

struct CondLogLikGrad {
  std::vector<double> loadings;        // J x P
  std::vector<double> raw_intercepts;  // same layout as ItemBank
  std::vector<double> x;               // P
};
// Value and analytic gradient of cond_log_lik.
double cond_log_lik_grad(const ItemBank& bank, std::span<const double> x, std::span<const int> y,
                         CondLogLikGrad& grad);

// Xavier-uniform loadings; intercepts at equal logistic-quantile spacing so
// that Pr(y >= k | x = 0) = 1 - k / C_j.
ItemBank init_item_bank(std::size_t n_items, std::size_t latent_dim,
                        std::span<const int> category_counts, std::uint64_t seed,
                        double scaling = kDefaultScaling);

// Builds a bank from constrained (strictly decreasing) intercepts.
ItemBank make_item_bank(std::size_t latent_dim, std::span<const double> loadings,
                        const std::vector<std::vector<double>>& intercepts,
                        double scaling = kDefaultScaling);

namespace grm {

// log(sigmoid(a)) and sigmoid(a) from a single exp.
struct LogSigmoid {
  double log_value;
  double value;
};
inline LogSigmoid log_sigmoid(double a) noexcept {
  const double e = std::exp(-std::abs(a));
  const double l = std::log1p(e);
  if (a >= 0.0) return {-l, 1.0 / (1.0 + e)};
  return {a - l, e / (1.0 + e)};
}

// Per-item quantities that depend on the intercepts only. For adjacent
// boundaries a_k > a_{k+1} with a_k - a_{k+1} = D * gap_k,
//   sigmoid(a_k) - sigmoid(a_{k+1}) = sigmoid(a_k) sigmoid(-a_{k+1}) (1 - exp(-D gap_k)),
// so log pi_k needs two log-sigmoids plus a constant log(1 - exp(-D gap_k)).
struct ItemCache {
  std::vector<double> alpha;        // constrained intercepts, all items concatenated
  std::vector<double> log_gap;      // log(-expm1(-D gap_k)), one per interior category
  std::vector<double> dlog_gap;     // d log_gap / d gap_k = D / expm1(D gap_k)
  std::vector<std::size_t> offsets; // same as ItemBank::intercept_offsets
};
ItemCache make_cache(const ItemBank& bank);

// log pi for item j, category y, given eta = beta_j . x. Writes the partial
// derivatives w.r.t. eta and w.r.t. the (at most two) intercepts involved.
struct CategoryTerm {
  double log_prob;
  double d_eta;
  double d_alpha_lo;  // w.r.t. alpha_{j,y}      (absent when y == 0)
  double d_alpha_hi;  // w.r.t. alpha_{j,y+1}    (absent when y == C_j - 1)
};
inline CategoryTerm category_term(const ItemCache& cache, std::size_t j, int n_categories, int y,
                                  double eta, double scaling) noexcept {
  const double* alpha = cache.alpha.data() + cache.offsets[j];
  const int last = n_categories - 1;
  CategoryTerm t{0.0, 0.0, 0.0, 0.0};
  // Boundary k (1-based) lives at alpha[k - 1].
  if (y > 0) {
    const auto s = log_sigmoid(scaling * (alpha[y - 1] + eta));
    t.log_prob += s.log_value;
    const double g = scaling * (1.0 - s.value);
    t.d_eta += g;
    t.d_alpha_lo += g;
  }
  if (y < last) {
    const auto s = log_sigmoid(-scaling * (alpha[y] + eta));
    t.log_prob += s.log_value;
    const double g = -scaling * (1.0 - s.value);
    t.d_eta += g;
    t.d_alpha_hi += g;
  }
  if (y > 0 && y < last) {
    const std::size_t g = cache.offsets[j] - j + static_cast<std::size_t>(y - 1);
    t.log_prob += cache.log_gap[g];
    t.d_alpha_lo += cache.dlog_gap[g];
    t.d_alpha_hi -= cache.dlog_gap[g];
  }
  return t;
}

// Chain rule from constrained-intercept partials of one item to its raw
// parameters, accumulated into raw_out.
void accumulate_raw_grad(std::span<const double> raw, std::span<const double> d_alpha,
                         std::span<double> raw_out);

}  // namespace grm

}  // namespace ifa
