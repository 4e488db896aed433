#include "ifa/grm.hpp"

#include <cmath>
#include <string>

#include "ifa/errors.hpp"
#include "ifa/rng.hpp"

namespace ifa {

std::vector<double> constrain_intercepts(std::span<const double> raw) {
  std::vector<double> alpha(raw.size());
  if (raw.empty()) return alpha;
  alpha[0] = raw[0];
  for (std::size_t k = 1; k < raw.size(); ++k) alpha[k] = alpha[k - 1] - std::exp(raw[k]);
  return alpha;
}

std::vector<double> unconstrain_intercepts(std::span<const double> ordered) {
  std::vector<double> raw(ordered.size());
  if (ordered.empty()) return raw;
  raw[0] = ordered[0];
  for (std::size_t k = 1; k < ordered.size(); ++k) {
    const double gap = ordered[k - 1] - ordered[k];
    if (!(gap > 0.0)) throw DataError("intercepts must be strictly decreasing");
    raw[k] = std::log(gap);
  }
  return raw;
}

std::vector<double> ItemBank::intercepts(std::size_t j) const { return constrain_intercepts(raw(j)); }

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) s += a[p] * b[p];
  return s;
}

}  // namespace

std::vector<double> boundary_probs(const ItemBank& bank, std::size_t item, std::span<const double> x) {
  const auto alpha = bank.intercepts(item);
  const double eta = dot(bank.loading_row(item), x);
  std::vector<double> b(alpha.size() + 2);
  b.front() = 1.0;
  b.back() = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    b[k + 1] = grm::log_sigmoid(bank.scaling * (alpha[k] + eta)).value;
  }
  return b;
}

std::vector<double> category_probs(const ItemBank& bank, std::size_t item, std::span<const double> x) {
  // Differences of boundaries computed as exp(log pi) to keep tiny cells
  // positive instead of cancelling to zero.
  const auto cache = grm::make_cache(bank);
  const double eta = dot(bank.loading_row(item), x);
  const int C = bank.category_counts[item];
  std::vector<double> pi(static_cast<std::size_t>(C));
  for (int y = 0; y < C; ++y) {
    pi[static_cast<std::size_t>(y)] = std::exp(grm::category_term(cache, item, C, y, eta, bank.scaling).log_prob);
  }
  return pi;
}

double cond_log_lik(const ItemBank& bank, std::span<const double> x, std::span<const int> y) {
  const auto cache = grm::make_cache(bank);
  double ll = 0.0;
  for (std::size_t j = 0; j < bank.n_items; ++j) {
    const double eta = dot(bank.loading_row(j), x);
    ll += grm::category_term(cache, j, bank.category_counts[j], y[j], eta, bank.scaling).log_prob;
  }
  return ll;
}

double cond_log_lik_grad(const ItemBank& bank, std::span<const double> x, std::span<const int> y,
                         CondLogLikGrad& grad) {
  const auto cache = grm::make_cache(bank);
  const std::size_t P = bank.latent_dim;
  grad.loadings.assign(bank.loadings.size(), 0.0);
  grad.raw_intercepts.assign(bank.raw_intercepts.size(), 0.0);
  grad.x.assign(P, 0.0);
  std::vector<double> d_alpha;
  double ll = 0.0;
  for (std::size_t j = 0; j < bank.n_items; ++j) {
    const auto beta = bank.loading_row(j);
    const double eta = dot(beta, x);
    const int yj = y[j];
    const auto t = grm::category_term(cache, j, bank.category_counts[j], yj, eta, bank.scaling);
    ll += t.log_prob;
    for (std::size_t p = 0; p < P; ++p) {
      grad.loadings[j * P + p] += t.d_eta * x[p];
      grad.x[p] += t.d_eta * beta[p];
    }
    const auto raw = bank.raw(j);
    d_alpha.assign(raw.size(), 0.0);
    if (yj > 0) d_alpha[static_cast<std::size_t>(yj - 1)] += t.d_alpha_lo;
    if (yj < bank.category_counts[j] - 1) d_alpha[static_cast<std::size_t>(yj)] += t.d_alpha_hi;
    grm::accumulate_raw_grad(raw, d_alpha,
                             std::span<double>(grad.raw_intercepts).subspan(bank.intercept_offsets[j], raw.size()));
  }
  return ll;
}

ItemBank make_item_bank(std::size_t latent_dim, std::span<const double> loadings,
                        const std::vector<std::vector<double>>& intercepts, double scaling) {
  ItemBank bank;
  bank.n_items = intercepts.size();
  bank.latent_dim = latent_dim;
  bank.scaling = scaling;
  if (loadings.size() != bank.n_items * latent_dim) throw DataError("loadings must be J x P");
  bank.loadings.assign(loadings.begin(), loadings.end());
  bank.intercept_offsets.assign(1, 0);
  for (const auto& a : intercepts) {
    if (a.empty()) throw DataError("every item needs at least one intercept");
    const auto raw = unconstrain_intercepts(a);
    bank.raw_intercepts.insert(bank.raw_intercepts.end(), raw.begin(), raw.end());
    bank.category_counts.push_back(static_cast<int>(a.size()) + 1);
    bank.intercept_offsets.push_back(bank.raw_intercepts.size());
  }
  return bank;
}

ItemBank init_item_bank(std::size_t n_items, std::size_t latent_dim,
                        std::span<const int> category_counts, std::uint64_t seed, double scaling) {
  if (n_items == 0 || latent_dim == 0) throw ConfigError("init_item_bank needs J, P >= 1");
  if (category_counts.size() != n_items) throw ConfigError("need one category count per item");
  if (!(scaling > 0.0)) throw ConfigError("scaling constant D must be positive");

  Rng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(n_items + latent_dim));
  std::uniform_real_distribution<double> unif(-bound, bound);
  std::vector<double> loadings(n_items * latent_dim);
  for (auto& b : loadings) b = unif(rng);

  std::vector<std::vector<double>> intercepts;
  intercepts.reserve(n_items);
  for (std::size_t j = 0; j < n_items; ++j) {
    const int C = category_counts[j];
    if (C < 2) throw ConfigError("item " + std::to_string(j) + " needs at least 2 categories");
    std::vector<double> a(static_cast<std::size_t>(C - 1));
    for (int k = 1; k < C; ++k) {
      const double q = 1.0 - static_cast<double>(k) / C;
      a[static_cast<std::size_t>(k - 1)] = std::log(q / (1.0 - q)) / scaling;
    }
    intercepts.push_back(std::move(a));
  }
  return make_item_bank(latent_dim, loadings, intercepts, scaling);
}

namespace grm {

ItemCache make_cache(const ItemBank& bank) {
  ItemCache c;
  c.offsets = bank.intercept_offsets;
  c.alpha.resize(bank.raw_intercepts.size());
  c.log_gap.reserve(bank.raw_intercepts.size());
  c.dlog_gap.reserve(bank.raw_intercepts.size());
  for (std::size_t j = 0; j < bank.n_items; ++j) {
    const auto raw = bank.raw(j);
    double* alpha = c.alpha.data() + bank.intercept_offsets[j];
    alpha[0] = raw[0];
    for (std::size_t k = 1; k < raw.size(); ++k) {
      const double gap = std::exp(raw[k]);
      alpha[k] = alpha[k - 1] - gap;
      const double dg = bank.scaling * gap;
      c.log_gap.push_back(std::log(-std::expm1(-dg)));
      c.dlog_gap.push_back(bank.scaling / std::expm1(dg));
    }
  }
  return c;
}

void accumulate_raw_grad(std::span<const double> raw, std::span<const double> d_alpha,
                         std::span<double> raw_out) {
  // alpha_k = raw_0 - sum_{m=1..k} exp(raw_m):
  //   d/d raw_0 = sum_k d_alpha_k,  d/d raw_m = -exp(raw_m) * sum_{k>=m} d_alpha_k.
  double tail = 0.0;
  for (std::size_t k = raw.size(); k-- > 1;) {
    tail += d_alpha[k];
    raw_out[k] -= std::exp(raw[k]) * tail;
  }
  raw_out[0] += tail + d_alpha[0];
}

}  // namespace grm

}  // namespace ifa
