#include "ifa/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "ifa/errors.hpp"
#include "objective_detail.hpp"

namespace ifa {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)
}

WeightMode parse_weight_mode(std::string_view name) {
  if (name == "algorithm1") return WeightMode::algorithm1;
  if (name == "pointwise") return WeightMode::pointwise;
  throw ConfigError("unknown weight mode '" + std::string(name) + "' (expected algorithm1 or pointwise)");
}

std::string_view to_string(WeightMode mode) {
  return mode == WeightMode::algorithm1 ? "algorithm1" : "pointwise";
}

NoiseBlock NoiseBlock::draw(std::size_t batch, std::size_t R, std::size_t S, std::size_t P, Rng& rng) {
  NoiseBlock n = zeros(batch, R, S, P);
  std::normal_distribution<double> normal;
  for (auto& e : n.eps) e = normal(rng);
  return n;
}

NoiseBlock NoiseBlock::draw(std::size_t batch, std::size_t R, std::size_t S, std::size_t P,
                            std::uint64_t seed) {
  Rng rng(seed);
  NoiseBlock n = draw(batch, R, S, P, rng);
  n.seed = seed;
  return n;
}

NoiseBlock NoiseBlock::zeros(std::size_t batch, std::size_t R, std::size_t S, std::size_t P) {
  NoiseBlock n;
  n.batch = batch;
  n.R = R;
  n.S = S;
  n.P = P;
  n.eps.assign(batch * R * S * P, 0.0);
  return n;
}

void reparameterize(std::span<const double> mu, std::span<const double> sigma,
                    std::span<const double> eps, std::span<double> x) {
  for (std::size_t p = 0; p < mu.size(); ++p) x[p] = mu[p] + sigma[p] * eps[p];
}

double kl_normal(std::span<const double> mu, std::span<const double> log_sigma) {
  double kl = 0.0;
  for (std::size_t p = 0; p < mu.size(); ++p) {
    const double ls = log_sigma[p];
    kl += mu[p] * mu[p] + std::exp(2.0 * ls) - 1.0 - 2.0 * ls;
  }
  return 0.5 * kl;
}

double log_std_normal_density(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return -0.5 * s - kHalfLog2Pi * static_cast<double>(x.size());
}

double log_normal_density(std::span<const double> x, std::span<const double> mu,
                          std::span<const double> log_sigma) {
  double s = 0.0;
  for (std::size_t p = 0; p < x.size(); ++p) {
    const double z = (x[p] - mu[p]) * std::exp(-log_sigma[p]);
    s += -0.5 * z * z - log_sigma[p] - kHalfLog2Pi;
  }
  return s;
}

double log_weight(const ItemBank& bank, std::span<const int> y, std::span<const double> x,
                  std::span<const double> mu, std::span<const double> log_sigma, WeightMode mode,
                  double kl_scale) {
  const double ll = cond_log_lik(bank, x, y);
  if (mode == WeightMode::algorithm1) return ll - kl_scale * kl_normal(mu, log_sigma);
  return ll + kl_scale * (log_std_normal_density(x) - log_normal_density(x, mu, log_sigma));
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double e : v) s += std::exp(e - m);
  return m + std::log(s);
}

namespace detail {

Context::Context(const ItemBank& b, const EncoderParams& e, const Dataset& d, const NoiseBlock& n,
                 const ObjectiveSpec& s)
    : bank(b),
      enc(e),
      data(d),
      noise(n),
      spec(s),
      cache(grm::make_cache(b)),
      one_hot_offsets(item_offsets(b.category_counts)),
      intercept_offset(b.loadings.size()),
      encoder_offset(b.loadings.size() + b.raw_intercepts.size()) {}

void check_inputs(const ItemBank& bank, const EncoderParams& enc, const Dataset& data,
                  std::span<const std::size_t> rows, const NoiseBlock& noise,
                  const ObjectiveSpec& spec) {
  if (spec.R < 1 || spec.S < 1) throw ConfigError("R and S must be at least 1");
  if (data.n_items != bank.n_items || data.category_counts != bank.category_counts) {
    throw DataError("dataset items/categories do not match the item bank");
  }
  if (enc.latent_dim != bank.latent_dim) throw DataError("encoder and item bank disagree on P");
  if (enc.input_dim != item_offsets(bank.category_counts).back()) {
    throw DataError("encoder input width does not match the one-hot width");
  }
  if (noise.batch != rows.size() || noise.R != spec.R || noise.S != spec.S ||
      noise.P != bank.latent_dim) {
    throw ConfigError("noise block shape does not match batch x R x S x P");
  }
  for (auto r : rows) {
    if (r >= data.n_respondents) throw DataError("batch row index out of range");
  }
}

double respondent_objective(const Context& ctx, std::size_t batch_index, std::size_t row,
                            std::span<double> log_weights, std::span<double> grad, Workspace& ws) {
  const auto& bank = ctx.bank;
  const std::size_t P = bank.latent_dim;
  const std::size_t J = bank.n_items;
  const std::size_t R = ctx.spec.R;
  const std::size_t S = ctx.spec.S;
  const double a = ctx.spec.kl_scale;
  const bool pointwise = ctx.spec.mode == WeightMode::pointwise;
  const bool want_grad = !grad.empty();
  const auto y = ctx.data.row(row);

  ws.active.resize(J);
  active_columns(y, ctx.one_hot_offsets, ws.active);
  forward_sparse(ctx.enc, ws.active, ws.tape);

  ws.mu.assign(ws.tape.output.begin(), ws.tape.output.begin() + static_cast<std::ptrdiff_t>(P));
  ws.log_sigma.resize(P);
  ws.sigma.resize(P);
  for (std::size_t p = 0; p < P; ++p) {
    ws.log_sigma[p] = clamp_log_sigma(ws.tape.output[P + p]);
    ws.sigma[p] = std::exp(ws.log_sigma[p]);
  }
  const double kl = kl_normal(ws.mu, ws.log_sigma);

  ws.x.resize(R * P);
  ws.lw.resize(R);
  if (want_grad) {
    ws.d_eta.resize(R * J);
    ws.d_lo.resize(R * J);
    ws.d_hi.resize(R * J);
    ws.d_output.assign(2 * P, 0.0);
    ws.dx.resize(P);
  }

  double total = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t r = 0; r < R; ++r) {
      const auto eps = ctx.noise.at(batch_index, r, s);
      double* x = ws.x.data() + r * P;
      for (std::size_t p = 0; p < P; ++p) x[p] = ws.mu[p] + ws.sigma[p] * eps[p];

      double ll = 0.0;
      for (std::size_t j = 0; j < J; ++j) {
        const double* beta = bank.loadings.data() + j * P;
        double eta = 0.0;
        for (std::size_t p = 0; p < P; ++p) eta += beta[p] * x[p];
        const auto t = grm::category_term(ctx.cache, j, bank.category_counts[j], y[j], eta, bank.scaling);
        ll += t.log_prob;
        if (want_grad) {
          ws.d_eta[r * J + j] = t.d_eta;
          ws.d_lo[r * J + j] = t.d_alpha_lo;
          ws.d_hi[r * J + j] = t.d_alpha_hi;
        }
      }
      double extra;
      if (pointwise) {
        // log N(x; 0, I) - log q(x): the (x - mu) / sigma of q is eps itself.
        double xx = 0.0, ee = 0.0, ls = 0.0;
        for (std::size_t p = 0; p < P; ++p) {
          xx += x[p] * x[p];
          ee += eps[p] * eps[p];
          ls += ws.log_sigma[p];
        }
        extra = a * (-0.5 * xx + 0.5 * ee + ls);
      } else {
        extra = -a * kl;
      }
      ws.lw[r] = ll + extra;
      log_weights[s * R + r] = ws.lw[r];
    }

    const double lse = log_sum_exp(ws.lw);
    total += lse - std::log(static_cast<double>(R));
    if (!want_grad) continue;

    // d estimate / d log w_r = softmax_r / S.
    for (std::size_t r = 0; r < R; ++r) {
      const double c = std::exp(ws.lw[r] - lse) / static_cast<double>(S);
      if (c == 0.0) continue;
      const double* x = ws.x.data() + r * P;
      const auto eps = ctx.noise.at(batch_index, r, s);
      std::fill(ws.dx.begin(), ws.dx.end(), 0.0);
      for (std::size_t j = 0; j < J; ++j) {
        const double de = c * ws.d_eta[r * J + j];
        const double* beta = bank.loadings.data() + j * P;
        double* gbeta = grad.data() + j * P;
        for (std::size_t p = 0; p < P; ++p) {
          gbeta[p] += de * x[p];
          ws.dx[p] += de * beta[p];
        }
        const int yj = y[j];
        double* galpha = grad.data() + ctx.intercept_offset + bank.intercept_offsets[j];
        if (yj > 0) galpha[yj - 1] += c * ws.d_lo[r * J + j];
        if (yj < bank.category_counts[j] - 1) galpha[yj] += c * ws.d_hi[r * J + j];
      }
      for (std::size_t p = 0; p < P; ++p) {
        double dxp = ws.dx[p];
        double dls = 0.0;
        if (pointwise) {
          dxp += -c * a * x[p];
          dls += c * a;  // from -log q = ... + sum log sigma
        } else {
          ws.d_output[p] += -c * a * ws.mu[p];
          dls += -c * a * (ws.sigma[p] * ws.sigma[p] - 1.0);
        }
        ws.d_output[p] += dxp;
        dls += dxp * ws.sigma[p] * eps[p];
        ws.d_output[P + p] += dls;
      }
    }
  }

  if (want_grad) {
    // The log sigma clamp passes its gradient straight through. A flat clamp
    // would strand any unit that crosses a bound, since nothing could pull
    // it back.
    backward_sparse(ctx.enc, ws.active, ws.tape, ws.d_output, grad.subspan(ctx.encoder_offset));
  }
  return total / static_cast<double>(S);
}

void finalize_gradient(const Context& ctx, std::size_t batch_size, std::span<double> grad) {
  const auto& bank = ctx.bank;
  std::vector<double> d_alpha;
  for (std::size_t j = 0; j < bank.n_items; ++j) {
    const auto raw = bank.raw(j);
    auto block = grad.subspan(ctx.intercept_offset + bank.intercept_offsets[j], raw.size());
    d_alpha.assign(block.begin(), block.end());
    std::fill(block.begin(), block.end(), 0.0);
    grm::accumulate_raw_grad(raw, d_alpha, block);
  }
  const double scale = 1.0 / static_cast<double>(batch_size);
  for (auto& g : grad) g *= scale;
}

void check_finite(const ItemBank& bank, const EncoderParams& enc, std::span<const double> grad) {
  const auto layout = make_layout(bank, enc);
  for (const auto& b : layout.blocks) {
    for (std::size_t k = 0; k < b.size; ++k) {
      if (!std::isfinite(grad[b.offset + k])) {
        throw NumericalError("non-finite gradient in parameter block '" + b.name + "' (entry " +
                             std::to_string(k) + ")");
      }
    }
  }
}

}  // namespace detail

ObjectiveValue iw_elbo(const ItemBank& bank, const EncoderParams& enc, const Dataset& data,
                       std::span<const std::size_t> rows, const NoiseBlock& noise,
                       const ObjectiveSpec& spec) {
  detail::check_inputs(bank, enc, data, rows, noise, spec);
  detail::Context ctx(bank, enc, data, noise, spec);
  const std::size_t RS = spec.R * spec.S;
  ObjectiveValue v;
  v.per_respondent.resize(rows.size());
  v.log_weights.resize(rows.size() * RS);
#pragma omp parallel
  {
    detail::Workspace ws;
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows.size()); ++i) {
      const auto ui = static_cast<std::size_t>(i);
      v.per_respondent[ui] = detail::respondent_objective(
          ctx, ui, rows[ui], std::span<double>(v.log_weights).subspan(ui * RS, RS), {}, ws);
    }
  }
  double sum = 0.0;
  for (double e : v.per_respondent) sum += e;
  v.iw_elbo = rows.empty() ? 0.0 : sum / static_cast<double>(rows.size());
  return v;
}

ObjectiveGradient grad(const ItemBank& bank, const EncoderParams& enc, const Dataset& data,
                       std::span<const std::size_t> rows, const NoiseBlock& noise,
                       const ObjectiveSpec& spec) {
  auto g = kernels::objective_grad_omp(bank, enc, data, rows, noise, spec);
  detail::check_finite(bank, enc, g.grad);
  return g;
}

}  // namespace ifa
