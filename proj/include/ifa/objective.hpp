#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ifa/data.hpp"
#include "ifa/encoder.hpp"
#include "ifa/grm.hpp"
#include "ifa/rng.hpp"

namespace ifa {

// How the importance weight of one draw is formed.
//   algorithm1: log w = log p(y | x) - KL(q || prior)       (analytic KL per draw)
//   pointwise:  log w = log p(y | x) + log N(x; 0, I) - log q(x | y)
enum class WeightMode { algorithm1, pointwise };

WeightMode parse_weight_mode(std::string_view name);
std::string_view to_string(WeightMode mode);

// Standard-normal draws for a mini-batch, indexed (i, r, s, p).
struct NoiseBlock {
  std::size_t batch = 0, R = 1, S = 1, P = 0;
  std::uint64_t seed = 0;
  std::vector<double> eps;

  static NoiseBlock draw(std::size_t batch, std::size_t R, std::size_t S, std::size_t P,
                         std::uint64_t seed);
  // Fills from an existing generator (used by the training loop).
  static NoiseBlock draw(std::size_t batch, std::size_t R, std::size_t S, std::size_t P, Rng& rng);
  static NoiseBlock zeros(std::size_t batch, std::size_t R, std::size_t S, std::size_t P);

  std::span<const double> at(std::size_t i, std::size_t r, std::size_t s) const {
    return {eps.data() + ((i * S + s) * R + r) * P, P};
  }
};

struct ObjectiveValue {
  double iw_elbo = 0.0;                // mean over the batch
  std::vector<double> per_respondent;  // batch
  std::vector<double> log_weights;     // batch x R x S, index ((i * S + s) * R + r)
};

// Settings shared by the value and gradient computations.
struct ObjectiveSpec {
  std::size_t R = 1;
  std::size_t S = 1;
  WeightMode mode = WeightMode::algorithm1;
  // Multiplier on the KL (algorithm1) or log-prior-minus-log-q (pointwise)
  // part of each weight. 1 outside KL annealing.
  double kl_scale = 1.0;
};

void reparameterize(std::span<const double> mu, std::span<const double> sigma,
                    std::span<const double> eps, std::span<double> x);

// KL(N(mu, sigma^2 I) || N(0, I)).
double kl_normal(std::span<const double> mu, std::span<const double> log_sigma);

double log_normal_density(std::span<const double> x, std::span<const double> mu,
                          std::span<const double> log_sigma);
double log_std_normal_density(std::span<const double> x);

double log_weight(const ItemBank& bank, std::span<const int> y, std::span<const double> x,
                  std::span<const double> mu, std::span<const double> log_sigma, WeightMode mode,
                  double kl_scale = 1.0);

double log_sum_exp(std::span<const double> v);

// rows selects the respondents of the batch (duplicates allowed).
ObjectiveValue iw_elbo(const ItemBank& bank, const EncoderParams& enc, const Dataset& data,
                       std::span<const std::size_t> rows, const NoiseBlock& noise,
                       const ObjectiveSpec& spec);

struct ObjectiveGradient {
  ObjectiveValue value;
  // d (batch-mean IW-ELBO) / d xi, in ParamLayout order.
  std::vector<double> grad;
};

// Exact reverse-mode gradient of the sampled surrogate with the noise held
// fixed. Runs the OpenMP kernel. Throws NumericalError naming the parameter
// block when any entry is non-finite.
ObjectiveGradient grad(const ItemBank& bank, const EncoderParams& enc, const Dataset& data,
                       std::span<const std::size_t> rows, const NoiseBlock& noise,
                       const ObjectiveSpec& spec);

namespace kernels {

// Serial reference: one accumulator, respondents in order.
ObjectiveGradient objective_grad_serial(const ItemBank& bank, const EncoderParams& enc,
                                        const Dataset& data, std::span<const std::size_t> rows,
                                        const NoiseBlock& noise, const ObjectiveSpec& spec);

// OpenMP kernel: respondents are split into fixed chunks, each chunk owns a
// gradient buffer, and the buffers are summed in chunk order. The result is
// independent of the thread count.
ObjectiveGradient objective_grad_omp(const ItemBank& bank, const EncoderParams& enc,
                                     const Dataset& data, std::span<const std::size_t> rows,
                                     const NoiseBlock& noise, const ObjectiveSpec& spec);

inline constexpr std::size_t kChunkRows = 8;

}  // namespace kernels

}  // namespace ifa
