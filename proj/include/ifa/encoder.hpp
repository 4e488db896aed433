#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ifa/data.hpp"

namespace ifa {

// log sigma leaves the network unbounded; it is clamped to this range before
// exponentiation.
inline constexpr double kLogSigmaMin = -10.0;
inline constexpr double kLogSigmaMax = 10.0;

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;     // out

  double w(std::size_t o, std::size_t i) const { return weights[o * in + i]; }
};

// Feedforward inference network: ELU hidden layers, identity output of width
// 2P laid out as (mu_1..mu_P, log_sigma_1..log_sigma_P).
struct EncoderParams {
  std::size_t input_dim = 0;
  std::size_t latent_dim = 0;
  std::vector<DenseLayer> layers;

  std::size_t hidden_layers() const { return layers.empty() ? 0 : layers.size() - 1; }
  std::size_t hidden_size() const { return layers.empty() ? 0 : layers.front().out; }
  std::size_t output_dim() const { return 2 * latent_dim; }
};

struct PosteriorParams {
  std::size_t rows = 0;
  std::size_t latent_dim = 0;
  std::vector<double> mu;         // rows x P
  std::vector<double> log_sigma;  // rows x P, clamped

  std::span<const double> mu_row(std::size_t i) const { return {mu.data() + i * latent_dim, latent_dim}; }
  std::span<const double> log_sigma_row(std::size_t i) const {
    return {log_sigma.data() + i * latent_dim, latent_dim};
  }
};

inline double elu(double z) noexcept { return z >= 0.0 ? z : std::expm1(z); }
inline double elu_derivative(double z) noexcept { return z >= 0.0 ? 1.0 : std::exp(z); }
void elu(std::span<double> z) noexcept;

inline double clamp_log_sigma(double v) noexcept {
  return v < kLogSigmaMin ? kLogSigmaMin : (v > kLogSigmaMax ? kLogSigmaMax : v);
}

PosteriorParams forward(const EncoderParams& p, const EncodedMatrix& rows);

// Activations kept for the backward pass of one respondent.
struct ForwardTape {
  std::vector<std::vector<double>> pre;   // pre-activation per layer
  std::vector<std::vector<double>> post;  // ELU output per hidden layer
  std::vector<double> output;             // raw 2P output (log sigma unclamped)
};

// Forward pass for a one-hot row given only its active columns.
void forward_sparse(const EncoderParams& p, std::span<const std::size_t> active, ForwardTape& tape);

// Backward pass: given d objective / d raw output (size 2P), accumulates the
// parameter gradient into grad, which has EncoderParams layout flattened as
// layer by layer (weights then bias).
void backward_sparse(const EncoderParams& p, std::span<const std::size_t> active,
                     const ForwardTape& tape, std::span<const double> d_output,
                     std::span<double> grad);

// Number of doubles in the flattened encoder parameters.
std::size_t encoder_param_count(const EncoderParams& p);

struct EncoderShape {
  std::size_t input_dim;
  std::vector<std::size_t> hidden;  // one entry per hidden layer
  std::size_t latent_dim;
};

// Every weight and bias of a layer ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
EncoderParams init_encoder(const EncoderShape& shape, std::uint64_t seed);

// round((input_dim + 2P) / 2)
std::size_t default_hidden_size(std::size_t input_dim, std::size_t latent_dim);

}  // namespace ifa
