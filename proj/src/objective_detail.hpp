#pragma once

// Per-respondent IW-ELBO value and gradient shared by the serial and OpenMP
// kernels. Only scheduling and the reduction differ between the two.

#include <cstddef>
#include <span>
#include <vector>

#include "ifa/data.hpp"
#include "ifa/encoder.hpp"
#include "ifa/grm.hpp"
#include "ifa/objective.hpp"
#include "ifa/params.hpp"

namespace ifa::detail {

struct Context {
  const ItemBank& bank;
  const EncoderParams& enc;
  const Dataset& data;
  const NoiseBlock& noise;
  const ObjectiveSpec& spec;
  grm::ItemCache cache;
  std::vector<std::size_t> one_hot_offsets;
  std::size_t intercept_offset;  // start of the intercept block in xi
  std::size_t encoder_offset;    // start of the encoder blocks in xi

  Context(const ItemBank& b, const EncoderParams& e, const Dataset& d, const NoiseBlock& n,
          const ObjectiveSpec& s);
};

struct Workspace {
  ForwardTape tape;
  std::vector<std::size_t> active;
  std::vector<double> mu, log_sigma, sigma;
  std::vector<double> x;        // R x P
  std::vector<double> lw;       // R
  std::vector<double> d_eta;    // R x J
  std::vector<double> d_lo;     // R x J
  std::vector<double> d_hi;     // R x J
  std::vector<double> dx;       // P
  std::vector<double> d_output; // 2P
};

// Checks shapes shared by every entry point.
void check_inputs(const ItemBank& bank, const EncoderParams& enc, const Dataset& data,
                  std::span<const std::size_t> rows, const NoiseBlock& noise,
                  const ObjectiveSpec& spec);

// Returns the respondent's IW-ELBO estimate and writes its R x S log weights
// to log_weights. When grad is non-empty, adds the gradient of the estimate
// into it. The intercept block receives partials w.r.t. the constrained
// intercepts; finalize_gradient converts them to raw parameters.
double respondent_objective(const Context& ctx, std::size_t batch_index, std::size_t row,
                            std::span<double> log_weights, std::span<double> grad, Workspace& ws);

// Constrained-to-raw intercept chain rule and division by the batch size.
void finalize_gradient(const Context& ctx, std::size_t batch_size, std::span<double> grad);

// Throws NumericalError naming the first block with a non-finite entry.
void check_finite(const ItemBank& bank, const EncoderParams& enc, std::span<const double> grad);

}  // namespace ifa::detail
