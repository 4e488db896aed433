#include "ifa/encoder.hpp"

#include <cmath>
#include <string>

#include "ifa/errors.hpp"
#include "ifa/rng.hpp"

namespace ifa {

void elu(std::span<double> z) noexcept {
  for (auto& v : z) v = elu(v);
}

std::size_t default_hidden_size(std::size_t input_dim, std::size_t latent_dim) {
  if (input_dim == 0 || latent_dim == 0) throw ConfigError("default_hidden_size needs positive sizes");
  // Half-way between input width and 2P, rounded half up.
  return (input_dim + 2 * latent_dim + 1) / 2;
}

EncoderParams init_encoder(const EncoderShape& shape, std::uint64_t seed) {
  if (shape.input_dim == 0 || shape.latent_dim == 0) throw ConfigError("encoder sizes must be positive");
  EncoderParams p;
  p.input_dim = shape.input_dim;
  p.latent_dim = shape.latent_dim;
  Rng rng(seed);
  std::size_t fan_in = shape.input_dim;
  auto add_layer = [&](std::size_t out) {
    if (out == 0) throw ConfigError("hidden layer sizes must be positive");
    DenseLayer layer;
    layer.in = fan_in;
    layer.out = out;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> unif(-bound, bound);
    layer.weights.resize(out * fan_in);
    for (auto& w : layer.weights) w = unif(rng);
    layer.bias.resize(out);
    for (auto& b : layer.bias) b = unif(rng);
    p.layers.push_back(std::move(layer));
    fan_in = out;
  };
  for (std::size_t h : shape.hidden) add_layer(h);
  add_layer(2 * shape.latent_dim);
  return p;
}

std::size_t encoder_param_count(const EncoderParams& p) {
  std::size_t n = 0;
  for (const auto& l : p.layers) n += l.weights.size() + l.bias.size();
  return n;
}

namespace {

void check_shape(const EncoderParams& p) {
  if (p.layers.empty()) throw ConfigError("encoder has no layers");
  if (p.layers.front().in != p.input_dim || p.layers.back().out != 2 * p.latent_dim) {
    throw DataError("encoder layer sizes do not match its input/latent dimensions");
  }
}

// Dense matrix-vector product for layers after the first.
void affine(const DenseLayer& l, std::span<const double> in, std::vector<double>& out) {
  out.assign(l.bias.begin(), l.bias.end());
  for (std::size_t o = 0; o < l.out; ++o) {
    const double* w = l.weights.data() + o * l.in;
    double s = 0.0;
    for (std::size_t i = 0; i < l.in; ++i) s += w[i] * in[i];
    out[o] += s;
  }
}

void finish(const EncoderParams& p, ForwardTape& tape) {
  const std::size_t L = p.layers.size();
  tape.post.resize(L - 1);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    tape.post[l] = tape.pre[l];
    elu(std::span<double>(tape.post[l]));
    affine(p.layers[l + 1], tape.post[l], tape.pre[l + 1]);
  }
  tape.output = tape.pre[L - 1];
}

}  // namespace

void forward_sparse(const EncoderParams& p, std::span<const std::size_t> active, ForwardTape& tape) {
  const std::size_t L = p.layers.size();
  tape.pre.resize(L);
  const auto& first = p.layers.front();
  auto& z = tape.pre[0];
  z.assign(first.bias.begin(), first.bias.end());
  for (std::size_t o = 0; o < first.out; ++o) {
    const double* w = first.weights.data() + o * first.in;
    double s = 0.0;
    for (std::size_t c : active) s += w[c];
    z[o] += s;
  }
  finish(p, tape);
}

PosteriorParams forward(const EncoderParams& p, const EncodedMatrix& rows) {
  check_shape(p);
  if (rows.cols != p.input_dim) {
    throw DataError("encoder expects " + std::to_string(p.input_dim) + " input columns, got " +
                    std::to_string(rows.cols));
  }
  const std::size_t P = p.latent_dim;
  PosteriorParams out;
  out.rows = rows.rows;
  out.latent_dim = P;
  out.mu.resize(rows.rows * P);
  out.log_sigma.resize(rows.rows * P);
#pragma omp parallel
  {
    ForwardTape tape;
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows.rows); ++i) {
      const auto ui = static_cast<std::size_t>(i);
      tape.pre.resize(p.layers.size());
      affine(p.layers.front(), rows.row(ui), tape.pre[0]);
      finish(p, tape);
      for (std::size_t k = 0; k < P; ++k) {
        out.mu[ui * P + k] = tape.output[k];
        out.log_sigma[ui * P + k] = clamp_log_sigma(tape.output[P + k]);
      }
    }
  }
  return out;
}

void backward_sparse(const EncoderParams& p, std::span<const std::size_t> active,
                     const ForwardTape& tape, std::span<const double> d_output,
                     std::span<double> grad) {
  const std::size_t L = p.layers.size();
  // Offsets of each layer's block in the flattened gradient.
  std::vector<std::size_t> offset(L);
  std::size_t acc = 0;
  for (std::size_t l = 0; l < L; ++l) {
    offset[l] = acc;
    acc += p.layers[l].weights.size() + p.layers[l].bias.size();
  }

  std::vector<double> delta(d_output.begin(), d_output.end());  // d / d pre[l]
  std::vector<double> below;
  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = p.layers[l];
    double* gw = grad.data() + offset[l];
    double* gb = gw + layer.weights.size();
    for (std::size_t o = 0; o < layer.out; ++o) gb[o] += delta[o];
    if (l == 0) {
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double d = delta[o];
        double* row = gw + o * layer.in;
        for (std::size_t c : active) row[c] += d;
      }
      break;
    }
    const auto& input = tape.post[l - 1];
    below.assign(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      double* row = gw + o * layer.in;
      const double* w = layer.weights.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) {
        row[i] += d * input[i];
        below[i] += d * w[i];
      }
    }
    const auto& pre = tape.pre[l - 1];
    for (std::size_t i = 0; i < layer.in; ++i) below[i] *= elu_derivative(pre[i]);
    delta.swap(below);
  }
}

}  // namespace ifa
