#include <doctest.h>

#include <cmath>
#include <random>

#include "ifa/encoder.hpp"
#include "support.hpp"

using namespace ifa;

namespace {

EncodedMatrix dense_rows(std::size_t cols, std::vector<double> values) {
  EncodedMatrix m;
  m.cols = cols;
  m.rows = values.size() / cols;
  m.values = std::move(values);
  return m;
}

// Every parameter of the encoder in flattened gradient order.
std::vector<double*> parameter_slots(EncoderParams& p) {
  std::vector<double*> out;
  for (auto& layer : p.layers) {
    for (auto& w : layer.weights) out.push_back(&w);
    for (auto& b : layer.bias) out.push_back(&b);
  }
  return out;
}

}  // namespace

TEST_CASE("elu values and derivative branches") {
  CHECK(elu(0.0) == 0.0);
  CHECK(elu(1.5) == 1.5);
  // expm1(-40) = -1 + 4e-18 rounds to -1 in double precision.
  const double v = elu(-40.0);
  CHECK(v >= -1.0);
  CHECK(v < -1.0 + 1e-15);
  CHECK(elu(-30.0) > -1.0);
  CHECK(elu_derivative(2.0) == 1.0);
  CHECK(elu_derivative(-0.5) == doctest::Approx(std::exp(-0.5)));
  // Continuity at zero from the left.
  CHECK(std::abs(elu(-1e-12)) < 1e-11);
  std::vector<double> z{-1.0, 0.0, 2.0};
  elu(z);
  CHECK(z[0] == doctest::Approx(std::exp(-1.0) - 1.0));
  CHECK(z[1] == 0.0);
  CHECK(z[2] == 2.0);
}

TEST_CASE("forward with zero parameters gives the prior") {
  auto enc = init_encoder({6, {4}, 3}, 1);
  for (auto* s : parameter_slots(enc)) *s = 0.0;
  const auto post = forward(enc, dense_rows(6, {1, 0, 0, 1, 0, 1}));
  for (double m : post.mu) CHECK(m == 0.0);
  for (double l : post.log_sigma) CHECK(l == 0.0);
}

TEST_CASE("forward on a hand-set single-unit network") {
  EncoderParams enc;
  enc.input_dim = 2;
  enc.latent_dim = 1;
  enc.layers.push_back(DenseLayer{2, 1, {2.0, 0.0}, {-1.0}});
  enc.layers.push_back(DenseLayer{1, 2, {1.0, 0.0}, {0.0, 0.0}});
  const auto post = forward(enc, dense_rows(2, {1.0, 0.0}));
  CHECK(post.mu[0] == doctest::Approx(1.0));
  CHECK(post.log_sigma[0] == 0.0);

  ForwardTape tape;
  const std::vector<std::size_t> active{0};
  forward_sparse(enc, active, tape);
  CHECK(tape.output[0] == doctest::Approx(1.0));
  CHECK(tape.output[1] == 0.0);
}

TEST_CASE("forward is row-wise: identical and permuted rows") {
  const auto d = simulate(small_template(5, 2, 3, 2), 20, 4);
  const auto x = one_hot(d);
  const auto enc = init_encoder({x.cols, {default_hidden_size(x.cols, 2)}, 2}, 8);
  const auto post = forward(enc, x);
  std::vector<std::size_t> perm(d.n_respondents);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 7 + 3) % perm.size();
  const auto permuted = forward(enc, one_hot(d.select_rows(perm)));
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t p = 0; p < 2; ++p) {
      CHECK(permuted.mu_row(i)[p] == post.mu_row(perm[i])[p]);
      CHECK(permuted.log_sigma_row(i)[p] == post.log_sigma_row(perm[i])[p]);
    }
  }
  const std::vector<std::size_t> twice{5, 5};
  const auto dup = forward(enc, one_hot(d.select_rows(twice)));
  CHECK(dup.mu_row(0)[0] == dup.mu_row(1)[0]);
  CHECK(dup.log_sigma_row(0)[1] == dup.log_sigma_row(1)[1]);
}

TEST_CASE("sparse and dense forward agree") {
  const auto d = simulate(small_template(6, 3, 4, 1), 10, 3);
  const auto x = one_hot(d);
  const auto enc = init_encoder({x.cols, {9, 7}, 3}, 5);
  const auto post = forward(enc, x);
  std::vector<std::size_t> active(d.n_items);
  ForwardTape tape;
  for (std::size_t i = 0; i < d.n_respondents; ++i) {
    active_columns(d.row(i), x.offsets, active);
    forward_sparse(enc, active, tape);
    for (std::size_t p = 0; p < 3; ++p) {
      CHECK(tape.output[p] == doctest::Approx(post.mu_row(i)[p]).epsilon(1e-13));
      CHECK(clamp_log_sigma(tape.output[3 + p]) == doctest::Approx(post.log_sigma_row(i)[p]).epsilon(1e-13));
    }
  }
}

TEST_CASE("log sigma is clamped to its range") {
  EncoderParams enc;
  enc.input_dim = 1;
  enc.latent_dim = 1;
  enc.layers.push_back(DenseLayer{1, 1, {1.0}, {0.0}});
  enc.layers.push_back(DenseLayer{1, 2, {0.0, 1000.0}, {0.0, 0.0}});
  const auto hi = forward(enc, dense_rows(1, {1.0}));
  CHECK(hi.log_sigma[0] == kLogSigmaMax);
  enc.layers[1].weights[1] = -1000.0;
  const auto lo = forward(enc, dense_rows(1, {1.0}));
  CHECK(lo.log_sigma[0] == kLogSigmaMin);
  CHECK(std::isfinite(std::exp(lo.log_sigma[0])));
}

TEST_CASE("backward_sparse matches finite-difference vector-Jacobian products") {
  const auto d = simulate(small_template(5, 2, 4, 6), 8, 2);
  const auto offsets = item_offsets(d.category_counts);
  for (std::size_t layers : {1u, 2u}) {
    auto enc = init_encoder({offsets.back(), std::vector<std::size_t>(layers, 6), 2}, 3 + layers);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n01;
    std::vector<double> v(4);
    for (auto& e : v) e = n01(rng);
    std::vector<std::size_t> active(d.n_items);
    active_columns(d.row(2), offsets, active);
    ForwardTape tape;
    forward_sparse(enc, active, tape);
    std::vector<double> grad(encoder_param_count(enc), 0.0);
    backward_sparse(enc, active, tape, v, grad);
    auto slots = parameter_slots(enc);
    REQUIRE(slots.size() == grad.size());
    auto project = [&] {
      ForwardTape t;
      forward_sparse(enc, active, t);
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += v[k] * t.output[k];
      return s;
    };
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const double keep = *slots[k];
      *slots[k] = keep + h;
      const double fp = project();
      *slots[k] = keep - h;
      const double fm = project();
      *slots[k] = keep;
      const double fd = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(fd - grad[k]) / std::max({std::abs(fd), std::abs(grad[k]), 1e-4}));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("init_encoder uses the fan-in bound and is seeded") {
  const auto enc = init_encoder({250, {130}, 5}, 12);
  REQUIRE(enc.layers.size() == 2);
  CHECK(enc.hidden_size() == 130);
  CHECK(enc.hidden_layers() == 1);
  CHECK(enc.output_dim() == 10);
  const double b1 = 1.0 / std::sqrt(250.0);
  CHECK(b1 == doctest::Approx(0.06325).epsilon(1e-4));
  for (double w : enc.layers[0].weights) CHECK(std::abs(w) < b1);
  for (double w : enc.layers[0].bias) CHECK(std::abs(w) < b1);
  const double b2 = 1.0 / std::sqrt(130.0);
  for (double w : enc.layers[1].weights) CHECK(std::abs(w) < b2);
  CHECK(encoder_param_count(enc) == 250 * 130 + 130 + 130 * 10 + 10);
  const auto same = init_encoder({250, {130}, 5}, 12);
  CHECK(same.layers[0].weights == enc.layers[0].weights);
  CHECK(same.layers[1].bias == enc.layers[1].bias);
  CHECK(init_encoder({250, {130}, 5}, 13).layers[0].weights != enc.layers[0].weights);
}

TEST_CASE("default_hidden_size") {
  CHECK(default_hidden_size(250, 5) == 130);
  CHECK(default_hidden_size(100, 10) == 60);
  for (std::size_t p = 1; p < 12; ++p) CHECK(default_hidden_size(2 * p, p) == 2 * p);
}
