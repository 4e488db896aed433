#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include <omp.h>

#include "ifa/errors.hpp"
#include "ifa/objective.hpp"
#include "support.hpp"

using namespace ifa;

namespace {

struct MeanSe {
  double mean;
  double se;
};

MeanSe mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace

TEST_CASE("reparameterize examples") {
  std::vector<double> x(2);
  reparameterize(std::vector<double>{1, 2}, std::vector<double>{0.5, 2}, std::vector<double>{2, -1}, x);
  CHECK(x[0] == 2.0);
  CHECK(x[1] == 0.0);
  reparameterize(std::vector<double>{1, 2}, std::vector<double>{0.5, 2}, std::vector<double>{0, 0}, x);
  CHECK(x == std::vector<double>{1, 2});
  reparameterize(std::vector<double>{0, 0}, std::vector<double>{1, 1}, std::vector<double>{0.3, -0.7}, x);
  CHECK(x == std::vector<double>{0.3, -0.7});
}

TEST_CASE("kl_normal examples") {
  CHECK(kl_normal(std::vector<double>{0, 0, 0}, std::vector<double>{0, 0, 0}) == 0.0);
  CHECK(kl_normal(std::vector<double>{1}, std::vector<double>{0}) == doctest::Approx(0.5));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> mu{n01(rng), n01(rng)}, ls{n01(rng), n01(rng)};
    CHECK(kl_normal(mu, ls) >= 0.0);
  }
}

TEST_CASE("kl_normal agrees with a Monte Carlo estimate") {
  const std::vector<double> mu{0.7, -1.2}, ls{-0.4, 0.3};
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  std::vector<double> draws(1000000);
  std::vector<double> x(2);
  for (auto& d : draws) {
    for (std::size_t p = 0; p < 2; ++p) x[p] = mu[p] + std::exp(ls[p]) * n01(rng);
    d = log_normal_density(x, mu, ls) - log_std_normal_density(x);
  }
  const auto ms = mean_se(draws);
  CHECK(std::abs(ms.mean - kl_normal(mu, ls)) < 3.0 * ms.se);
}

TEST_CASE("log densities") {
  const std::vector<double> x{0.5, -1.0};
  const double ref = -std::log(2.0 * M_PI) - 0.5 * (0.25 + 1.0);
  CHECK(log_std_normal_density(x) == doctest::Approx(ref));
  CHECK(log_normal_density(x, std::vector<double>{0, 0}, std::vector<double>{0, 0}) == doctest::Approx(ref));
  // N(1; 1, 2^2) density.
  CHECK(log_normal_density(std::vector<double>{1}, std::vector<double>{1}, std::vector<double>{std::log(2.0)}) ==
        doctest::Approx(-0.5 * std::log(2.0 * M_PI) - std::log(2.0)));
}

TEST_CASE("log_sum_exp does not underflow") {
  CHECK(log_sum_exp(std::vector<double>{-1000, -1000}) == doctest::Approx(-1000 + std::log(2.0)));
  CHECK(log_sum_exp(std::vector<double>{1000, 1000}) == doctest::Approx(1000 + std::log(2.0)));
  CHECK(log_sum_exp(std::vector<double>{0.0}) == 0.0);
}

TEST_CASE("log_weight modes") {
  const auto g = test::small_grad_instance();
  const auto y = g.data.row(0);
  const std::vector<double> x{0.4, -0.9};
  SUBCASE("pointwise at the prior reduces to the conditional log-likelihood") {
    const std::vector<double> zero{0, 0};
    CHECK(log_weight(g.bank, y, x, zero, zero, WeightMode::pointwise) ==
          doctest::Approx(cond_log_lik(g.bank, x, y)).epsilon(1e-14));
  }
  SUBCASE("algorithm1 subtracts the analytic KL") {
    const std::vector<double> mu{0.2, 0.1}, ls{-0.5, 0.2};
    CHECK(log_weight(g.bank, y, x, mu, ls, WeightMode::algorithm1) ==
          doctest::Approx(cond_log_lik(g.bank, x, y) - kl_normal(mu, ls)));
    CHECK(log_weight(g.bank, y, x, mu, ls, WeightMode::algorithm1, 0.25) ==
          doctest::Approx(cond_log_lik(g.bank, x, y) - 0.25 * kl_normal(mu, ls)));
  }
  SUBCASE("both modes agree in expectation") {
    const std::vector<double> mu{0.3, -0.2}, ls{-0.7, -0.2};
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n01;
    std::vector<double> diff(1000000);
    std::vector<double> z(2);
    for (auto& d : diff) {
      for (std::size_t p = 0; p < 2; ++p) z[p] = mu[p] + std::exp(ls[p]) * n01(rng);
      d = log_weight(g.bank, y, z, mu, ls, WeightMode::pointwise) -
          log_weight(g.bank, y, z, mu, ls, WeightMode::algorithm1);
    }
    const auto ms = mean_se(diff);
    CHECK(std::abs(ms.mean) < 3.0 * ms.se);
  }
  CHECK(parse_weight_mode("pointwise") == WeightMode::pointwise);
  CHECK(to_string(WeightMode::algorithm1) == "algorithm1");
  CHECK_THROWS_AS(parse_weight_mode("bogus"), ConfigError);
}

TEST_CASE("iw_elbo with R = 1 is the Monte Carlo ELBO") {
  const auto g = test::small_grad_instance();
  const auto noise = NoiseBlock::draw(g.rows.size(), 1, 4, 2, 3);
  const ObjectiveSpec spec{1, 4, WeightMode::algorithm1, 1.0};
  const auto v = iw_elbo(g.bank, g.enc, g.data, g.rows, noise, spec);
  const auto post = forward(g.enc, one_hot(g.data.select_rows(g.rows)));
  double total = 0.0;
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    const auto mu = post.mu_row(i);
    const auto ls = post.log_sigma_row(i);
    std::vector<double> sigma(2), x(2);
    for (std::size_t p = 0; p < 2; ++p) sigma[p] = std::exp(ls[p]);
    double elbo = 0.0;
    for (std::size_t s = 0; s < 4; ++s) {
      reparameterize(mu, sigma, noise.at(i, 0, s), x);
      elbo += cond_log_lik(g.bank, x, g.data.row(g.rows[i])) - kl_normal(mu, ls);
    }
    elbo /= 4.0;
    CHECK(v.per_respondent[i] == doctest::Approx(elbo).epsilon(1e-12));
    total += elbo;
  }
  CHECK(v.iw_elbo == doctest::Approx(total / 3.0).epsilon(1e-12));
}

TEST_CASE("iw_elbo with R > 1 is the mean over S of log-mean-exp over R") {
  const auto g = test::small_grad_instance(4);
  const std::size_t R = 3, S = 2;
  const auto noise = NoiseBlock::draw(g.rows.size(), R, S, 2, 9);
  const ObjectiveSpec spec{R, S, WeightMode::pointwise, 1.0};
  const auto v = iw_elbo(g.bank, g.enc, g.data, g.rows, noise, spec);
  const auto post = forward(g.enc, one_hot(g.data.select_rows(g.rows)));
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    const auto mu = post.mu_row(i);
    const auto ls = post.log_sigma_row(i);
    std::vector<double> sigma{std::exp(ls[0]), std::exp(ls[1])}, x(2);
    double est = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      double sum = 0.0;
      for (std::size_t r = 0; r < R; ++r) {
        reparameterize(mu, sigma, noise.at(i, r, s), x);
        const double lw = log_weight(g.bank, g.data.row(g.rows[i]), x, mu, ls, WeightMode::pointwise);
        CHECK(v.log_weights[(i * S + s) * R + r] == doctest::Approx(lw).epsilon(1e-12));
        sum += std::exp(lw);
      }
      est += std::log(sum / static_cast<double>(R));
    }
    CHECK(v.per_respondent[i] == doctest::Approx(est / static_cast<double>(S)).epsilon(1e-12));
  }
}

TEST_CASE("algorithm1 per-respondent values are never positive") {
  const auto gp = small_template(8, 2, 4, 2);
  const auto d = simulate(gp, 64, 1);
  const auto bank = init_item_bank(8, 2, d.category_counts, 3);
  const auto enc = init_encoder({item_offsets(d.category_counts).back(), {6}, 2}, 4);
  std::vector<std::size_t> rows(64);
  std::iota(rows.begin(), rows.end(), 0);
  const auto noise = NoiseBlock::draw(64, 4, 2, 2, 5);
  const auto v = iw_elbo(bank, enc, d, rows, noise, ObjectiveSpec{4, 2, WeightMode::algorithm1, 1.0});
  for (double r : v.per_respondent) CHECK(r <= 0.0);
  for (double w : v.log_weights) CHECK(std::isfinite(w));
}

TEST_CASE("objective values are reproducible from the noise seed") {
  const auto g = test::small_grad_instance();
  const auto n1 = NoiseBlock::draw(3, 2, 2, 2, 77);
  const auto n2 = NoiseBlock::draw(3, 2, 2, 2, 77);
  CHECK(n1.eps == n2.eps);
  CHECK(NoiseBlock::draw(3, 2, 2, 2, 78).eps != n1.eps);
  const ObjectiveSpec spec{2, 2, WeightMode::algorithm1, 1.0};
  const auto a = iw_elbo(g.bank, g.enc, g.data, g.rows, n1, spec);
  const auto b = iw_elbo(g.bank, g.enc, g.data, g.rows, n2, spec);
  CHECK(a.iw_elbo == b.iw_elbo);
  CHECK(a.log_weights == b.log_weights);
}

TEST_CASE("gradient matches central finite differences on every block") {
  const auto g = test::small_grad_instance();
  for (auto mode : {WeightMode::algorithm1, WeightMode::pointwise}) {
    for (double kl_scale : {1.0, 0.3}) {
      CAPTURE(to_string(mode));
      CAPTURE(kl_scale);
      const ObjectiveSpec spec{2, 2, mode, kl_scale};
      const auto noise = NoiseBlock::draw(3, 2, 2, 2, 31);
      const auto an = grad(g.bank, g.enc, g.data, g.rows, noise, spec);
      const auto reports = test::finite_difference_check(g.bank, g.enc, g.data, g.rows, noise, spec, an.grad);
      CHECK(reports.size() == 6);
      for (const auto& r : reports) {
        CAPTURE(r.block);
        CHECK(r.max_rel_error < 1e-4);
      }
    }
  }
}

TEST_CASE("gradient at the prior mean: the KL part of d/d mu vanishes") {
  // Zero loadings make the likelihood constant in x, so with zero noise the
  // objective is -KL and d/d mu = -mu.
  auto g = test::small_grad_instance();
  for (auto& l : g.bank.loadings) l = 0.0;
  for (auto& layer : g.enc.layers) {
    for (auto& w : layer.weights) w = 0.0;
    for (auto& b : layer.bias) b = 0.0;
  }
  const auto noise = NoiseBlock::zeros(3, 1, 1, 2);
  const ObjectiveSpec spec{1, 1, WeightMode::algorithm1, 1.0};
  const auto layout = make_layout(g.bank, g.enc);
  const auto& out_bias = layout.blocks.back();
  auto at_zero = grad(g.bank, g.enc, g.data, g.rows, noise, spec);
  CHECK(at_zero.grad[out_bias.offset] == 0.0);
  CHECK(at_zero.grad[out_bias.offset + 1] == 0.0);
  g.enc.layers.back().bias[0] = 0.3;
  auto shifted = grad(g.bank, g.enc, g.data, g.rows, noise, spec);
  CHECK(shifted.grad[out_bias.offset] == doctest::Approx(-0.3));
}

TEST_CASE("the averaged gradient is unbiased against averaged finite differences") {
  const auto g = test::small_grad_instance(2);
  const ObjectiveSpec spec{2, 2, WeightMode::algorithm1, 1.0};
  const std::size_t k = 1;  // one loading
  const double h = 1e-5;
  const std::size_t draws = 100000;
  std::vector<double> an(draws), fd(draws);
  Rng rng(13);
  ItemBank b = g.bank;
  for (std::size_t t = 0; t < draws; ++t) {
    const auto noise = NoiseBlock::draw(3, 2, 2, 2, rng);
    an[t] = grad(g.bank, g.enc, g.data, g.rows, noise, spec).grad[k];
    b.loadings[k] = g.bank.loadings[k] + h;
    const double fp = iw_elbo(b, g.enc, g.data, g.rows, noise, spec).iw_elbo;
    b.loadings[k] = g.bank.loadings[k] - h;
    const double fm = iw_elbo(b, g.enc, g.data, g.rows, noise, spec).iw_elbo;
    fd[t] = (fp - fm) / (2 * h);
  }
  const auto a = mean_se(an);
  const auto f = mean_se(fd);
  CHECK(std::abs(a.mean - f.mean) < 3.0 * std::max(a.se, f.se));
}

TEST_CASE("serial and OpenMP kernels agree and the OpenMP result ignores the thread count") {
  const auto gp = small_template(10, 3, 4, 6);
  const auto d = simulate(gp, 200, 2);
  const auto bank = init_item_bank(10, 3, d.category_counts, 1);
  const auto enc = init_encoder({item_offsets(d.category_counts).back(), {12}, 3}, 2);
  std::vector<std::size_t> rows(53);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = (i * 37) % 200;
  const auto noise = NoiseBlock::draw(rows.size(), 2, 3, 3, 4);
  const ObjectiveSpec spec{2, 3, WeightMode::pointwise, 0.6};
  const auto serial = kernels::objective_grad_serial(bank, enc, d, rows, noise, spec);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one = kernels::objective_grad_omp(bank, enc, d, rows, noise, spec);
  omp_set_num_threads(4);
  const auto four = kernels::objective_grad_omp(bank, enc, d, rows, noise, spec);
  omp_set_num_threads(saved);
  CHECK(one.grad == four.grad);
  CHECK(one.value.iw_elbo == four.value.iw_elbo);
  CHECK(one.value.per_respondent == serial.value.per_respondent);
  REQUIRE(serial.grad.size() == one.grad.size());
  for (std::size_t k = 0; k < serial.grad.size(); ++k) {
    CHECK(std::abs(serial.grad[k] - one.grad[k]) <= 1e-12 * std::max(1.0, std::abs(serial.grad[k])));
  }
}

TEST_CASE("outputs stay finite with log sigma at its clamp bounds") {
  auto g = test::small_grad_instance();
  const auto noise = NoiseBlock::draw(3, 2, 2, 2, 6);
  for (double bias : {1e3, -1e3}) {
    g.enc.layers.back().bias[2] = bias;
    g.enc.layers.back().bias[3] = bias;
    for (auto mode : {WeightMode::algorithm1, WeightMode::pointwise}) {
      const auto v = grad(g.bank, g.enc, g.data, g.rows, noise, ObjectiveSpec{2, 2, mode, 1.0});
      CHECK(std::isfinite(v.value.iw_elbo));
      for (double x : v.grad) CHECK(std::isfinite(x));
    }
  }
}

TEST_CASE("shape mismatches are rejected") {
  const auto g = test::small_grad_instance();
  const ObjectiveSpec spec{2, 2, WeightMode::algorithm1, 1.0};
  CHECK_THROWS_AS(iw_elbo(g.bank, g.enc, g.data, g.rows, NoiseBlock::draw(2, 2, 2, 2, 1), spec), Error);
  const std::vector<std::size_t> bad{0, 1, 99};
  CHECK_THROWS_AS(iw_elbo(g.bank, g.enc, g.data, bad, NoiseBlock::draw(3, 2, 2, 2, 1), spec), Error);
}
