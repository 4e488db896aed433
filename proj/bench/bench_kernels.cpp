// Serial reference against the OpenMP kernels. Set OMP_NUM_THREADS or
// IFA_THREADS to vary the thread count.

#include <benchmark/benchmark.h>

#include <numeric>

#include "ifa/data.hpp"
#include "ifa/encoder.hpp"
#include "ifa/grm.hpp"
#include "ifa/objective.hpp"
#include "ifa/postfit.hpp"
#include "ifa/trainer.hpp"

namespace {

using namespace ifa;

struct Setup {
  Dataset data;
  ItemBank bank;
  EncoderParams enc;
  std::vector<std::size_t> rows;
  NoiseBlock noise;
  ObjectiveSpec spec{2, 2, WeightMode::algorithm1, 1.0};

  explicit Setup(std::size_t batch) {
    const auto gp = simple_structure_template(5, 0);
    data = simulate(gp, 2000, 1);
    bank = init_item_bank(data.n_items, 5, data.category_counts, 2);
    const auto cols = item_offsets(data.category_counts).back();
    enc = init_encoder({cols, {default_hidden_size(cols, 5)}, 5}, 3);
    rows.resize(batch);
    std::iota(rows.begin(), rows.end(), 0);
    noise = NoiseBlock::draw(batch, 2, 2, 5, 4);
  }
};

void BM_objective_serial(benchmark::State& st) {
  Setup s(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) {
    auto g = kernels::objective_grad_serial(s.bank, s.enc, s.data, s.rows, s.noise, s.spec);
    benchmark::DoNotOptimize(g.grad.data());
  }
}

void BM_objective_omp(benchmark::State& st) {
  Setup s(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) {
    auto g = kernels::objective_grad_omp(s.bank, s.enc, s.data, s.rows, s.noise, s.spec);
    benchmark::DoNotOptimize(g.grad.data());
  }
}

FittedModel bench_model(const Setup& s) {
  FittedModel m;
  m.item_bank = s.bank;
  m.encoder = s.enc;
  m.config.latent_dim = 5;
  return m;
}

void BM_loglik_serial(benchmark::State& st) {
  Setup s(8);
  const auto m = bench_model(s);
  const auto holdout = s.data.select_rows(std::vector<std::size_t>(s.rows.begin(), s.rows.end()));
  for (auto _ : st) {
    auto v = kernels::approx_loglik_serial(m, holdout, static_cast<std::size_t>(st.range(0)), 5);
    benchmark::DoNotOptimize(v.data());
  }
}

void BM_loglik_omp(benchmark::State& st) {
  Setup s(8);
  const auto m = bench_model(s);
  const auto holdout = s.data.select_rows(std::vector<std::size_t>(s.rows.begin(), s.rows.end()));
  for (auto _ : st) {
    auto v = kernels::approx_loglik_omp(m, holdout, static_cast<std::size_t>(st.range(0)), 5);
    benchmark::DoNotOptimize(v.data());
  }
}

}  // namespace

BENCHMARK(BM_objective_serial)->Arg(128)->Arg(1024)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_objective_omp)->Arg(128)->Arg(1024)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_loglik_serial)->Arg(500)->Arg(5000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_loglik_omp)->Arg(500)->Arg(5000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
