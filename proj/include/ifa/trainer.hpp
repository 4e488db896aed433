#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ifa/data.hpp"
#include "ifa/encoder.hpp"
#include "ifa/grm.hpp"
#include "ifa/objective.hpp"
#include "ifa/optim.hpp"

namespace ifa {

struct FitConfig {
  std::size_t latent_dim = 0;  // P, required
  std::size_t iw_samples = 2;  // R
  std::size_t mc_samples = 2;  // S
  std::size_t batch_size = 128;  // M
  double eta = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double denom_eps = 1e-8;
  std::size_t anneal_iters = 1000;  // tau
  std::size_t window = 100;
  std::size_t patience = 10;
  std::size_t max_iters = 200000;
  std::uint64_t seed = 0;
  WeightMode weight_mode = WeightMode::algorithm1;
  std::size_t hidden_size = 0;    // 0: default_hidden_size
  std::size_t hidden_layers = 1;
  double scaling = kDefaultScaling;
  // Overrides of the per-item category counts; empty means "from data".
  std::vector<int> category_counts;

  // Throws ConfigError when a field is out of range.
  void validate() const;
};

// t / tau for t < tau, else 1. tau = 0 disables annealing.
double anneal_factor(std::size_t t, std::size_t tau) noexcept;

// Window-average stopping rule. Feed every post-annealing mini-batch
// IW-ELBO; every `window` values the window mean is compared against the
// best mean so far. Establishing the first best counts as a non-improving
// comparison, so constant input stops after exactly patience * window values.
class ConvergenceMonitor {
 public:
  ConvergenceMonitor(std::size_t window, std::size_t patience);

  // Returns true when fitting should stop.
  bool push(double value);

  std::size_t window() const { return window_; }
  std::size_t patience() const { return patience_; }
  double best() const { return best_; }
  std::size_t stale() const { return stale_; }
  std::size_t comparisons() const { return comparisons_; }

  struct State {
    double best;
    bool has_best;
    std::size_t stale;
    std::size_t comparisons;
    double window_sum;
    std::size_t window_count;
  };
  State state() const;
  void restore(const State& s);

 private:
  std::size_t window_;
  std::size_t patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  bool has_best_ = false;
  std::size_t stale_ = 0;
  std::size_t comparisons_ = 0;
  double window_sum_ = 0.0;
  std::size_t window_count_ = 0;
};

// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  AmsGradState optimizer;
  std::string rng_state;
  ConvergenceMonitor::State monitor{};
  std::size_t nonfinite_streak = 0;
};

struct FittedModel {
  ItemBank item_bank;
  EncoderParams encoder;
  FitConfig config;
  std::vector<double> trace;  // mini-batch IW-ELBO per iteration
  bool converged = false;
  std::size_t iterations_run = 0;
  double best_window_average = -std::numeric_limits<double>::infinity();
  std::optional<TrainState> train_state;
};

struct FitOptions {
  std::ostream* progress = nullptr;  // one line per window when set
  // Continue from a previous model (must come from the same data and
  // config, apart from max_iters).
  const FittedModel* resume = nullptr;
};

FittedModel fit(const Dataset& data, const FitConfig& cfg, const FitOptions& options = {});

// Full-data IW-ELBO of a fitted model (mean over respondents), O(N).
double evaluate_iw_elbo(const FittedModel& model, const Dataset& data, std::size_t R,
                        std::size_t S, std::uint64_t seed);

}  // namespace ifa
