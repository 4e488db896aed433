#include "ifa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ifa/errors.hpp"
#include "ifa/params.hpp"
#include "ifa/rng.hpp"

namespace ifa {

void FitConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent dimension P must be at least 1");
  if (iw_samples < 1) throw ConfigError("R (importance-weighted samples) must be at least 1");
  if (mc_samples < 1) throw ConfigError("S (Monte Carlo samples) must be at least 1");
  if (batch_size < 1) throw ConfigError("mini-batch size M must be at least 1");
  if (window < 1 || patience < 1) throw ConfigError("window and patience must be at least 1");
  if (!(eta > 0.0)) throw ConfigError("learning rate must be positive");
  if (beta1 < 0.0 || beta1 > 1.0 || beta2 < 0.0 || beta2 > 1.0) {
    throw ConfigError("beta1 and beta2 must lie in [0, 1]");
  }
  if (denom_eps < 0.0) throw ConfigError("denominator epsilon must be non-negative");
  if (hidden_layers < 1) throw ConfigError("the encoder needs at least one hidden layer");
  if (!(scaling > 0.0)) throw ConfigError("scaling constant D must be positive");
}

double anneal_factor(std::size_t t, std::size_t tau) noexcept {
  if (tau == 0 || t >= tau) return 1.0;
  return static_cast<double>(t) / static_cast<double>(tau);
}

ConvergenceMonitor::ConvergenceMonitor(std::size_t window, std::size_t patience)
    : window_(window), patience_(patience) {
  if (window < 1 || patience < 1) throw ConfigError("window and patience must be at least 1");
}

bool ConvergenceMonitor::push(double value) {
  window_sum_ += value;
  if (++window_count_ < window_) return false;
  const double avg = window_sum_ / static_cast<double>(window_count_);
  window_sum_ = 0.0;
  window_count_ = 0;
  ++comparisons_;
  if (has_best_ && avg > best_) {
    best_ = avg;
    stale_ = 0;
  } else {
    if (!has_best_) {
      best_ = avg;
      has_best_ = true;
    }
    ++stale_;
  }
  return stale_ >= patience_;
}

ConvergenceMonitor::State ConvergenceMonitor::state() const {
  return {best_, has_best_, stale_, comparisons_, window_sum_, window_count_};
}

void ConvergenceMonitor::restore(const State& s) {
  best_ = s.best;
  has_best_ = s.has_best;
  stale_ = s.stale;
  comparisons_ = s.comparisons;
  window_sum_ = s.window_sum;
  window_count_ = s.window_count;
}

namespace {

Dataset with_categories(const Dataset& data, const FitConfig& cfg) {
  if (cfg.category_counts.empty()) return data;
  if (cfg.category_counts.size() != data.n_items) {
    throw ConfigError("category_counts override needs one entry per item");
  }
  Dataset d = data;
  d.category_counts = cfg.category_counts;
  d.validate();
  return d;
}

void init_model(const Dataset& data, const FitConfig& cfg, FittedModel& model) {
  const std::size_t P = cfg.latent_dim;
  model.item_bank = init_item_bank(data.n_items, P, data.category_counts,
                                   derive_seed(cfg.seed, streams::kItemInit), cfg.scaling);
  const std::size_t input = item_offsets(data.category_counts).back();
  const std::size_t H = cfg.hidden_size ? cfg.hidden_size : default_hidden_size(input, P);
  model.encoder = init_encoder({input, std::vector<std::size_t>(cfg.hidden_layers, H), P},
                               derive_seed(cfg.seed, streams::kEncoderInit));
}

}  // namespace

FittedModel fit(const Dataset& raw_data, const FitConfig& cfg, const FitOptions& options) {
  cfg.validate();
  raw_data.validate();
  const Dataset data = with_categories(raw_data, cfg);
  if (data.n_respondents == 0) throw DataError("cannot fit an empty dataset");

  FittedModel model;
  model.config = cfg;
  Rng rng(derive_seed(cfg.seed, streams::kTraining));
  ConvergenceMonitor monitor(cfg.window, cfg.patience);
  AmsGradState opt;
  std::size_t streak = 0;

  if (options.resume) {
    const auto& prev = *options.resume;
    if (!prev.train_state) throw ConfigError("model to resume carries no training state");
    if (prev.item_bank.category_counts != data.category_counts || prev.item_bank.latent_dim != cfg.latent_dim) {
      throw DataError("model to resume does not match the data or latent dimension");
    }
    model.item_bank = prev.item_bank;
    model.encoder = prev.encoder;
    model.trace = prev.trace;
    model.iterations_run = prev.iterations_run;
    opt = prev.train_state->optimizer;
    std::istringstream(prev.train_state->rng_state) >> rng;
    monitor.restore(prev.train_state->monitor);
    streak = prev.train_state->nonfinite_streak;
    if (prev.converged) {
      model.converged = true;
      model.best_window_average = prev.best_window_average;
      model.train_state = prev.train_state;
      return model;
    }
  } else {
    init_model(data, cfg, model);
    opt = AmsGradState(make_layout(model.item_bank, model.encoder).size,
                       {cfg.eta, cfg.beta1, cfg.beta2, cfg.denom_eps});
  }
  opt.config = {cfg.eta, cfg.beta1, cfg.beta2, cfg.denom_eps};

  const std::size_t P = cfg.latent_dim;
  const std::size_t M = cfg.batch_size;
  std::vector<double> xi = pack(model.item_bank, model.encoder);
  std::vector<std::size_t> rows(M);
  std::uniform_int_distribution<std::size_t> pick(0, data.n_respondents - 1);
  ObjectiveSpec spec{cfg.iw_samples, cfg.mc_samples, cfg.weight_mode, 1.0};
  model.trace.reserve(std::min<std::size_t>(cfg.max_iters, 1u << 20));

  for (std::size_t t = model.iterations_run; t < cfg.max_iters; ++t) {
    for (auto& r : rows) r = pick(rng);
    const auto noise = NoiseBlock::draw(M, spec.R, spec.S, P, rng);
    spec.kl_scale = anneal_factor(t, cfg.anneal_iters);
    auto og = kernels::objective_grad_omp(model.item_bank, model.encoder, data, rows, noise, spec);
    const double value = og.value.iw_elbo;
    const bool finite = std::isfinite(value) &&
                        std::all_of(og.grad.begin(), og.grad.end(), [](double g) { return std::isfinite(g); });
    model.trace.push_back(value);
    model.iterations_run = t + 1;
    if (!finite) {
      if (++streak >= 3) {
        throw NumericalError("objective diverged at iteration " + std::to_string(t) +
                             " (three consecutive non-finite values); retry with a smaller "
                             "learning rate such as eta = 0.005");
      }
      continue;
    }
    streak = 0;
    for (auto& g : og.grad) g = -g;
    step(opt, xi, og.grad);
    unpack(xi, model.item_bank, model.encoder);

    if (t >= cfg.anneal_iters) {
      const bool stop = monitor.push(value);
      if (monitor.comparisons() > 0) model.best_window_average = monitor.best();
      if (options.progress && monitor.state().window_count == 0) {
        *options.progress << "iter " << (t + 1) << "  window-avg-best " << std::setprecision(8)
                          << monitor.best() << "  stale " << monitor.stale() << '\n';
      }
      if (stop) {
        model.converged = true;
        break;
      }
    } else if (options.progress && (t + 1) % cfg.window == 0) {
      *options.progress << "iter " << (t + 1) << "  annealing " << std::setprecision(4)
                        << anneal_factor(t + 1, cfg.anneal_iters) << "  iw-elbo "
                        << std::setprecision(8) << value << '\n';
    }
  }

  TrainState ts;
  ts.optimizer = std::move(opt);
  std::ostringstream rs;
  rs << rng;
  ts.rng_state = rs.str();
  ts.monitor = monitor.state();
  ts.nonfinite_streak = streak;
  model.train_state = std::move(ts);
  return model;
}

double evaluate_iw_elbo(const FittedModel& model, const Dataset& data, std::size_t R, std::size_t S,
                        std::uint64_t seed) {
  constexpr std::size_t kBlock = 4096;
  const Dataset d = with_categories(data, model.config);
  const std::size_t P = model.item_bank.latent_dim;
  ObjectiveSpec spec{R, S, model.config.weight_mode, 1.0};
  double sum = 0.0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0, block = 0; start < d.n_respondents; start += kBlock, ++block) {
    const std::size_t end = std::min(d.n_respondents, start + kBlock);
    rows.resize(end - start);
    for (std::size_t i = start; i < end; ++i) rows[i - start] = i;
    const auto noise = NoiseBlock::draw(rows.size(), R, S, P, derive_seed(seed, streams::kEvaluation, block));
    const auto v = iw_elbo(model.item_bank, model.encoder, d, rows, noise, spec);
    for (double e : v.per_respondent) sum += e;
  }
  return sum / static_cast<double>(d.n_respondents);
}

}  // namespace ifa
