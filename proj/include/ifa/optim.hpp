#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ifa {

struct AmsGradConfig {
  double eta = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double denom_eps = 1e-8;
};

struct Hyperparameters {
  double eta;
  double beta1;
  double beta2;
  std::size_t batch_size;
  double fallback_eta;  // used when the objective diverges at eta
};

Hyperparameters defaults();

struct AmsGradState {
  AmsGradConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::vector<double> v_hat;
  std::uint64_t t = 0;

  AmsGradState() = default;
  AmsGradState(std::size_t dim, AmsGradConfig cfg);
};

// One descent step on params using grad (the caller passes the gradient of
// the quantity to be minimized). Throws NumericalError on a non-finite
// gradient entry, leaving state and params untouched.
void step(AmsGradState& state, std::span<double> params, std::span<const double> grad);

}  // namespace ifa
