#include "ifa/optim.hpp"

#include <cmath>
#include <string>

#include "ifa/errors.hpp"

namespace ifa {

Hyperparameters defaults() { return {0.01, 0.9, 0.999, 128, 0.005}; }

AmsGradState::AmsGradState(std::size_t dim, AmsGradConfig cfg)
    : config(cfg), m(dim, 0.0), v(dim, 0.0), v_hat(dim, 0.0) {}

void step(AmsGradState& state, std::span<double> params, std::span<const double> grad) {
  const std::size_t d = params.size();
  if (grad.size() != d || state.m.size() != d) {
    throw ConfigError("AMSGrad dimension mismatch: params " + std::to_string(d) + ", grad " +
                      std::to_string(grad.size()) + ", state " + std::to_string(state.m.size()));
  }
  for (std::size_t k = 0; k < d; ++k) {
    if (!std::isfinite(grad[k])) {
      throw NumericalError("non-finite gradient at index " + std::to_string(k));
    }
  }
  const auto& c = state.config;
  for (std::size_t k = 0; k < d; ++k) {
    const double g = grad[k];
    state.m[k] = c.beta1 * state.m[k] + (1.0 - c.beta1) * g;
    state.v[k] = c.beta2 * state.v[k] + (1.0 - c.beta2) * g * g;
    if (state.v[k] > state.v_hat[k]) state.v_hat[k] = state.v[k];
    const double denom = std::sqrt(state.v_hat[k]) + c.denom_eps;
    // With denom_eps = 0 an all-zero gradient history leaves m = 0 and
    // denom = 0; skip rather than produce 0/0.
    if (denom > 0.0) params[k] -= c.eta * state.m[k] / denom;
  }
  ++state.t;
}

}  // namespace ifa
