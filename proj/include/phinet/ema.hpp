#pragma once

// Slow (neocortical) encoder f_long: an exponential moving average of the
// encoder parameters ξ. It is read by the loss but never differentiated.

#include <cstdint>
#include <optional>

#include "phinet/errors.hpp"
#include "phinet/params.hpp"

namespace phinet {

template <typename Scalar>
struct EmaState {
  ParameterSet<Scalar> xi_long;
  double gamma = 0.99;
  std::int64_t update_count = 0;
};

// Copies every "f." entry of `params`, buffers included.
template <typename Scalar>
EmaState<Scalar> init_long(const ParameterSet<Scalar>& params, double gamma = 0.99) {
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("init_long: gamma must lie in [0, 1]");
  EmaState<Scalar> s;
  s.xi_long = params.subset("f.");
  s.gamma = gamma;
  return s;
}

// ξ_long ← γ·ξ_long + (1 − γ)·ξ elementwise on trainable entries;
// non-trainable buffers are copied.
template <typename Scalar>
void ema_update(EmaState<Scalar>& state, const ParameterSet<Scalar>& xi, std::optional<double> gamma_override = {}) {
  const double gamma = gamma_override.value_or(state.gamma);
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("ema_update: gamma must lie in [0, 1]");
  const ParameterSet<Scalar> encoder = xi.subset("f.");
  if (!state.xi_long.same_structure(encoder))
    throw ConfigError("ema_update: parameter structure of ξ and ξ_long differs");
  const Scalar g = static_cast<Scalar>(gamma);
  const Scalar one_minus = static_cast<Scalar>(1.0 - gamma);
  auto src = encoder.begin();
  for (auto& [name, p] : state.xi_long) {
    const auto& q = src->second;
    if (p.trainable)
      p.value = g * p.value + one_minus * q.value;
    else
      p.value = q.value;
    ++src;
  }
  ++state.update_count;
}

}  // namespace phinet
