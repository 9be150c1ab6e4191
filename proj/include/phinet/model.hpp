#pragma once

#include <cstdint>
#include <random>

#include "phinet/backbone.hpp"
#include "phinet/config.hpp"
#include "phinet/hippocampus.hpp"
#include "phinet/params.hpp"

namespace phinet {

// Fresh trainable parameters: encoder f, CA3 h, decoder g and both latent heads.
template <typename Scalar>
ParameterSet<Scalar> init_parameters(const ModelConfig& cfg, DecoderKind g_kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet<Scalar> ps;
  init_encoder(ps, cfg, rng);
  init_hippocampus(ps, cfg, g_kind, rng);
  return ps;
}

}  // namespace phinet
