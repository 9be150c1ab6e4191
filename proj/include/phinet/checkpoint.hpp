#pragma once

// Training state and its on-disk form.
//
// File layout: a text header followed by a little-endian binary payload.
//
//   PHINET-CHECKPOINT 1
//   dtype = float32
//   epoch = 3
//   ...
//   config_bytes = <n>
//   array <name> <dtype> <rows> <cols> <offset> <trainable> <decay>
//   ...
//   end
//   <n bytes of config text><array payload, column-major>
//
// Array names are prefixed by their role: xi/, adam.m/, adam.v/, ema/.
// Offsets are relative to the start of the payload.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "phinet/config.hpp"
#include "phinet/ema.hpp"
#include "phinet/params.hpp"

namespace phinet {

inline constexpr int kCheckpointVersion = 1;

template <typename Scalar>
struct AdamState {
  std::int64_t step = 0;
  Gradients<Scalar> m, v;
};

template <typename Scalar>
struct TrainState {
  ParameterSet<Scalar> xi;
  AdamState<Scalar> adam;
  EmaState<Scalar> ema;
  int epoch = 0;          // completed epochs
  std::int64_t step = 0;  // completed optimizer steps
  std::mt19937_64 rng;
  RunConfig config;
};

template <typename Scalar>
using Checkpoint = TrainState<Scalar>;

template <typename Scalar>
void save_checkpoint(const TrainState<Scalar>& state, const std::filesystem::path& path);

// Throws IoError on unreadable or truncated files and on a version or
// element-type mismatch.
template <typename Scalar>
TrainState<Scalar> load_checkpoint(const std::filesystem::path& path);

// Element type stored in a checkpoint, without reading the payload.
std::string checkpoint_dtype(const std::filesystem::path& path);

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int epoch);
// Highest-epoch checkpoint under run_dir/checkpoints, or empty.
std::filesystem::path latest_checkpoint(const std::filesystem::path& run_dir);

}  // namespace phinet
