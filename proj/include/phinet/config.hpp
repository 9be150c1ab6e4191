#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace phinet {

struct ModelConfig {
  int image_size = 32;
  int patch_size = 8;
  int channels = 3;
  int d = 64;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int m = 8;  // latent variables
  int c = 8;  // categories per latent variable
  int decoder_depth = 4;
  int hidden_prior = 128;
  bool use_pos_embed = true;

  int grid() const { return image_size / patch_size; }
  int n_p() const { return grid() * grid() + 1; }
  int patch_dim() const { return channels * patch_size * patch_size; }

  // Throws ConfigError on a violated invariant.
  void validate() const;

  static ModelConfig desk();
  static ModelConfig paper();
  // Tiny 64-bit gradient-check configuration: d=8, n_p=5, m=2, c=3, depth 1.
  static ModelConfig micro();
};

enum class DecoderKind { transformer, linear };

// One row of the ablation matrix.
struct LossFlags {
  bool symmetric = true;
  bool use_h = true;
  DecoderKind g_kind = DecoderKind::transformer;
  bool use_noise = true;
  bool use_ema_target = true;
  bool sg_prior = true;
  bool sg_post = false;

  bool operator==(const LossFlags&) const = default;

  static LossFlags proposed() { return {}; }
};

struct AblationRow {
  std::string name;
  LossFlags flags;
};

// The nine ablation rows, ending with the proposed configuration.
const std::vector<AblationRow>& ablation_rows();
const AblationRow& ablation_row(const std::string& name);

struct ObjectiveConfig {
  double beta = 0.01;
  double alpha = 0.8;
  double sigma_eps = 0.5;
  LossFlags flags;
  // Differentiable stand-in used by gradient checks: the posterior
  // probabilities replace the one-hot sample, the KL gets its full gradient
  // on both sides and no stop-gradient is applied to the heads.
  bool smooth_surrogate = false;
};

enum class EmaCadence { per_epoch, per_step };

struct DataConfig {
  int n_videos = 16;
  int frames = 64;
  int n_shapes_min = 1;
  int n_shapes_max = 3;
  std::uint64_t seed = 0;
  int k_min = 4;
  int k_max = 48;
  int repeated_sampling = 2;
  double crop_min = 0.5;
  double crop_max = 1.0;
  double hflip_p = 0.5;
  bool static_scene = false;  // zero velocity: every frame equals the first
};

struct TrainConfig {
  double lr = 1.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.05;
  int warmup_epochs = 40;
  int total_epochs = 400;
  int batch_size = 768;
  double gamma = 0.99;
  EmaCadence ema_cadence = EmaCadence::per_epoch;
  double clip_grad_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  int checkpoint_every = 1;
  int keep_checkpoints = 0;  // 0 keeps every checkpoint
  ObjectiveConfig objective;

  void validate() const;
};

struct PropagationParams {
  int top_k = 7;
  int radius = 30;
  int queue = 30;
  double temperature = 0.1;
  bool upsample = false;

  void validate() const;

  static PropagationParams davis() { return {7, 30, 30}; }
  static PropagationParams vip() { return {7, 5, 3}; }
  static PropagationParams jhmdb() { return {10, 5, 30}; }
  static PropagationParams protocol(const std::string& name);
};

// Everything a training run needs, resolved from presets, file and flags.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  PropagationParams eval;
};

RunConfig desk_preset();
RunConfig paper_preset();
RunConfig preset(const std::string& name);

std::string to_string(DecoderKind kind);
DecoderKind decoder_kind_from_string(const std::string& s);
std::string to_string(EmaCadence cadence);
EmaCadence ema_cadence_from_string(const std::string& s);

// Flat `key = value` text with one section per module. Unknown keys are errors.
std::string to_config_text(const RunConfig& cfg);
RunConfig parse_config_text(const std::string& text, RunConfig base);
RunConfig load_config_file(const std::string& path, RunConfig base);

}  // namespace phinet
