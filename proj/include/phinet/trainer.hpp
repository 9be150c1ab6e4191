#pragma once

// Optimisation loop: AdamW with warmup + cosine schedule, per-pair loss on
// its own tape averaged over the batch, EMA per cadence, CSV metrics and
// epoch checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "phinet/checkpoint.hpp"
#include "phinet/config.hpp"
#include "phinet/ema.hpp"
#include "phinet/errors.hpp"
#include "phinet/model.hpp"
#include "phinet/objective.hpp"
#include "phinet/seeding.hpp"
#include "phinet/videodata.hpp"

namespace phinet {

struct MetricsRow {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double sim2 = 0.0;
  double sim1_kl = 0.0;
  double sigma2 = 0.0;
  double grad_norm = 0.0;
  double feature_std = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,epoch,lr,total,sim2,sim1_kl,sigma2,grad_norm,feature_std";

std::string metrics_csv_row(const MetricsRow& r);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

inline int steps_per_epoch(const RunConfig& cfg) {
  const int pairs = cfg.data.n_videos * cfg.data.repeated_sampling;
  return (pairs + cfg.train.batch_size - 1) / cfg.train.batch_size;
}

// Linear warmup from 0 to the base rate, then cosine decay to 0.
inline double lr_schedule(std::int64_t step, double base_lr, std::int64_t warmup_steps, std::int64_t total_steps) {
  if (step < 0) throw ConfigError("lr_schedule: negative step");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step >= total_steps) return 0.0;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(std::max<std::int64_t>(1, total_steps - warmup_steps));
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

inline double lr_schedule(std::int64_t step, const RunConfig& cfg) {
  const std::int64_t spe = steps_per_epoch(cfg);
  return lr_schedule(step, cfg.train.lr, spe * cfg.train.warmup_epochs, spe * cfg.train.total_epochs);
}

// Names excluded from weight decay, in parameter order.
template <typename Scalar>
std::vector<std::string> decay_exclusions(const ParameterSet<Scalar>& params) {
  std::vector<std::string> out;
  for (const auto& [name, p] : params)
    if (p.trainable && !p.decay) out.push_back(name);
  return out;
}

// Decoupled weight decay; lr = 0 leaves the parameters untouched.
template <typename Scalar>
void adamw_update(ParameterSet<Scalar>& params, const Gradients<Scalar>& grads, AdamState<Scalar>& st,
                  const TrainConfig& tc, double lr) {
  ++st.step;
  const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(st.step));
  const Scalar b1 = static_cast<Scalar>(tc.beta1), b2 = static_cast<Scalar>(tc.beta2);
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Mat<Scalar>& g = git->second;
    auto [mit, m_fresh] = st.m.try_emplace(name, Mat<Scalar>::Zero(g.rows(), g.cols()));
    auto [vit, v_fresh] = st.v.try_emplace(name, Mat<Scalar>::Zero(g.rows(), g.cols()));
    Mat<Scalar>& m = mit->second;
    Mat<Scalar>& v = vit->second;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    if (lr == 0.0) continue;
    const Scalar step = static_cast<Scalar>(lr / bc1);
    const Scalar denom_scale = static_cast<Scalar>(1.0 / std::sqrt(bc2));
    const Scalar eps = static_cast<Scalar>(tc.adam_eps);
    Mat<Scalar> update = (m.array() / ((v.array().sqrt() * denom_scale) + eps)).matrix();
    if (p.decay) p.value *= static_cast<Scalar>(1.0 - lr * tc.weight_decay);
    p.value -= step * update;
  }
}

// Mean over dimensions of the per-dimension std across the columns.
template <typename Scalar>
double feature_std(const Mat<Scalar>& tokens) {
  if (tokens.cols() < 2) return 0.0;
  const Eigen::MatrixXd x = tokens.template cast<double>();
  const Eigen::VectorXd mean = x.rowwise().mean();
  const Eigen::VectorXd var = (x.colwise() - mean).cwiseAbs2().rowwise().mean();
  return var.cwiseSqrt().mean();
}

// Order-sensitive FNV-1a over the raw bytes of every entry.
template <typename Scalar>
std::uint64_t parameter_hash(const ParameterSet<Scalar>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, p] : params) {
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
    for (std::size_t i = 0; i < sizeof(Scalar) * static_cast<std::size_t>(p.value.size()); ++i)
      h = (h ^ bytes[i]) * 1099511628211ull;
  }
  return h;
}

template <typename Scalar>
TrainState<Scalar> init_train_state(const RunConfig& cfg, const std::vector<LabeledVideo>& dataset) {
  cfg.model.validate();
  cfg.train.validate();
  TrainState<Scalar> s;
  s.config = cfg;
  s.xi = init_parameters<Scalar>(cfg.model, cfg.train.objective.flags.g_kind, mix_seed({cfg.train.seed, 1}));
  if (!dataset.empty()) {
    const auto [mean, std] = channel_statistics(dataset);
    for (int c = 0; c < cfg.model.channels; ++c) {
      s.xi["f.pixel_mean"](c, 0) = static_cast<Scalar>(mean[c]);
      s.xi["f.pixel_std"](c, 0) = static_cast<Scalar>(std::max(std[c], 1e-3));
    }
  }
  s.ema = init_long(s.xi, cfg.train.gamma);
  s.rng.seed(mix_seed({cfg.train.seed, 2}));
  return s;
}

struct StepResult {
  LossBreakdown loss;
  double grad_norm = 0.0;
  double feature_std = 0.0;
  double lr = 0.0;
};

// One AdamW update from the mean loss over `batch`. Each pair gets its own
// tape and its own generator seeded from state.rng, drawn in batch order.
template <typename Scalar>
StepResult train_step(TrainState<Scalar>& state, const std::vector<FramePair>& batch) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  const RunConfig& cfg = state.config;
  const TrainConfig& tc = cfg.train;
  const bool guard_long = tc.ema_cadence == EmaCadence::per_epoch;
  const std::uint64_t long_hash = guard_long ? parameter_hash(state.ema.xi_long) : 0;

  StepResult res;
  res.lr = lr_schedule(state.step, cfg);
  Gradients<Scalar> grads;
  const Scalar weight = static_cast<Scalar>(1.0 / static_cast<double>(batch.size()));
  const int n_patch = cfg.model.n_p() - 1;
  Mat<Scalar> tokens(cfg.model.d, n_patch * static_cast<Eigen::Index>(batch.size()));

  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::mt19937_64 pair_rng(state.rng());
    ad::Tape<Scalar> tape;
    Binder<Scalar> online(tape, state.xi, true);
    Binder<Scalar> slow(tape, state.ema.xi_long, false);
    auto out = phinet_loss_symmetric(online, slow, batch[i].x_t, batch[i].x_tk, tc.objective, cfg.model, pair_rng);
    if (!std::isfinite(out.breakdown.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << state.step << " (total=" << out.breakdown.total
          << " sim2=" << out.breakdown.sim2 << " sim1_kl=" << out.breakdown.sim1_kl << ")";
      throw NumericalError("trainer.train_step", msg.str());
    }
    tape.backward(out.total);
    online.collect(grads, weight);
    tokens.middleCols(static_cast<Eigen::Index>(i) * n_patch, n_patch) = out.source_patch_tokens;
    const double w = 1.0 / static_cast<double>(batch.size());
    res.loss.total += w * out.breakdown.total;
    res.loss.sim2 += w * out.breakdown.sim2;
    res.loss.sim1_kl += w * out.breakdown.sim1_kl;
    res.loss.sim1_balanced += w * out.breakdown.sim1_balanced;
    res.loss.forward_total += w * out.breakdown.forward_total;
    res.loss.reverse_total += w * out.breakdown.reverse_total;
    res.loss.sigma2 = out.breakdown.sigma2;
  }

  res.grad_norm = static_cast<double>(global_norm(grads));
  if (!std::isfinite(res.grad_norm))
    throw NumericalError("trainer.train_step", "non-finite gradient norm at step " + std::to_string(state.step));
  if (tc.clip_grad_norm > 0.0 && res.grad_norm > tc.clip_grad_norm) {
    const Scalar s = static_cast<Scalar>(tc.clip_grad_norm / res.grad_norm);
    for (auto& [name, g] : grads) g *= s;
  }
  res.feature_std = feature_std(tokens);

  adamw_update(state.xi, grads, state.adam, tc, res.lr);
  ++state.step;
  if (guard_long && parameter_hash(state.ema.xi_long) != long_hash)
    throw ProtocolError("trainer.train_step: the slow encoder changed during an optimizer step");
  if (tc.ema_cadence == EmaCadence::per_step) ema_update(state.ema, state.xi);
  return res;
}

// Training pairs of one epoch in shuffled order: repeated_sampling draws per
// video, each from its own (seed, epoch, video, draw) generator.
std::vector<FramePair> epoch_pairs(const std::vector<LabeledVideo>& dataset, const RunConfig& cfg, int epoch);

struct TrainOptions {
  std::filesystem::path run_dir;  // empty: nothing written to disk
  bool resume = false;
  int stop_after_epoch = -1;  // simulate an interruption after this epoch
  std::function<void(const MetricsRow&)> on_step;
};

template <typename Scalar>
struct TrainResult {
  TrainState<Scalar> state;
  std::vector<MetricsRow> log;
};

namespace detail {

void write_run_header(const std::filesystem::path& run_dir, const RunConfig& cfg,
                      const std::vector<std::string>& exclusions);
void prune_checkpoints(const std::filesystem::path& run_dir, int keep);
// Rewrites the metrics CSV keeping rows with step < `steps`.
void truncate_metrics(const std::filesystem::path& path, std::int64_t steps);

}  // namespace detail

template <typename Scalar>
TrainResult<Scalar> train(const RunConfig& cfg, const std::vector<LabeledVideo>& dataset,
                          const TrainOptions& opt = {}) {
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  const bool on_disk = !opt.run_dir.empty();
  TrainResult<Scalar> result;
  auto& state = result.state;

  const auto metrics_path = opt.run_dir / "metrics.csv";
  std::filesystem::path resume_from;
  if (on_disk && opt.resume) resume_from = latest_checkpoint(opt.run_dir);
  if (!resume_from.empty()) {
    state = load_checkpoint<Scalar>(resume_from);
    state.config.train.total_epochs = cfg.train.total_epochs;
    detail::truncate_metrics(metrics_path, state.step);
  } else {
    state = init_train_state<Scalar>(cfg, dataset);
    if (on_disk) {
      std::filesystem::create_directories(opt.run_dir);
      std::ofstream(metrics_path) << kMetricsHeader << "\n";
    }
  }
  if (on_disk) detail::write_run_header(opt.run_dir, state.config, decay_exclusions(state.xi));

  const RunConfig& rc = state.config;
  if (rc.train.total_epochs == 0) {
    if (on_disk) save_checkpoint(state, checkpoint_path(opt.run_dir, 0));
    return result;
  }

  std::ofstream metrics;
  if (on_disk) metrics.open(metrics_path, std::ios::app);
  const std::size_t bs = static_cast<std::size_t>(rc.train.batch_size);

  while (state.epoch < rc.train.total_epochs) {
    const int epoch = state.epoch;
    const auto pairs = epoch_pairs(dataset, rc, epoch);
    for (std::size_t start = 0; start < pairs.size(); start += bs) {
      const std::vector<FramePair> batch(pairs.begin() + static_cast<std::ptrdiff_t>(start),
                                         pairs.begin() + static_cast<std::ptrdiff_t>(std::min(pairs.size(), start + bs)));
      const std::int64_t step = state.step;
      const StepResult sr = train_step(state, batch);
      MetricsRow row{step, epoch, sr.lr, sr.loss.total, sr.loss.sim2, sr.loss.sim1_kl, sr.loss.sigma2,
                     sr.grad_norm, sr.feature_std};
      result.log.push_back(row);
      if (on_disk) metrics << metrics_csv_row(row) << "\n" << std::flush;
      if (opt.on_step) opt.on_step(row);
    }
    if (rc.train.ema_cadence == EmaCadence::per_epoch) ema_update(state.ema, state.xi);
    state.epoch = epoch + 1;
    const bool last = state.epoch == rc.train.total_epochs;
    if (on_disk && (last || state.epoch % rc.train.checkpoint_every == 0)) {
      save_checkpoint(state, checkpoint_path(opt.run_dir, state.epoch));
      detail::prune_checkpoints(opt.run_dir, rc.train.keep_checkpoints);
    }
    if (opt.stop_after_epoch >= 0 && state.epoch >= opt.stop_after_epoch) break;
  }
  return result;
}

}  // namespace phinet
