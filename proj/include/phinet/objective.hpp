#pragma once

// Per-pair training objective: Sim-2 alignment against the slow encoder,
// Sim-1 balanced KL between posterior and prior, and the symmetric sum of
// the chronological and reverse-chronological directions.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "phinet/autodiff.hpp"
#include "phinet/backbone.hpp"
#include "phinet/config.hpp"
#include "phinet/errors.hpp"
#include "phinet/frame.hpp"
#include "phinet/hippocampus.hpp"
#include "phinet/params.hpp"

namespace phinet {

// Likelihood variance σ² = d·(n_p − 1)·β / (2m).
inline double sigma_squared(int d, int n_p, double beta, int m) {
  if (!(beta > 0.0)) throw ConfigError("sigma_squared: beta must be positive");
  if (d <= 0 || n_p < 2 || m <= 0) throw ConfigError("sigma_squared: bad dimensions");
  return static_cast<double>(d) * static_cast<double>(n_p - 1) * beta / (2.0 * static_cast<double>(m));
}

inline double sigma_squared(const ModelConfig& cfg, double beta) {
  return sigma_squared(cfg.d, cfg.n_p(), beta, cfg.m);
}

// (1 / 2σ²)·‖target − Y‖² over every entry. The target is gradient-stopped.
template <typename Scalar>
ad::Var<Scalar> sim2(ad::Var<Scalar> y, ad::Var<Scalar> target, double sigma2) {
  if (y.rows() != target.rows() || y.cols() != target.cols()) throw ConfigError("sim2: shape mismatch");
  if (!(sigma2 > 0.0)) throw ConfigError("sim2: sigma2 must be positive");
  return static_cast<Scalar>(1.0 / (2.0 * sigma2)) * ad::squared_distance(y, ad::detach(target));
}

// Σ_i Σ_j q_ij ln(q_ij / p_ij), with q and p the column softmaxes of the logits.
template <typename Scalar>
Scalar kl_categorical(const Mat<Scalar>& q_logits, const Mat<Scalar>& p_logits) {
  if (q_logits.rows() != p_logits.rows() || q_logits.cols() != p_logits.cols())
    throw ConfigError("kl_categorical: shape mismatch");
  if (!q_logits.allFinite() || !p_logits.allFinite())
    throw NumericalError("objective.kl_categorical", "non-finite logits");
  const Mat<Scalar> log_q = ad::log_softmax_cols_value<Scalar>(q_logits);
  const Mat<Scalar> log_p = ad::log_softmax_cols_value<Scalar>(p_logits);
  return (log_q.array().exp() * (log_q - log_p).array()).sum();
}

// Value: KL(q ‖ p). Gradient: w_p·∇KL(stop(q) ‖ p) into the prior logits and
// w_q·∇KL(q ‖ stop(p)) into the posterior logits.
template <typename Scalar>
ad::Var<Scalar> kl_weighted(ad::Var<Scalar> q_logits, ad::Var<Scalar> p_logits, double w_q, double w_p) {
  const Mat<Scalar>& qv = q_logits.value();
  const Mat<Scalar>& pv = p_logits.value();
  if (qv.rows() != pv.rows() || qv.cols() != pv.cols()) throw ConfigError("kl_balanced: shape mismatch");
  if (!qv.allFinite() || !pv.allFinite()) throw NumericalError("objective.kl_balanced", "non-finite logits");
  Mat<Scalar> log_q = ad::log_softmax_cols_value<Scalar>(qv);
  Mat<Scalar> log_p = ad::log_softmax_cols_value<Scalar>(pv);
  Mat<Scalar> q = log_q.array().exp().matrix();
  Mat<Scalar> diff = log_q - log_p;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> per_col = q.cwiseProduct(diff).colwise().sum();
  Mat<Scalar> out(1, 1);
  out(0, 0) = per_col.sum();
  const int iq = q_logits.id, ip = p_logits.id;
  const Scalar wq = static_cast<Scalar>(w_q), wp = static_cast<Scalar>(w_p);
  return q_logits.tape->record(
      std::move(out), {q_logits, p_logits},
      [iq, ip, wq, wp, q = std::move(q), diff = std::move(diff), per_col = std::move(per_col),
       log_p = std::move(log_p)](ad::Tape<Scalar>& t, int self) {
        const Scalar g = t.grad(self)(0, 0);
        if (t.requires_grad(iq) && wq != Scalar(0)) {
          Mat<Scalar> dq = q.cwiseProduct(diff - per_col.replicate(diff.rows(), 1));
          t.accumulate(iq, wq * g * dq);
        }
        if (t.requires_grad(ip) && wp != Scalar(0)) {
          Mat<Scalar> dp = log_p.array().exp().matrix() - q;
          t.accumulate(ip, wp * g * dp);
        }
      });
}

// Balanced KL: α of the gradient trains the prior, 1 − α the posterior.
template <typename Scalar>
ad::Var<Scalar> kl_balanced(ad::Var<Scalar> q_logits, ad::Var<Scalar> p_logits, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("kl_balanced: alpha must lie in [0, 1]");
  return kl_weighted(q_logits, p_logits, 1.0 - alpha, alpha);
}

struct LossBreakdown {
  double total = 0.0;
  double sim2 = 0.0;
  double sim1_kl = 0.0;
  double sim1_balanced = 0.0;
  double sigma2 = 0.0;
  // Per-direction copies; reverse is zero for the asymmetric loss.
  double forward_total = 0.0;
  double reverse_total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    total += o.total;
    sim2 += o.sim2;
    sim1_kl += o.sim1_kl;
    sim1_balanced += o.sim1_balanced;
    forward_total += o.forward_total;
    reverse_total += o.reverse_total;
    sigma2 = o.sigma2;
    return *this;
  }
};

template <typename Scalar>
struct LossResult {
  ad::Var<Scalar> total;
  LossBreakdown breakdown;
  Mat<Scalar> source_patch_tokens;  // online f(x_t) patch tokens, for collapse tracking
};

namespace detail {

template <typename Scalar>
void check_finite_loss(const ad::Var<Scalar>& v, const char* where) {
  if (!std::isfinite(static_cast<double>(v.item()))) throw NumericalError(where, "non-finite loss term");
}

}  // namespace detail

// One direction, x_src → x_tgt. `online` carries ξ, W_h, g and the heads;
// `slow` carries ξ_long and is read only when flags.use_ema_target is set.
// Random draws, in order: perturbation noise (when enabled), then the latent sample.
template <typename Scalar, typename Rng>
LossResult<Scalar> phinet_loss_asym(Binder<Scalar>& online, Binder<Scalar>& slow, const Frame& x_src,
                                    const Frame& x_tgt, const ObjectiveConfig& oc, const ModelConfig& cfg,
                                    Rng& rng) {
  const LossFlags& fl = oc.flags;
  const int n_patch = cfg.n_p() - 1;

  const Frame src_n = normalize(x_src, online.params());
  const Frame tgt_n = normalize(x_tgt, online.params());

  auto z_src = encode_normalized(online, src_n, cfg);
  auto z_noisy = encode_normalized(online, fl.use_noise ? perturb(tgt_n, oc.sigma_eps, rng) : tgt_n, cfg);

  auto z_hat = fl.use_h ? ca3_predict(online, z_src) : z_src;
  auto cls_hat = ad::cols(z_hat, 0, 1);

  const bool smooth = oc.smooth_surrogate;
  auto prior = prior_logits(online, cls_hat, cfg, fl.sg_prior && !smooth);
  auto post = posterior_logits(online, cls_hat, ad::cols(z_noisy, 0, 1), cfg, fl.sg_post && !smooth);
  auto r = smooth ? ad::softmax_cols(post) : sample_straight_through(post, rng);

  auto y = fl.g_kind == DecoderKind::transformer ? ca1_decode(online, z_hat, r, cfg) : linear_decode(online, z_hat, cfg);

  ad::Var<Scalar> target;
  if (fl.use_ema_target)
    target = ad::cols(encode_normalized(slow, normalize(x_tgt, slow.params()), cfg), 1, n_patch);
  else
    target = ad::cols(encode_normalized(online, tgt_n, cfg), 1, n_patch);

  const double s2 = sigma_squared(cfg, oc.beta);
  auto align = sim2(y, target, s2);
  detail::check_finite_loss(align, "objective.sim2");
  auto kl = smooth ? kl_weighted(post, prior, 1.0, 1.0) : kl_balanced(post, prior, oc.alpha);
  detail::check_finite_loss(kl, "objective.kl_balanced");

  LossResult<Scalar> out;
  out.total = align + kl;
  out.breakdown.sim2 = static_cast<double>(align.item());
  out.breakdown.sim1_kl = static_cast<double>(kl.item());
  out.breakdown.sim1_balanced = out.breakdown.sim1_kl;
  out.breakdown.total = static_cast<double>(out.total.item());
  out.breakdown.forward_total = out.breakdown.total;
  out.breakdown.sigma2 = s2;
  out.source_patch_tokens = z_src.value().rightCols(n_patch);
  return out;
}

// Seeds for the two directions of the symmetric loss, drawn from `rng`.
template <typename Rng>
std::pair<std::uint64_t, std::uint64_t> direction_seeds(Rng& rng) {
  const std::uint64_t a = rng();
  const std::uint64_t b = rng();
  return {a, b};
}

// Chronological plus reverse-chronological loss with shared parameters and
// independent randomness per direction. Reduces to the asymmetric loss
// (same rng stream) when flags.symmetric is off.
template <typename Scalar, typename Rng>
LossResult<Scalar> phinet_loss_symmetric(Binder<Scalar>& online, Binder<Scalar>& slow, const Frame& x_t,
                                         const Frame& x_tk, const ObjectiveConfig& oc, const ModelConfig& cfg,
                                         Rng& rng) {
  if (!oc.flags.symmetric) return phinet_loss_asym(online, slow, x_t, x_tk, oc, cfg, rng);
  const auto [seed_fwd, seed_rev] = direction_seeds(rng);
  std::mt19937_64 rng_fwd(seed_fwd), rng_rev(seed_rev);
  auto fwd = phinet_loss_asym(online, slow, x_t, x_tk, oc, cfg, rng_fwd);
  auto rev = phinet_loss_asym(online, slow, x_tk, x_t, oc, cfg, rng_rev);
  LossResult<Scalar> out;
  out.total = fwd.total + rev.total;
  out.breakdown = fwd.breakdown;
  out.breakdown.sim2 += rev.breakdown.sim2;
  out.breakdown.sim1_kl += rev.breakdown.sim1_kl;
  out.breakdown.sim1_balanced += rev.breakdown.sim1_balanced;
  out.breakdown.total = static_cast<double>(out.total.item());
  out.breakdown.forward_total = fwd.breakdown.total;
  out.breakdown.reverse_total = rev.breakdown.total;
  out.source_patch_tokens = std::move(fwd.source_patch_tokens);
  return out;
}

}  // namespace phinet
