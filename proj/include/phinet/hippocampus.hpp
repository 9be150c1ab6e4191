#pragma once

// Hippocampal predictors: CA3 linear map h, CA1 cross-attention decoder g,
// and the prior / posterior heads over the discrete latent r.
//
// Latent layout: logits and samples are c × m matrices, one column per
// latent variable r_i and one row per category. Flattening column-major
// gives the row-major order of the m × c view.

#include <random>
#include <string>

#include "phinet/autodiff.hpp"
#include "phinet/backbone.hpp"
#include "phinet/config.hpp"
#include "phinet/errors.hpp"
#include "phinet/params.hpp"

namespace phinet {

template <typename Scalar>
using LatentLogits = Mat<Scalar>;
template <typename Scalar>
using LatentSample = Mat<Scalar>;

template <typename Scalar>
void init_hippocampus(ParameterSet<Scalar>& ps, const ModelConfig& cfg, DecoderKind g_kind,
                      std::mt19937_64& rng) {
  cfg.validate();
  const int d = cfg.d, mc = cfg.m * cfg.c, hidden = cfg.hidden_prior;
  ps.add("h.w", Mat<Scalar>::Identity(d, d));

  if (g_kind == DecoderKind::linear) {
    detail::add_linear(ps, "g.linear", d, d, rng);
  } else {
    ps.add("g.queries", trunc_normal<Scalar>(d, cfg.n_p() - 1, kInitStd, rng), true, false);
    detail::add_linear(ps, "g.latent", d, mc, rng);
    for (int j = 0; j < cfg.decoder_depth; ++j) {
      const std::string b = "g.blocks." + std::to_string(j);
      detail::add_norm(ps, b + ".ln_q", d);
      detail::add_norm(ps, b + ".ln_kv", d);
      detail::add_linear(ps, b + ".attn.q", d, d, rng);
      detail::add_linear(ps, b + ".attn.kv", 2 * d, d, rng);
      detail::add_linear(ps, b + ".attn.proj", d, d, rng);
      detail::add_norm(ps, b + ".ln2", d);
      detail::add_linear(ps, b + ".mlp.fc1", cfg.mlp_ratio * d, d, rng);
      detail::add_linear(ps, b + ".mlp.fc2", d, cfg.mlp_ratio * d, rng);
    }
    detail::add_norm(ps, "g.norm", d);
    detail::add_linear(ps, "g.pred", d, d, rng);
  }

  // Output layers start at zero so prior and posterior begin uniform.
  detail::add_linear(ps, "prior.fc1", hidden, d, rng);
  ps.add("prior.fc2.w", Mat<Scalar>::Zero(mc, hidden));
  ps.add("prior.fc2.b", Mat<Scalar>::Zero(mc, 1), true, false);
  detail::add_linear(ps, "post.fc1", hidden, 2 * d, rng);
  ps.add("post.fc2.w", Mat<Scalar>::Zero(mc, hidden));
  ps.add("post.fc2.b", Mat<Scalar>::Zero(mc, 1), true, false);
}

// Ẑ = W_h·Z on every token, [CLS] included. Linear, no bias.
template <typename Scalar>
ad::Var<Scalar> ca3_predict(Binder<Scalar>& p, ad::Var<Scalar> tokens) {
  auto w = p("h.w");
  if (w.rows() != w.cols() || w.cols() != tokens.rows())
    throw ConfigError("ca3_predict: W_h must be d × d with d = token dimension");
  return ad::matmul(w, tokens);
}

template <typename Scalar>
Mat<Scalar> ca3_predict(const Mat<Scalar>& w_h, const Mat<Scalar>& tokens) {
  if (w_h.rows() != w_h.cols() || w_h.cols() != tokens.rows())
    throw ConfigError("ca3_predict: W_h must be d × d with d = token dimension");
  return w_h * tokens;
}

namespace detail {

template <typename Scalar>
ad::Var<Scalar> latent_head(Binder<Scalar>& p, const std::string& prefix, ad::Var<Scalar> in,
                            const ModelConfig& cfg) {
  auto hidden = ad::relu(linear(p, prefix + ".fc1", in));
  auto flat = linear(p, prefix + ".fc2", hidden);
  return ad::reshape(flat, cfg.c, cfg.m);
}

}  // namespace detail

// Prior p(r | Ẑ) from the predicted [CLS] vector. With `stop_gradient`
// the head input is detached, so nothing flows back into Ẑ.
template <typename Scalar>
ad::Var<Scalar> prior_logits(Binder<Scalar>& p, ad::Var<Scalar> cls_hat, const ModelConfig& cfg,
                             bool stop_gradient = true) {
  if (cls_hat.rows() != cfg.d || cls_hat.cols() != 1) throw ConfigError("prior_logits: expected a d-vector");
  return detail::latent_head(p, "prior", stop_gradient ? ad::detach(cls_hat) : cls_hat, cfg);
}

// Posterior q(r | Ẑ, Z^(ε)) on the concatenation [cls_hat; cls_future].
template <typename Scalar>
ad::Var<Scalar> posterior_logits(Binder<Scalar>& p, ad::Var<Scalar> cls_hat, ad::Var<Scalar> cls_future,
                                 const ModelConfig& cfg, bool stop_gradient = false) {
  if (cls_hat.rows() != cfg.d || cls_hat.cols() != 1 || cls_future.rows() != cfg.d || cls_future.cols() != 1)
    throw ConfigError("posterior_logits: expected two d-vectors");
  auto in = ad::vcat<Scalar>({cls_hat, cls_future});
  return detail::latent_head(p, "post", stop_gradient ? ad::detach(in) : in, cfg);
}

// Draws one category per column from softmax(logits). The returned node's
// value is the exact one-hot; its backward pass is that of the softmax.
template <typename Scalar, typename Rng>
ad::Var<Scalar> sample_straight_through(ad::Var<Scalar> logits, Rng& rng) {
  if (!logits.value().allFinite())
    throw NumericalError("hippocampus.sample_straight_through", "non-finite logits");
  auto probs = ad::softmax_cols(logits);
  const Mat<Scalar>& pv = probs.value();
  Mat<Scalar> one_hot = Mat<Scalar>::Zero(pv.rows(), pv.cols());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index j = 0; j < pv.cols(); ++j) {
    const double u = unif(rng);
    double acc = 0.0;
    Eigen::Index pick = pv.rows() - 1;
    for (Eigen::Index i = 0; i < pv.rows(); ++i) {
      acc += static_cast<double>(pv(i, j));
      if (u < acc) {
        pick = i;
        break;
      }
    }
    // Never land on a zero-probability category through round-off at the top.
    while (pick > 0 && pv(pick, j) == Scalar(0)) --pick;
    one_hot(pick, j) = Scalar(1);
  }
  const int ip = probs.id;
  return logits.tape->record(std::move(one_hot), {probs},
                             [ip](ad::Tape<Scalar>& t, int self) { t.accumulate(ip, t.grad(self)); });
}

template <typename Scalar>
ad::Var<Scalar> cross_attention_block(Binder<Scalar>& p, const std::string& b, ad::Var<Scalar> x,
                                      ad::Var<Scalar> context, const ModelConfig& cfg) {
  auto q = detail::linear(p, b + ".attn.q", detail::norm(p, b + ".ln_q", x));
  auto kv = detail::linear(p, b + ".attn.kv", detail::norm(p, b + ".ln_kv", context));
  auto a = detail::multi_head_attention(q, ad::rows(kv, 0, cfg.d), ad::rows(kv, cfg.d, cfg.d), cfg.heads);
  x = x + detail::linear(p, b + ".attn.proj", a);
  return x + detail::mlp(p, b + ".mlp", detail::norm(p, b + ".ln2", x));
}

// Y = g(Ẑ, r): learned queries attend over [Ẑ tokens, embedded r]. Returns
// d × (n_p − 1) predicted patch tokens.
template <typename Scalar>
ad::Var<Scalar> ca1_decode(Binder<Scalar>& p, ad::Var<Scalar> z_hat, ad::Var<Scalar> r, const ModelConfig& cfg) {
  if (z_hat.rows() != cfg.d || z_hat.cols() != cfg.n_p()) throw ConfigError("ca1_decode: Ẑ must be d × n_p");
  if (r.rows() != cfg.c || r.cols() != cfg.m) throw ConfigError("ca1_decode: r must be c × m");
  auto r_token = detail::linear(p, "g.latent", ad::reshape(r, cfg.m * cfg.c, 1));
  auto context = ad::hcat<Scalar>({z_hat, r_token});
  auto x = p("g.queries");
  for (int j = 0; j < cfg.decoder_depth; ++j)
    x = cross_attention_block(p, "g.blocks." + std::to_string(j), x, context, cfg);
  auto y = detail::linear(p, "g.pred", detail::norm(p, "g.norm", x));
  if (!y.value().allFinite()) throw NumericalError("hippocampus.ca1_decode", "non-finite output");
  return y;
}

// Linear stand-in for g: an affine map of Ẑ's patch tokens; r is unused.
template <typename Scalar>
ad::Var<Scalar> linear_decode(Binder<Scalar>& p, ad::Var<Scalar> z_hat, const ModelConfig& cfg) {
  if (z_hat.rows() != cfg.d || z_hat.cols() != cfg.n_p()) throw ConfigError("linear_decode: Ẑ must be d × n_p");
  return detail::linear(p, "g.linear", ad::cols(z_hat, 1, cfg.n_p() - 1));
}

}  // namespace phinet
