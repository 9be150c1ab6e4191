#pragma once

// Entorhinal encoder f: patch embedding, [CLS] token, learned positional
// embeddings and a stack of pre-norm transformer blocks.
//
// Tokens are stored as columns: a TokenMatrix is d × n_p with the [CLS]
// token in column 0 and patch tokens in raster order after it.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "phinet/autodiff.hpp"
#include "phinet/config.hpp"
#include "phinet/errors.hpp"
#include "phinet/frame.hpp"
#include "phinet/params.hpp"

namespace phinet {

template <typename Scalar>
using TokenMatrix = Mat<Scalar>;

// Columns are flattened patches (channel, row, col), raster order over the
// patch grid: column index = grid_row · grid + grid_col.
template <typename Scalar>
Mat<Scalar> patchify(const Frame& frame, const ModelConfig& cfg) {
  if (frame.channels() != cfg.channels || frame.height() != cfg.image_size ||
      frame.width() != cfg.image_size)
    throw ConfigError("patchify: frame shape does not match the model configuration");
  const int P = cfg.patch_size, G = cfg.grid();
  Mat<Scalar> out(cfg.patch_dim(), G * G);
  for (int gy = 0; gy < G; ++gy)
    for (int gx = 0; gx < G; ++gx) {
      auto col = out.col(gy * G + gx);
      Eigen::Index k = 0;
      for (int c = 0; c < cfg.channels; ++c)
        for (int y = 0; y < P; ++y)
          for (int x = 0; x < P; ++x) col(k++) = static_cast<Scalar>(frame.planes[c](gy * P + y, gx * P + x));
    }
  return out;
}

// Inverse of patchify.
template <typename Scalar>
Frame assemble(const Mat<Scalar>& patches, const ModelConfig& cfg) {
  const int P = cfg.patch_size, G = cfg.grid();
  if (patches.rows() != cfg.patch_dim() || patches.cols() != G * G)
    throw ConfigError("assemble: patch matrix shape does not match the model configuration");
  Frame frame(cfg.channels, cfg.image_size);
  for (int gy = 0; gy < G; ++gy)
    for (int gx = 0; gx < G; ++gx) {
      auto col = patches.col(gy * G + gx);
      Eigen::Index k = 0;
      for (int c = 0; c < cfg.channels; ++c)
        for (int y = 0; y < P; ++y)
          for (int x = 0; x < P; ++x) frame.planes[c](gy * P + y, gx * P + x) = static_cast<float>(col(k++));
    }
  return frame;
}

// Shift/scale each channel to zero mean and unit std with the encoder's
// stored dataset statistics (buffers f.pixel_mean / f.pixel_std).
template <typename Scalar>
Frame normalize(const Frame& frame, const ParameterSet<Scalar>& params) {
  const auto& mean = params["f.pixel_mean"];
  const auto& std = params["f.pixel_std"];
  if (mean.rows() != frame.channels()) throw ConfigError("normalize: channel count mismatch");
  Frame out = frame;
  for (int c = 0; c < frame.channels(); ++c)
    out.planes[c] = ((frame.planes[c].array() - static_cast<float>(mean(c, 0))) / static_cast<float>(std(c, 0))).matrix();
  return out;
}

// Adds i.i.d. N(0, sigma_eps²) noise to every entry. No clipping.
template <typename Rng>
Frame perturb(const Frame& frame, double sigma_eps, Rng& rng) {
  if (!(sigma_eps >= 0.0)) throw ConfigError("perturb: sigma_eps must be non-negative");
  if (sigma_eps == 0.0) return frame;
  std::normal_distribution<float> noise(0.0f, static_cast<float>(sigma_eps));
  Frame out = frame;
  for (auto& plane : out.planes)
    for (Eigen::Index i = 0; i < plane.size(); ++i) plane.data()[i] += noise(rng);
  return out;
}

template <typename Scalar>
bool all_finite(const Mat<Scalar>& m) {
  return m.allFinite();
}

namespace detail {

template <typename Scalar>
void add_linear(ParameterSet<Scalar>& ps, const std::string& prefix, int out, int in, std::mt19937_64& rng) {
  ps.add(prefix + ".w", trunc_normal<Scalar>(out, in, kInitStd, rng));
  ps.add(prefix + ".b", Mat<Scalar>::Zero(out, 1), true, false);
}

template <typename Scalar>
void add_norm(ParameterSet<Scalar>& ps, const std::string& prefix, int dim) {
  ps.add(prefix + ".g", Mat<Scalar>::Ones(dim, 1), true, false);
  ps.add(prefix + ".b", Mat<Scalar>::Zero(dim, 1), true, false);
}

template <typename Scalar>
ad::Var<Scalar> linear(Binder<Scalar>& p, const std::string& prefix, ad::Var<Scalar> x) {
  return ad::affine(p(prefix + ".w"), p(prefix + ".b"), x);
}

template <typename Scalar>
ad::Var<Scalar> norm(Binder<Scalar>& p, const std::string& prefix, ad::Var<Scalar> x) {
  return ad::layer_norm(x, p(prefix + ".g"), p(prefix + ".b"));
}

template <typename Scalar>
ad::Var<Scalar> mlp(Binder<Scalar>& p, const std::string& prefix, ad::Var<Scalar> x) {
  return linear(p, prefix + ".fc2", ad::gelu(linear(p, prefix + ".fc1", x)));
}

// Scaled dot-product attention, heads split along the embedding rows.
// q: d × n_q, k and v: d × n_kv. Returns d × n_q.
template <typename Scalar>
ad::Var<Scalar> multi_head_attention(ad::Var<Scalar> q, ad::Var<Scalar> k, ad::Var<Scalar> v, int heads) {
  const Eigen::Index d = q.rows(), dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  std::vector<ad::Var<Scalar>> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    auto qh = ad::rows(q, h * dh, dh);
    auto kh = ad::rows(k, h * dh, dh);
    auto vh = ad::rows(v, h * dh, dh);
    auto weights = ad::softmax_cols(scale * ad::matmul_tn(kh, qh));  // n_kv × n_q
    outs.push_back(ad::matmul(vh, weights));
  }
  return heads == 1 ? outs.front() : ad::vcat(outs);
}

}  // namespace detail

template <typename Scalar>
void init_encoder(ParameterSet<Scalar>& ps, const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const int d = cfg.d;
  ps.add("f.pixel_mean", Mat<Scalar>::Constant(cfg.channels, 1, Scalar(0.5)), false, false);
  ps.add("f.pixel_std", Mat<Scalar>::Constant(cfg.channels, 1, Scalar(0.25)), false, false);
  detail::add_linear(ps, "f.patch", d, cfg.patch_dim(), rng);
  ps.add("f.cls", trunc_normal<Scalar>(d, 1, kInitStd, rng), true, false);
  if (cfg.use_pos_embed) ps.add("f.pos", trunc_normal<Scalar>(d, cfg.n_p(), kInitStd, rng), true, false);
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string b = "f.blocks." + std::to_string(i);
    detail::add_norm(ps, b + ".ln1", d);
    detail::add_linear(ps, b + ".attn.qkv", 3 * d, d, rng);
    detail::add_linear(ps, b + ".attn.proj", d, d, rng);
    detail::add_norm(ps, b + ".ln2", d);
    detail::add_linear(ps, b + ".mlp.fc1", cfg.mlp_ratio * d, d, rng);
    detail::add_linear(ps, b + ".mlp.fc2", d, cfg.mlp_ratio * d, rng);
  }
  detail::add_norm(ps, "f.norm", d);
}

// f(x): patch matrix (patch_dim × n_p−1, already normalised) → d × n_p tokens.
template <typename Scalar>
ad::Var<Scalar> encode(Binder<Scalar>& p, ad::Var<Scalar> patches, const ModelConfig& cfg) {
  if (patches.rows() != cfg.patch_dim() || patches.cols() != cfg.n_p() - 1)
    throw ConfigError("encode: patch matrix shape does not match the model configuration");
  auto x = ad::hcat<Scalar>({p("f.cls"), detail::linear(p, "f.patch", patches)});
  if (cfg.use_pos_embed) x = x + p("f.pos");
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string b = "f.blocks." + std::to_string(i);
    auto h = detail::norm(p, b + ".ln1", x);
    auto qkv = detail::linear(p, b + ".attn.qkv", h);
    auto a = detail::multi_head_attention(ad::rows(qkv, 0, cfg.d), ad::rows(qkv, cfg.d, cfg.d),
                                          ad::rows(qkv, 2 * cfg.d, cfg.d), cfg.heads);
    x = x + detail::linear(p, b + ".attn.proj", a);
    x = x + detail::mlp(p, b + ".mlp", detail::norm(p, b + ".ln2", x));
    if (!all_finite(x.value()))
      throw NumericalError("backbone.block[" + std::to_string(i) + "]", "non-finite activation");
  }
  auto out = detail::norm(p, "f.norm", x);
  if (!all_finite(out.value())) throw NumericalError("backbone.norm", "non-finite activation");
  return out;
}

// Encodes a frame that is already in normalised pixel space.
template <typename Scalar>
ad::Var<Scalar> encode_normalized(Binder<Scalar>& p, const Frame& normalized, const ModelConfig& cfg) {
  return encode(p, p.tape().constant(patchify<Scalar>(normalized, cfg)), cfg);
}

// Normalises, patchifies and encodes one raw frame on `p`'s tape.
template <typename Scalar>
ad::Var<Scalar> encode_frame(Binder<Scalar>& p, const Frame& frame, const ModelConfig& cfg) {
  return encode_normalized(p, normalize(frame, p.params()), cfg);
}

// Gradient-free evaluation: tokens of one raw frame.
template <typename Scalar>
TokenMatrix<Scalar> encode(const ParameterSet<Scalar>& params, const Frame& frame, const ModelConfig& cfg) {
  ad::Tape<Scalar> tape;
  Binder<Scalar> p(tape, params, false);
  return encode_frame(p, frame, cfg).value();
}

}  // namespace phinet
