#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>

#include "phinet/autodiff.hpp"
#include "phinet/config.hpp"
#include "phinet/errors.hpp"

namespace phinet {

template <typename Scalar>
struct Parameter {
  Mat<Scalar> value;
  bool trainable = true;
  // Excluded from weight decay: [CLS], positional embeddings, norms, biases.
  bool decay = true;
};

// Named parameter arrays. Names are dotted paths whose first segment is the
// owning module: f (encoder), h (CA3), g (CA1 decoder), prior, post.
template <typename Scalar>
class ParameterSet {
 public:
  using Map = std::map<std::string, Parameter<Scalar>>;

  void add(const std::string& name, Mat<Scalar> value, bool trainable = true, bool decay = true) {
    if (!entries_.emplace(name, Parameter<Scalar>{std::move(value), trainable, decay}).second)
      throw ConfigError("duplicate parameter '" + name + "'");
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Parameter<Scalar>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
  }
  Parameter<Scalar>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
  }
  const Mat<Scalar>& operator[](const std::string& name) const { return at(name).value; }
  Mat<Scalar>& operator[](const std::string& name) { return at(name).value; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  // Entries whose name starts with `prefix`.
  ParameterSet subset(const std::string& prefix) const {
    ParameterSet out;
    for (const auto& [name, p] : entries_)
      if (name.rfind(prefix, 0) == 0) out.entries_.emplace(name, p);
    return out;
  }

  void merge(const ParameterSet& other) {
    for (const auto& [name, p] : other.entries_) entries_[name] = p;
  }

  // Same names, same shapes, same element type.
  bool same_structure(const ParameterSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    auto a = entries_.begin();
    auto b = other.entries_.begin();
    for (; a != entries_.end(); ++a, ++b) {
      if (a->first != b->first) return false;
      if (a->second.value.rows() != b->second.value.rows() ||
          a->second.value.cols() != b->second.value.cols())
        return false;
    }
    return true;
  }

  std::size_t count_scalars(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& [name, p] : entries_)
      if (!trainable_only || p.trainable) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  template <typename To>
  ParameterSet<To> cast() const {
    ParameterSet<To> out;
    for (const auto& [name, p] : entries_) out.add(name, p.value.template cast<To>(), p.trainable, p.decay);
    return out;
  }

 private:
  Map entries_;
};

template <typename Scalar>
using Gradients = std::map<std::string, Mat<Scalar>>;

template <typename Scalar>
Scalar global_norm(const Gradients<Scalar>& grads) {
  Scalar sq = 0;
  for (const auto& [name, g] : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

// Binds parameters onto a tape as leaves, once per name. With `track`
// false the leaves are constants and no gradient can reach them.
template <typename Scalar>
class Binder {
 public:
  Binder(ad::Tape<Scalar>& tape, const ParameterSet<Scalar>& params, bool track = true)
      : tape_(&tape), params_(&params), track_(track) {}

  ad::Var<Scalar> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const auto& p = params_->at(name);
    ad::Var<Scalar> v = (track_ && p.trainable) ? tape_->variable(p.value) : tape_->constant(p.value);
    bound_.emplace(name, v);
    return v;
  }

  ad::Tape<Scalar>& tape() { return *tape_; }
  const ParameterSet<Scalar>& params() const { return *params_; }
  bool tracking() const { return track_; }

  // Adds weight·∂root/∂p into `out` for every bound trainable parameter.
  // Parameters that were bound but received no gradient contribute zeros.
  void collect(Gradients<Scalar>& out, Scalar weight = Scalar(1)) const {
    for (const auto& [name, v] : bound_) {
      if (!tape_->requires_grad(v.id)) continue;
      auto [it, fresh] = out.try_emplace(name, Mat<Scalar>::Zero(v.rows(), v.cols()));
      if (tape_->has_grad(v.id)) it->second += weight * tape_->grad(v.id);
    }
  }

  std::size_t bound_count() const { return bound_.size(); }

 private:
  ad::Tape<Scalar>* tape_;
  const ParameterSet<Scalar>* params_;
  bool track_;
  std::unordered_map<std::string, ad::Var<Scalar>> bound_;
};

// Truncated normal at ±2 std, the usual transformer initialisation.
template <typename Scalar, typename Rng>
Mat<Scalar> trunc_normal(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat<Scalar> out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) {
      double z;
      do {
        z = n(rng);
      } while (std::abs(z) > 2.0);
      out(i, j) = static_cast<Scalar>(z * std);
    }
  return out;
}

inline constexpr double kInitStd = 0.02;

// Perturbs every trainable entry with N(0, scale²) so that no path is
// degenerate; used by gradient checks that need generic weights.
template <typename Scalar>
void randomize(ParameterSet<Scalar>& params, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += static_cast<Scalar>(n(rng));
  }
}

}  // namespace phinet
