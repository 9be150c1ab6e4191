#include "phinet/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "phinet/errors.hpp"

namespace phinet {

void ModelConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0) throw ConfigError("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) throw ConfigError("image_size must be divisible by patch_size");
  if (channels <= 0) throw ConfigError("channels must be positive");
  if (d <= 0 || heads <= 0 || d % heads != 0) throw ConfigError("d must be a positive multiple of heads");
  if (depth < 0 || decoder_depth < 1) throw ConfigError("depth must be >= 0 and decoder_depth >= 1");
  if (m < 1 || c < 2) throw ConfigError("latent needs m >= 1 and c >= 2");
  if (hidden_prior < 1 || mlp_ratio < 1) throw ConfigError("hidden widths must be positive");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig cfg;
  cfg.image_size = 224;
  cfg.patch_size = 16;
  cfg.d = 384;
  cfg.depth = 12;
  cfg.heads = 6;
  cfg.m = 32;
  cfg.c = 32;
  cfg.decoder_depth = 4;
  cfg.hidden_prior = 2 * cfg.d;
  return cfg;
}

ModelConfig ModelConfig::micro() {
  ModelConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.d = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.m = 2;
  cfg.c = 3;
  cfg.decoder_depth = 1;
  cfg.hidden_prior = 16;
  return cfg;
}

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows = [] {
    std::vector<AblationRow> r;
    auto row = [&](std::string name, bool symm, bool h, DecoderKind g, bool eps, bool ema, bool sgp,
                   bool sgq) {
      r.push_back({std::move(name), LossFlags{symm, h, g, eps, ema, sgp, sgq}});
    };
    const auto tf = DecoderKind::transformer;
    row("linear-g", true, true, DecoderKind::linear, false, true, true, false);
    row("no-ema", true, true, tf, true, false, true, false);
    row("sg-post", true, true, tf, true, true, false, true);
    row("asym-no-h", false, false, tf, true, true, true, false);
    row("no-symmetric", false, true, tf, true, true, true, false);
    row("no-h", true, false, tf, true, true, true, false);
    row("no-noise", true, true, tf, false, true, true, false);
    row("no-sg", true, true, tf, true, true, false, false);
    row("proposed", true, true, tf, true, true, true, false);
    return r;
  }();
  return rows;
}

const AblationRow& ablation_row(const std::string& name) {
  for (const auto& r : ablation_rows())
    if (r.name == name) return r;
  throw ConfigError("unknown ablation row '" + name + "'");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (warmup_epochs < 0 || total_epochs < 0 || warmup_epochs > total_epochs)
    throw ConfigError("need 0 <= warmup_epochs <= total_epochs");
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must lie in [0, 1]");
  if (objective.alpha < 0.0 || objective.alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
  if (objective.beta <= 0.0) throw ConfigError("beta must be positive");
  if (objective.sigma_eps < 0.0) throw ConfigError("sigma_eps must be non-negative");
  if (lr < 0.0 || weight_decay < 0.0) throw ConfigError("lr and weight_decay must be non-negative");
}

void PropagationParams::validate() const {
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (radius < 0) throw ConfigError("radius must be >= 0");
  if (queue < 1) throw ConfigError("queue must be >= 1");
  if (temperature <= 0.0) throw ConfigError("temperature must be positive");
}

PropagationParams PropagationParams::protocol(const std::string& name) {
  if (name == "davis") return davis();
  if (name == "vip") return vip();
  if (name == "jhmdb") return jhmdb();
  throw ConfigError("unknown protocol '" + name + "' (expected davis|vip|jhmdb)");
}

RunConfig paper_preset() {
  RunConfig cfg;
  cfg.model = ModelConfig::paper();
  // TrainConfig and DataConfig defaults are the full-scale pre-training values.
  return cfg;
}

RunConfig desk_preset() {
  RunConfig cfg;
  cfg.model = ModelConfig::desk();
  cfg.train.lr = 1e-3;
  cfg.train.batch_size = 8;
  cfg.train.total_epochs = 50;
  cfg.train.warmup_epochs = 5;
  cfg.train.checkpoint_every = 1;
  cfg.train.keep_checkpoints = 3;
  return cfg;
}

RunConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk|paper)");
}

std::string to_string(DecoderKind kind) { return kind == DecoderKind::linear ? "linear" : "transformer"; }

DecoderKind decoder_kind_from_string(const std::string& s) {
  if (s == "linear") return DecoderKind::linear;
  if (s == "transformer" || s == "tf") return DecoderKind::transformer;
  throw ConfigError("unknown g kind '" + s + "' (expected linear|transformer)");
}

std::string to_string(EmaCadence cadence) {
  return cadence == EmaCadence::per_step ? "per_step" : "per_epoch";
}

EmaCadence ema_cadence_from_string(const std::string& s) {
  if (s == "per_epoch") return EmaCadence::per_epoch;
  if (s == "per_step") return EmaCadence::per_step;
  throw ConfigError("unknown ema cadence '" + s + "' (expected per_epoch|per_step)");
}

namespace {

struct Field {
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("bad value for '" + key + "': '" + text + "'");
  return v;
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("bad boolean for '" + key + "': '" + text + "'");
}

template <typename T>
std::string format_value(const T& v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

template <>
std::string format_value<bool>(const bool& v) {
  return v ? "true" : "false";
}

template <typename T>
Field bind(const std::string& key, T& ref) {
  return Field{[&ref] { return format_value(ref); },
               [&ref, key](const std::string& s) { ref = parse_value<T>(key, s); }};
}

// Ordered (section, key) -> accessor table over one RunConfig instance.
std::vector<std::pair<std::string, Field>> fields(RunConfig& c) {
  std::vector<std::pair<std::string, Field>> f;
  auto add = [&](const std::string& path, auto& ref) { f.emplace_back(path, bind(path, ref)); };
  auto& m = c.model;
  add("model.image_size", m.image_size);
  add("model.patch_size", m.patch_size);
  add("model.channels", m.channels);
  add("model.d", m.d);
  add("model.depth", m.depth);
  add("model.heads", m.heads);
  add("model.mlp_ratio", m.mlp_ratio);
  add("model.m", m.m);
  add("model.c", m.c);
  add("model.decoder_depth", m.decoder_depth);
  add("model.hidden_prior", m.hidden_prior);
  add("model.use_pos_embed", m.use_pos_embed);
  auto& t = c.train;
  add("train.lr", t.lr);
  add("train.beta1", t.beta1);
  add("train.beta2", t.beta2);
  add("train.adam_eps", t.adam_eps);
  add("train.weight_decay", t.weight_decay);
  add("train.warmup_epochs", t.warmup_epochs);
  add("train.total_epochs", t.total_epochs);
  add("train.batch_size", t.batch_size);
  add("train.gamma", t.gamma);
  f.emplace_back("train.ema_cadence",
                 Field{[&t] { return to_string(t.ema_cadence); },
                       [&t](const std::string& s) { t.ema_cadence = ema_cadence_from_string(s); }});
  add("train.clip_grad_norm", t.clip_grad_norm);
  add("train.seed", t.seed);
  add("train.checkpoint_every", t.checkpoint_every);
  add("train.keep_checkpoints", t.keep_checkpoints);
  auto& o = t.objective;
  add("objective.beta", o.beta);
  add("objective.alpha", o.alpha);
  add("objective.sigma_eps", o.sigma_eps);
  add("objective.symmetric", o.flags.symmetric);
  add("objective.use_h", o.flags.use_h);
  f.emplace_back("objective.g_kind",
                 Field{[&o] { return to_string(o.flags.g_kind); },
                       [&o](const std::string& s) { o.flags.g_kind = decoder_kind_from_string(s); }});
  add("objective.use_noise", o.flags.use_noise);
  add("objective.use_ema_target", o.flags.use_ema_target);
  add("objective.sg_prior", o.flags.sg_prior);
  add("objective.sg_post", o.flags.sg_post);
  auto& dc = c.data;
  add("data.n_videos", dc.n_videos);
  add("data.frames", dc.frames);
  add("data.n_shapes_min", dc.n_shapes_min);
  add("data.n_shapes_max", dc.n_shapes_max);
  add("data.seed", dc.seed);
  add("data.k_min", dc.k_min);
  add("data.k_max", dc.k_max);
  add("data.repeated_sampling", dc.repeated_sampling);
  add("data.crop_min", dc.crop_min);
  add("data.crop_max", dc.crop_max);
  add("data.hflip_p", dc.hflip_p);
  add("data.static_scene", dc.static_scene);
  auto& e = c.eval;
  add("eval.top_k", e.top_k);
  add("eval.radius", e.radius);
  add("eval.queue", e.queue);
  add("eval.temperature", e.temperature);
  add("eval.upsample", e.upsample);
  return f;
}

}  // namespace

std::string to_config_text(const RunConfig& cfg) {
  RunConfig copy = cfg;
  boost::property_tree::ptree tree;
  for (const auto& [path, field] : fields(copy)) tree.put(path, field.get());
  std::ostringstream out;
  boost::property_tree::write_ini(out, tree);
  return out.str();
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  auto table = fields(base);
  std::map<std::string, Field*> index;
  for (auto& [path, field] : table) index[path] = &field;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' must live inside a [section]");
    for (const auto& [key, value] : body) {
      const std::string path = section + "." + key;
      auto it = index.find(path);
      if (it == index.end()) throw ConfigError("unknown config key '" + path + "'");
      it->second->set(value.get_value<std::string>());
    }
  }
  return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), std::move(base));
}

}  // namespace phinet
