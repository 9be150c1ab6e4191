#include "phinet/trainer.hpp"

#include <cstdio>
#include <regex>

namespace phinet {

std::string metrics_csv_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(r.step), r.epoch,
                r.lr, r.total, r.sim2, r.sim1_kl, r.sigma2, r.grad_norm, r.feature_std);
  return buf;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw IoError("'" + path.string() + "': unexpected metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricsRow r;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%d,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &step, &r.epoch, &r.lr, &r.total, &r.sim2,
                    &r.sim1_kl, &r.sigma2, &r.grad_norm, &r.feature_std) != 9)
      throw IoError("'" + path.string() + "': malformed row '" + line + "'");
    r.step = step;
    rows.push_back(r);
  }
  return rows;
}

std::vector<FramePair> epoch_pairs(const std::vector<LabeledVideo>& dataset, const RunConfig& cfg, int epoch) {
  const DataConfig& dc = cfg.data;
  const std::uint64_t seed = cfg.train.seed;
  std::vector<FramePair> pairs;
  pairs.reserve(dataset.size() * static_cast<std::size_t>(dc.repeated_sampling));
  for (std::size_t v = 0; v < dataset.size(); ++v)
    for (int r = 0; r < dc.repeated_sampling; ++r) {
      std::mt19937_64 rng(mix_seed({seed, static_cast<std::uint64_t>(epoch), v, static_cast<std::uint64_t>(r)}));
      FramePair p = sample_pair(dataset[v], static_cast<int>(v), dc.k_min, dc.k_max, rng);
      pairs.push_back(augment_pair(std::move(p), dc.crop_min, dc.crop_max, dc.hflip_p, rng));
    }
  std::mt19937_64 shuffle(mix_seed({seed, static_cast<std::uint64_t>(epoch), 0x73687566ull}));
  std::shuffle(pairs.begin(), pairs.end(), shuffle);
  return pairs;
}

namespace detail {

void write_run_header(const std::filesystem::path& run_dir, const RunConfig& cfg,
                      const std::vector<std::string>& exclusions) {
  std::ofstream(run_dir / "config.resolved") << to_config_text(cfg);
  std::ofstream log(run_dir / "run.log");
  if (!log) throw IoError("cannot write '" + (run_dir / "run.log").string() + "'");
  log << "ema_cadence = " << to_string(cfg.train.ema_cadence) << "\n";
  log << "gradient_clipping = " << (cfg.train.clip_grad_norm > 0.0 ? std::to_string(cfg.train.clip_grad_norm) : "off")
      << "\n";
  log << "steps_per_epoch = " << steps_per_epoch(cfg) << "\n";
  log << "weight_decay_exclusions =";
  for (const auto& n : exclusions) log << " " << n;
  log << "\n";
}

void prune_checkpoints(const std::filesystem::path& run_dir, int keep) {
  if (keep <= 0) return;
  const auto dir = run_dir / "checkpoints";
  static const std::regex pattern(R"(epoch_(\d+)\.ckpt)");
  std::vector<std::pair<int, std::filesystem::path>> found;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoi(m[1]), entry.path());
  }
  std::sort(found.begin(), found.end());
  for (std::size_t i = 0; i + static_cast<std::size_t>(keep) < found.size(); ++i) std::filesystem::remove(found[i].second);
}

void truncate_metrics(const std::filesystem::path& path, std::int64_t steps) {
  std::vector<MetricsRow> keep;
  if (std::filesystem::exists(path))
    for (const auto& r : read_metrics_csv(path))
      if (r.step < steps) keep.push_back(r);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << kMetricsHeader << "\n";
  for (const auto& r : keep) out << metrics_csv_row(r) << "\n";
}

}  // namespace detail
}  // namespace phinet
