// phinet: data generation, training, ablation, evaluation, gradient checks
// and plotting. Exit codes: 0 success, 1 usage/config/protocol error,
// 2 numerical failure, 3 I/O error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "phinet/checkpoint.hpp"
#include "phinet/config.hpp"
#include "phinet/errors.hpp"
#include "phinet/eval.hpp"
#include "phinet/gradcheck.hpp"
#include "phinet/manifest.hpp"
#include "phinet/plot.hpp"
#include "phinet/raster.hpp"
#include "phinet/trainer.hpp"
#include "phinet/videodata.hpp"

namespace fs = std::filesystem;
using namespace phinet;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

fs::path under(const fs::path& run_dir, const fs::path& p) { return p.is_absolute() ? p : run_dir / p; }

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

// Options shared by the commands that resolve a RunConfig.
struct ConfigFlags {
  std::string preset = "desk";
  std::string config_file;
  std::optional<int> epochs, warmup, batch_size, checkpoint_every, keep;
  std::optional<double> lr, weight_decay, gamma, beta, alpha, sigma_eps, clip;
  std::optional<std::uint64_t> seed, data_seed;
  std::optional<int> k_min, k_max, n_videos, frames;
  std::optional<std::string> ema_cadence;
  bool no_symmetric = false, no_h = false, no_noise = false, no_ema = false;
  std::optional<std::string> g_kind, sg;

  void attach(CLI::App* app, bool with_flags) {
    app->add_option("--preset", preset, "desk | paper")->capture_default_str();
    app->add_option("--config", config_file, "config file (key = value, one section per module)");
    app->add_option("--epochs", epochs, "total epochs (preset paper: 400)");
    app->add_option("--warmup", warmup, "warmup epochs (preset paper: 40)");
    app->add_option("--batch-size", batch_size, "pairs per step (preset paper: 768)");
    app->add_option("--lr", lr, "base learning rate (preset paper: 1.5e-4)");
    app->add_option("--weight-decay", weight_decay, "AdamW weight decay (preset paper: 0.05)");
    app->add_option("--gamma", gamma, "EMA coefficient (preset paper: 0.99)");
    app->add_option("--ema-cadence", ema_cadence, "per_epoch | per_step (preset paper: per_epoch)");
    app->add_option("--beta", beta, "KL regularizer beta (preset paper: 0.01)");
    app->add_option("--alpha", alpha, "KL balancing alpha (preset paper: 0.8)");
    app->add_option("--sigma-eps", sigma_eps, "perturbation noise std (preset paper: 0.5)");
    app->add_option("--clip", clip, "gradient-norm clipping, 0 = off (preset paper: off)");
    app->add_option("--seed", seed, "training seed");
    app->add_option("--checkpoint-every", checkpoint_every, "epochs between checkpoints");
    app->add_option("--keep", keep, "checkpoints kept, 0 = all");
    app->add_option("--k-min", k_min, "minimum frame gap (preset paper: 4)");
    app->add_option("--k-max", k_max, "maximum frame gap (preset paper: 48)");
    app->add_option("--n-videos", n_videos, "synthetic videos when --data is absent");
    app->add_option("--frames", frames, "frames per synthetic video");
    app->add_option("--data-seed", data_seed, "synthetic dataset seed");
    if (!with_flags) return;
    app->add_flag("--no-symmetric", no_symmetric, "chronological direction only");
    app->add_flag("--no-h", no_h, "drop the CA3 predictor h");
    app->add_option("--g", g_kind, "decoder g: transformer | linear")->check(CLI::IsMember({"transformer", "linear"}));
    app->add_flag("--no-noise", no_noise, "no perturbation of x_{t+k}");
    app->add_flag("--no-ema", no_ema, "Sim-2 target from the online encoder");
    app->add_option("--sg", sg, "stop-gradient on head inputs: prior | post | none | both (preset paper: prior)")
        ->check(CLI::IsMember({"prior", "post", "none", "both"}));
  }

  RunConfig resolve() const {
    RunConfig cfg = phinet::preset(preset);
    if (!config_file.empty()) cfg = load_config_file(config_file, cfg);
    auto& t = cfg.train;
    auto& o = t.objective;
    if (epochs) {
      t.total_epochs = *epochs;
      if (!warmup) t.warmup_epochs = std::min(t.warmup_epochs, *epochs);
    }
    if (warmup) t.warmup_epochs = *warmup;
    if (batch_size) t.batch_size = *batch_size;
    if (lr) t.lr = *lr;
    if (weight_decay) t.weight_decay = *weight_decay;
    if (gamma) t.gamma = *gamma;
    if (ema_cadence) t.ema_cadence = ema_cadence_from_string(*ema_cadence);
    if (beta) o.beta = *beta;
    if (alpha) o.alpha = *alpha;
    if (sigma_eps) o.sigma_eps = *sigma_eps;
    if (clip) t.clip_grad_norm = *clip;
    if (seed) t.seed = *seed;
    if (checkpoint_every) t.checkpoint_every = *checkpoint_every;
    if (keep) t.keep_checkpoints = *keep;
    if (k_min) cfg.data.k_min = *k_min;
    if (k_max) cfg.data.k_max = *k_max;
    if (n_videos) cfg.data.n_videos = *n_videos;
    if (frames) cfg.data.frames = *frames;
    if (data_seed) cfg.data.seed = *data_seed;
    if (no_symmetric) o.flags.symmetric = false;
    if (no_h) o.flags.use_h = false;
    if (g_kind) o.flags.g_kind = decoder_kind_from_string(*g_kind);
    if (no_noise) o.flags.use_noise = false;
    if (no_ema) o.flags.use_ema_target = false;
    if (sg) {
      o.flags.sg_prior = *sg == "prior" || *sg == "both";
      o.flags.sg_post = *sg == "post" || *sg == "both";
    }
    cfg.model.validate();
    t.validate();
    return cfg;
  }
};

std::vector<LabeledVideo> load_or_generate(const std::string& data_dir, RunConfig& cfg) {
  std::vector<LabeledVideo> videos;
  if (!data_dir.empty()) {
    if (!fs::is_directory(data_dir)) throw IoError("dataset directory '" + data_dir + "' does not exist");
    videos = read_dataset(data_dir);
    if (videos.empty()) throw IoError("dataset directory '" + data_dir + "' holds no videos");
    cfg.data.n_videos = static_cast<int>(videos.size());
    cfg.data.frames = videos.front().length();
  } else {
    videos = generate_dataset(cfg.data, cfg.model.image_size);
  }
  for (const auto& v : videos)
    if (v.frames.front().width() != cfg.model.image_size)
      throw ConfigError("video '" + v.id + "' is " + std::to_string(v.frames.front().width()) +
                        " px, model expects " + std::to_string(cfg.model.image_size));
  return videos;
}

// ---------------------------------------------------------------- gen-data

struct GenData {
  std::string run_dir = ".";
  std::string out = "data";
  std::uint64_t seed = 0;
  int n_videos = 16, frames = 64, image_size = 32;
  bool static_scene = false, force = false;
};

int cmd_gen_data(const GenData& g) {
  if (g.frames < 2) throw ConfigError("--frames must be at least 2");
  if (g.n_videos < 1) throw ConfigError("--n-videos must be at least 1");
  const fs::path run_dir = g.run_dir, out = under(run_dir, g.out);
  if (non_empty_dir(out)) {
    if (!g.force) throw ConfigError("output directory '" + out.string() + "' is not empty (use --force)");
    fs::remove_all(out);
  }
  RunManifest m;
  m.command = "gen-data";
  m.started = utc_timestamp();
  RunConfig cfg = desk_preset();
  cfg.model.image_size = g.image_size;
  cfg.data.seed = g.seed;
  cfg.data.n_videos = g.n_videos;
  cfg.data.frames = g.frames;
  cfg.data.static_scene = g.static_scene;
  const auto videos = generate_dataset(cfg.data, g.image_size);
  write_dataset(videos, out);
  m.seed = g.seed;
  m.config_text = to_config_text(cfg);
  m.artifacts["dataset"] = fs::relative(out, run_dir).generic_string();
  m.artifacts["dataset_hash"] = directory_hash(out);
  m.finished = utc_timestamp();
  write_manifest(m, run_dir);
  std::printf("wrote %d videos x %d frames to %s (hash %s)\n", g.n_videos, g.frames, out.c_str(),
              m.artifacts["dataset_hash"].c_str());
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainFlags {
  std::string run_dir;
  std::string data;
  bool resume = false, force = false, quiet = false;
  ConfigFlags cfg;
};

TrainResult<float> run_training(const RunConfig& cfg, const std::vector<LabeledVideo>& videos, const fs::path& run_dir,
                                bool resume, bool quiet) {
  TrainOptions opt;
  opt.run_dir = run_dir;
  opt.resume = resume;
  const int spe = steps_per_epoch(cfg);
  if (!quiet)
    opt.on_step = [spe](const MetricsRow& r) {
      if ((r.step + 1) % spe == 0)
        std::printf("epoch %4d step %6lld lr %.3e total %.4f sim2 %.4f kl %.4f feature_std %.4f\n", r.epoch + 1,
                    static_cast<long long>(r.step + 1), r.lr, r.total, r.sim2, r.sim1_kl, r.feature_std);
    };
  return train<float>(cfg, videos, opt);
}

void prepare_run_dir(const fs::path& run_dir, bool resume, bool force) {
  const bool has_run = fs::exists(run_dir / "metrics.csv") || fs::exists(run_dir / "checkpoints");
  if (has_run && !resume) {
    if (!force) throw ConfigError("run directory '" + run_dir.string() + "' already holds a run (use --resume or --force)");
    fs::remove_all(run_dir / "checkpoints");
    fs::remove(run_dir / "metrics.csv");
  }
  fs::create_directories(run_dir);
}

int cmd_train(TrainFlags& f) {
  RunConfig cfg = f.cfg.resolve();
  const fs::path run_dir = f.run_dir;
  prepare_run_dir(run_dir, f.resume, f.force);
  RunManifest m;
  m.command = "train";
  m.started = utc_timestamp();
  const auto videos = load_or_generate(f.data, cfg);
  auto result = run_training(cfg, videos, run_dir, f.resume, f.quiet);
  m.finished = utc_timestamp();
  m.seed = result.state.config.train.seed;
  m.config_text = to_config_text(result.state.config);
  m.artifacts["metrics"] = "metrics.csv";
  m.artifacts["run_log"] = "run.log";
  m.artifacts["checkpoints"] = "checkpoints";
  const auto last = latest_checkpoint(run_dir);
  if (!last.empty()) m.artifacts["final_checkpoint"] = fs::relative(last, run_dir).generic_string();
  write_manifest(m, run_dir);
  if (!result.log.empty())
    std::printf("finished %d epochs, %zu steps; final total %.4f, feature_std %.4f\n", result.state.epoch,
                result.log.size(), result.log.back().total, result.log.back().feature_std);
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalFlags {
  std::string run_dir = ".";
  std::string checkpoint;
  std::string data;
  std::string protocol = "davis";
  std::string encoder = "online";
  std::optional<int> top_k, radius, queue;
  std::optional<double> temperature;
  bool upsample = false, static_scene = false;
};

PropagationParams resolve_protocol(const std::string& protocol, const EvalFlags* f) {
  PropagationParams pp = PropagationParams::protocol(protocol);
  if (f) {
    if (f->top_k) pp.top_k = *f->top_k;
    if (f->radius) pp.radius = *f->radius;
    if (f->queue) pp.queue = *f->queue;
    if (f->temperature) pp.temperature = *f->temperature;
    pp.upsample = pp.upsample || f->upsample;
  }
  pp.validate();
  return pp;
}

template <typename Scalar>
EvalReport evaluate_checkpoint(const fs::path& ckpt, const std::string& encoder, const std::vector<LabeledVideo>& videos,
                               const PropagationParams& pp, const EvalOptions& opt, RunConfig& cfg) {
  const auto state = load_checkpoint<Scalar>(ckpt);
  cfg = state.config;
  const auto& params = encoder == "long" ? state.ema.xi_long : state.xi;
  return evaluate_dataset(params, cfg.model, videos, pp, opt);
}

int cmd_eval(const EvalFlags& f) {
  const fs::path run_dir = f.run_dir;
  fs::path ckpt = f.checkpoint;
  if (fs::is_directory(ckpt)) {
    const auto latest = latest_checkpoint(ckpt);
    if (latest.empty()) throw IoError("no checkpoint found under '" + (ckpt / "checkpoints").string() + "'");
    ckpt = latest;
  }
  if (!fs::is_regular_file(ckpt)) throw IoError("checkpoint '" + ckpt.string() + "' does not exist");
  const PropagationParams pp = resolve_protocol(f.protocol, &f);

  RunManifest m;
  m.command = "eval";
  m.started = utc_timestamp();
  // Dataset generation needs the checkpoint's data config when --data is absent.
  const std::string dtype = checkpoint_dtype(ckpt);
  RunConfig cfg = dtype == "float64" ? load_checkpoint<double>(ckpt).config : load_checkpoint<float>(ckpt).config;
  cfg.data.static_scene = cfg.data.static_scene || f.static_scene;
  const auto videos = load_or_generate(f.data, cfg);

  fs::create_directories(run_dir);
  EvalOptions opt;
  opt.mask_dir = run_dir / "masks";
  RunConfig loaded;
  const EvalReport report = dtype == "float64" ? evaluate_checkpoint<double>(ckpt, f.encoder, videos, pp, opt, loaded)
                                               : evaluate_checkpoint<float>(ckpt, f.encoder, videos, pp, opt, loaded);
  write_scores_csv(report, run_dir / "scores.csv");
  cfg.eval = pp;
  m.seed = cfg.train.seed;
  m.config_text = to_config_text(cfg);
  m.artifacts["checkpoint"] = fs::absolute(ckpt).generic_string();
  m.artifacts["scores"] = "scores.csv";
  m.artifacts["masks"] = "masks";
  m.finished = utc_timestamp();
  write_manifest(m, run_dir);
  std::printf("protocol %s (top_k %d, radius %d, queue %d, temperature %g), encoder %s\n", f.protocol.c_str(),
              pp.top_k, pp.radius, pp.queue, pp.temperature, f.encoder.c_str());
  std::printf("J_m %.4f  F_m %.4f  J&F_m %.4f over %zu sequences\n", report.j_mean, report.f_mean, report.jf_mean,
              report.sequences.size());
  return kOk;
}

// ---------------------------------------------------------------- ablate

struct AblateFlags {
  std::string run_dir;
  std::string rows;
  std::string seeds = "0";
  std::string data;
  std::string protocol = "davis";
  bool force = false;
  ConfigFlags cfg;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

const char* mark(bool b) { return b ? "yes" : "no"; }

int cmd_ablate(AblateFlags& f) {
  const RunConfig base = f.cfg.resolve();
  const fs::path run_dir = f.run_dir;
  if (non_empty_dir(run_dir) && !f.force)
    throw ConfigError("run directory '" + run_dir.string() + "' is not empty (use --force)");
  if (f.force) fs::remove_all(run_dir);
  fs::create_directories(run_dir);

  std::vector<AblationRow> rows;
  if (f.rows.empty())
    rows = ablation_rows();
  else
    for (const auto& name : split_list(f.rows)) rows.push_back(ablation_row(name));
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(f.seeds)) seeds.push_back(std::stoull(s));
  if (seeds.empty()) throw ConfigError("--seeds is empty");
  const PropagationParams pp = resolve_protocol(f.protocol, nullptr);

  RunManifest m;
  m.command = "ablate";
  m.started = utc_timestamp();
  std::ofstream csv(run_dir / "ablation.csv");
  if (!csv) throw IoError("cannot write '" + (run_dir / "ablation.csv").string() + "'");
  csv << "row,seed,symmetric,h,g,noise,ema,sg_prior,sg_post,J_m,F_m,J&F_m,final_feature_std,status\n";

  int exit_code = kOk;
  struct Mean {
    double sum = 0;
    int n = 0;
  };
  std::vector<Mean> means(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    for (const auto seed : seeds) {
      RunConfig cfg = base;
      cfg.train.objective.flags = row.flags;
      cfg.train.seed = seed;
      const fs::path dir = run_dir / row.name / ("seed_" + std::to_string(seed));
      const auto& fl = row.flags;
      csv << row.name << "," << seed << "," << mark(fl.symmetric) << "," << mark(fl.use_h) << ","
          << to_string(fl.g_kind) << "," << mark(fl.use_noise) << "," << mark(fl.use_ema_target) << ","
          << mark(fl.sg_prior) << "," << mark(fl.sg_post) << ",";
      try {
        const auto videos = load_or_generate(f.data, cfg);
        std::printf("[%s seed %llu] training\n", row.name.c_str(), static_cast<unsigned long long>(seed));
        std::fflush(stdout);
        auto result = run_training(cfg, videos, dir, false, true);
        const auto report = evaluate_dataset(result.state.xi, cfg.model, videos, pp);
        const double fstd = result.log.empty() ? 0.0 : result.log.back().feature_std;
        csv << report.j_mean << "," << report.f_mean << "," << report.jf_mean << "," << fstd << ",ok\n";
        means[i].sum += report.jf_mean;
        ++means[i].n;
        std::printf("[%s seed %llu] J&F_m %.4f feature_std %.4f\n", row.name.c_str(),
                    static_cast<unsigned long long>(seed), report.jf_mean, fstd);
      } catch (const NumericalError& e) {
        csv << ",,,,failed: " << e.what() << "\n";
        exit_code = exit_code == kOk ? kNumerical : exit_code;
        std::fprintf(stderr, "[%s] numerical failure: %s\n", row.name.c_str(), e.what());
      } catch (const std::exception& e) {
        csv << ",,,,failed: " << e.what() << "\n";
        exit_code = exit_code == kOk ? kIo : exit_code;
        std::fprintf(stderr, "[%s] failed: %s\n", row.name.c_str(), e.what());
      }
      csv.flush();
    }
  }

  std::ofstream table(run_dir / "ablation.txt");
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %-5s %-5s %-12s %-5s %-5s %-8s %-7s %8s\n", "row", "symm", "h", "g", "eps",
                "EMA", "SG-prior", "SG-post", "J&F_m");
  table << line;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& fl = rows[i].flags;
    const std::string score = means[i].n ? std::to_string(means[i].sum / means[i].n) : std::string("failed");
    std::snprintf(line, sizeof line, "%-14s %-5s %-5s %-12s %-5s %-5s %-8s %-7s %8s\n", rows[i].name.c_str(),
                  mark(fl.symmetric), mark(fl.use_h), to_string(fl.g_kind).c_str(), mark(fl.use_noise),
                  mark(fl.use_ema_target), mark(fl.sg_prior), mark(fl.sg_post), score.c_str());
    table << line;
  }
  table.close();
  std::ifstream echo(run_dir / "ablation.txt");
  std::cout << echo.rdbuf();

  m.seed = seeds.front();
  m.config_text = to_config_text(base);
  m.artifacts["csv"] = "ablation.csv";
  m.artifacts["table"] = "ablation.txt";
  m.finished = utc_timestamp();
  write_manifest(m, run_dir);
  return exit_code;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const std::vector<std::string>& inject, double tolerance) {
  GradCheckOptions opt;
  opt.tolerance = tolerance;
  opt.inject_sign_bug.insert(inject.begin(), inject.end());
  const auto report = run_gradcheck_suite(opt);
  int failed = 0;
  for (const auto& r : report.results) {
    std::printf("%s %-40s rel_err %.3e  (%zu entries)\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.rel_error,
                r.entries);
    failed += r.pass ? 0 : 1;
  }
  std::printf("%zu checks, %d failed, tolerance %.1e\n", report.results.size(), failed, report.tolerance);
  return report.all_pass() ? kOk : kNumerical;
}

// ---------------------------------------------------------------- plot

struct PlotFlags {
  std::string run_dir = ".";
  std::string metrics;
  std::string masks;
  std::string data;
  std::string out = "figures";
};

int cmd_plot(const PlotFlags& f) {
  const fs::path run_dir = f.run_dir, out = under(run_dir, f.out);
  RunManifest m;
  m.command = "plot";
  m.started = utc_timestamp();
  const bool want_metrics = !f.metrics.empty() || f.masks.empty();
  if (want_metrics) {
    const fs::path path = under(run_dir, f.metrics.empty() ? "metrics.csv" : f.metrics);
    if (!fs::is_regular_file(path)) throw IoError("missing metrics file: expected '" + path.string() + "'");
    const auto rows = read_metrics_csv(path);
    std::vector<double> x;
    Series total{"total", {}}, sim2{"sim2", {}}, kl{"sim1_kl", {}}, fstd{"feature_std", {}};
    for (const auto& r : rows) {
      x.push_back(static_cast<double>(r.step));
      total.y.push_back(r.total);
      sim2.y.push_back(r.sim2);
      kl.y.push_back(r.sim1_kl);
      fstd.y.push_back(r.feature_std);
    }
    fs::create_directories(out);
    write_line_chart_svg("training loss", x, {total, sim2, kl}, out / "loss.svg");
    write_line_chart_svg("feature std", x, {fstd}, out / "feature_std.svg");
    m.artifacts["loss_curve"] = "loss.svg";
    m.artifacts["feature_std_curve"] = "feature_std.svg";
    std::printf("wrote %s and %s\n", (out / "loss.svg").c_str(), (out / "feature_std.svg").c_str());
  }
  if (!f.masks.empty()) {
    const fs::path masks = under(run_dir, f.masks);
    if (!fs::is_directory(masks)) throw IoError("missing mask directory: expected '" + masks.string() + "'");
    std::vector<fs::path> seqs;
    for (const auto& e : fs::directory_iterator(masks))
      if (e.is_directory()) seqs.push_back(e.path());
    std::sort(seqs.begin(), seqs.end());
    if (seqs.empty()) throw IoError("missing masks: expected sequence directories under '" + masks.string() + "'");
    fs::create_directories(out);
    int written = 0;
    for (const auto& seq : seqs) {
      int length = 0;
      while (fs::exists(seq / frame_filename(length, "pgm"))) ++length;
      if (length == 0) throw IoError("missing masks: expected '" + (seq / frame_filename(0, "pgm")).string() + "'");
      const auto picks = strip_frames(length);
      std::vector<LabelGrid> panels;
      std::vector<Frame> frames;
      std::optional<LabeledVideo> video;
      if (!f.data.empty()) {
        const fs::path vdir = fs::path(f.data) / seq.filename();
        if (!fs::is_directory(vdir)) throw IoError("missing video: expected '" + vdir.string() + "'");
        video = read_video(vdir);
      }
      for (std::size_t i = 0; i < picks.size(); ++i) {
        if (i == 0 && video)
          panels.push_back(video->masks[0]);  // Ref: ground truth
        else
          panels.push_back(read_labels(seq / frame_filename(picks[i], "pgm")));
        if (video) frames.push_back(video->frames[picks[i]]);
      }
      const int size = video ? video->frames[0].width() : std::max<int>(64, static_cast<int>(panels[0].rows()));
      const fs::path file = out / ("strip_" + seq.filename().string() + ".ppm");
      write_rgb(render_mask_strip(panels, frames, std::max(size, 64)), file);
      ++written;
    }
    m.artifacts["strips"] = ".";
    std::printf("wrote %d mask strips (Ref, 25%%, 75%%, 100%%) to %s\n", written, out.c_str());
  }
  // The figure directory is its own run directory; the source run's manifest stays intact.
  if (std::ifstream cfg{run_dir / "config.resolved"}) {
    std::ostringstream buf;
    buf << cfg.rdbuf();
    m.config_text = buf.str();
  }
  m.finished = utc_timestamp();
  write_manifest(m, out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phinet: self-supervised video representation learning at desk scale"};
  app.require_subcommand(1);

  GenData gen;
  auto* g = app.add_subcommand("gen-data", "write a synthetic moving-shapes dataset");
  g->add_option("--run-dir", gen.run_dir, "run directory (manifest goes here)")->capture_default_str();
  g->add_option("--out", gen.out, "dataset directory, relative to --run-dir")->capture_default_str();
  g->add_option("--seed", gen.seed, "dataset seed")->capture_default_str();
  g->add_option("--n-videos", gen.n_videos, "number of videos")->capture_default_str();
  g->add_option("--frames", gen.frames, "frames per video (>= 2)")->capture_default_str();
  g->add_option("--image-size", gen.image_size, "frame side in pixels")->capture_default_str();
  g->add_flag("--static", gen.static_scene, "zero-velocity shapes (propagation sanity set)");
  g->add_flag("--force", gen.force, "overwrite a non-empty output directory");

  TrainFlags tf;
  auto* t = app.add_subcommand("train", "train a model into a run directory");
  t->add_option("--run-dir", tf.run_dir, "run directory")->required();
  t->add_option("--data", tf.data, "dataset directory (default: generate from the data config)");
  t->add_flag("--resume", tf.resume, "continue from the latest checkpoint");
  t->add_flag("--force", tf.force, "discard an existing run in --run-dir");
  t->add_flag("--quiet", tf.quiet, "no per-epoch progress");
  tf.cfg.attach(t, true);

  AblateFlags af;
  auto* a = app.add_subcommand("ablate", "train and evaluate the ablation rows");
  a->add_option("--run-dir", af.run_dir, "run directory")->required();
  a->add_option("--rows", af.rows, "comma-separated row names (default: all nine)");
  a->add_option("--seeds", af.seeds, "comma-separated training seeds")->capture_default_str();
  a->add_option("--data", af.data, "dataset directory (default: generate from the data config)");
  a->add_option("--protocol", af.protocol, "davis | vip | jhmdb")->capture_default_str();
  a->add_flag("--force", af.force, "overwrite a non-empty run directory");
  af.cfg.attach(a, false);

  EvalFlags ef;
  auto* e = app.add_subcommand("eval", "label propagation on a dataset with a trained checkpoint");
  e->add_option("--run-dir", ef.run_dir, "output directory for scores and masks")->capture_default_str();
  e->add_option("--checkpoint", ef.checkpoint, "checkpoint file or training run directory")->required();
  e->add_option("--data", ef.data, "dataset directory (default: generate from the checkpoint's data config)");
  e->add_option("--protocol", ef.protocol, "davis (7,30,30) | vip (7,5,3) | jhmdb (10,5,30)")->capture_default_str();
  e->add_option("--encoder", ef.encoder, "online | long")->check(CLI::IsMember({"online", "long"}))->capture_default_str();
  e->add_option("--top-k", ef.top_k, "override the protocol's top-k");
  e->add_option("--radius", ef.radius, "override the neighbourhood radius (patch units)");
  e->add_option("--queue", ef.queue, "override the queue length");
  e->add_option("--temperature", ef.temperature, "affinity softmax temperature (default 0.1)");
  e->add_flag("--upsample", ef.upsample, "score at full resolution (bilinear soft labels)");
  e->add_flag("--static", ef.static_scene, "generate the static sanity dataset when --data is absent");

  std::vector<std::string> inject;
  double tolerance = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient path (64-bit, micro config)");
  gc->add_option("--inject-sign-bug", inject, "negate the analytic gradient of the named checks");
  gc->add_option("--tolerance", tolerance, "relative error bound")->capture_default_str();

  PlotFlags pf;
  auto* p = app.add_subcommand("plot", "loss/feature-std curves and mask strips");
  p->add_option("--run-dir", pf.run_dir, "run directory")->capture_default_str();
  p->add_option("--metrics", pf.metrics, "metrics CSV (default: <run-dir>/metrics.csv)");
  p->add_option("--masks", pf.masks, "predicted mask directory from eval");
  p->add_option("--data", pf.data, "dataset directory for frames and reference masks");
  p->add_option("--out", pf.out, "figure directory, relative to --run-dir")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tf);
    if (*a) return cmd_ablate(af);
    if (*e) return cmd_eval(ef);
    if (*gc) return cmd_gradcheck(inject, tolerance);
    if (*p) return cmd_plot(pf);
  } catch (const NumericalError& err) {
    std::fprintf(stderr, "numerical failure in %s: %s\n", err.where().c_str(), err.what());
    return kNumerical;
  } catch (const IoError& err) {
    std::fprintf(stderr, "I/O error: %s\n", err.what());
    return kIo;
  } catch (const std::filesystem::filesystem_error& err) {
    std::fprintf(stderr, "I/O error: %s\n", err.what());
    return kIo;
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsage;
  } catch (const ProtocolError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsage;
  }
  return kUsage;
}
