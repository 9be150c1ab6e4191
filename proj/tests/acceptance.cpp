// Acceptance checks: one PASS/FAIL line per criterion. Exit status is
// nonzero when any hard criterion fails; criterion 6 is advisory.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "phinet/ema.hpp"
#include "phinet/eval.hpp"
#include "phinet/gradcheck.hpp"
#include "phinet/trainer.hpp"

using namespace phinet;
using Md = Mat<double>;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "" : "!") + what);
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Md gaussian(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Md m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Frame random_frame(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Frame f(cfg.channels, cfg.image_size);
  for (auto& p : f.planes)
    for (int i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return f;
}

double prefix_norm(const Gradients<double>& g, const std::vector<std::string>& prefixes) {
  double sq = 0.0;
  for (const auto& [name, m] : g)
    for (const auto& p : prefixes)
      if (name.rfind(p, 0) == 0) sq += m.squaredNorm();
  return std::sqrt(sq);
}

// ------------------------------------------------------------------ 1
Verdict gradient_suite() {
  Verdict v;
  const auto t0 = Clock::now();
  const GradCheckReport rep = run_gradcheck_suite();
  const double secs = seconds_since(t0);
  double worst = 0.0;
  int loss_groups = 0;
  for (const auto& r : rep.results) {
    worst = std::max(worst, r.rel_error);
    if (!r.pass) v.check(false, r.name + " rel_err " + fmt("%.2e", r.rel_error));
    loss_groups += r.name.rfind("loss[", 0) == 0;
  }
  v.check(rep.all_pass(), std::to_string(rep.results.size()) + " checks, worst rel_err " + fmt("%.2e", worst));
  v.check(loss_groups > 0, std::to_string(loss_groups) + " loss parameter groups");
  v.check(secs < 60.0, fmt("%.1f s", secs));
  return v;
}

// ------------------------------------------------------------------ 2
Verdict loss_oracles() {
  Verdict v;
  const double s2 = sigma_squared(384, 197, 0.01, 32);
  v.check(std::abs(s2 - 11.76) <= 1e-9, "sigma2 " + fmt("%.12f", s2));
  Md q(2, 1), p(2, 1);
  q << 0.0, 0.0;
  p << std::log(0.25), std::log(0.75);
  const double kl = kl_categorical<double>(q, p);
  v.check(std::abs(kl - 0.14384) <= 1e-5, "KL " + fmt("%.6f", kl));

  ad::Tape<double> tape;
  const Md y = gaussian(8, 4, 1);
  Md t = y;
  t(3, 2) += 1.0;
  const double unit = sim2(tape.constant(y), tape.constant(t), 0.5).item();
  v.check(std::abs(unit - 1.0) <= 1e-12, "unit sim2 " + fmt("%.15f", unit));

  const ModelConfig cfg = ModelConfig::desk();
  const double beta = 0.01;
  const Md a = gaussian(cfg.d, cfg.n_p() - 1, 2), b = gaussian(cfg.d, cfg.n_p() - 1, 3);
  const double s = sim2(tape.constant(a), tape.constant(b), sigma_squared(cfg, beta)).item();
  const double mse = (a - b).squaredNorm() / static_cast<double>(a.size());
  const double rel = std::abs(s - cfg.m / beta * mse) / s;
  v.check(rel < 1e-12, "(m/beta)*MSE rel_err " + fmt("%.1e", rel));
  return v;
}

// ------------------------------------------------------------------ 3
Verdict gradient_contracts() {
  Verdict v;
  const auto t0 = Clock::now();
  const ModelConfig cfg = ModelConfig::micro();
  auto params = init_parameters<double>(cfg, DecoderKind::transformer, 11);
  randomize(params, 0.3, 12);
  auto slow = params.subset("f.");
  randomize(slow, 0.05, 13);
  const Frame xa = random_frame(cfg, 14), xb = random_frame(cfg, 15);

  // KL balancing on the heads alone.
  const Md c1 = gaussian(cfg.d, 1, 16), c2 = gaussian(cfg.d, 1, 17);
  auto kl_probe = [&](double alpha) -> ScalarProbe {
    return [&, alpha](Binder<double>& b) {
      auto h = b.tape().constant(c1), f = b.tape().constant(c2);
      return kl_balanced(posterior_logits(b, h, f, cfg), prior_logits(b, h, cfg), alpha);
    };
  };
  const auto g1 = analytic_gradient(params, kl_probe(1.0));
  const auto g0 = analytic_gradient(params, kl_probe(0.0));
  v.check(prefix_norm(g1, {"post."}) == 0.0 && prefix_norm(g1, {"prior."}) > 0.0,
          "alpha=1 posterior grad " + fmt("%.1e", prefix_norm(g1, {"post."})));
  v.check(prefix_norm(g0, {"prior."}) == 0.0 && prefix_norm(g0, {"post."}) > 0.0,
          "alpha=0 prior grad " + fmt("%.1e", prefix_norm(g0, {"prior."})));

  // SG-prior: the prior path alone, probed into the encoder and W_h.
  const Md w = gaussian(cfg.c, cfg.m, 18);
  auto prior_path = [&](bool sg) {
    const ScalarProbe probe = [&, sg](Binder<double>& b) {
      auto z_hat = ca3_predict(b, encode_frame(b, xa, cfg));
      return ad::dot(prior_logits(b, ad::cols(z_hat, 0, 1), cfg, sg), w);
    };
    return prefix_norm(analytic_gradient(params, probe), {"f.", "h."});
  };
  const double sg_on = prior_path(true), sg_off = prior_path(false);
  v.check(sg_on == 0.0 && sg_off > 0.0, "SG-prior encoder grad " + fmt("%.1e", sg_on) + " (off " + fmt("%.1e", sg_off) + ")");

  // SG-2: a full symmetric loss with the slow copy tracked.
  {
    ad::Tape<double> tape;
    Binder<double> on(tape, params), sl(tape, slow, true);
    std::mt19937_64 rng(19);
    ObjectiveConfig oc;
    tape.backward(phinet_loss_symmetric(on, sl, xa, xb, oc, cfg, rng).total);
    Gradients<double> gs;
    sl.collect(gs);
    v.check(!gs.empty() && global_norm(gs) == 0.0, "xi_long grad " + fmt("%.1e", global_norm(gs)));
  }

  // Straight-through backward against the softmax Jacobian.
  {
    const Md logits = gaussian(cfg.c, cfg.m, 20), wt = gaussian(cfg.c, cfg.m, 21);
    ad::Tape<double> tape;
    auto l = tape.variable(logits);
    std::mt19937_64 rng(22);
    tape.backward(ad::dot(sample_straight_through(l, rng), wt));
    const Md pr = ad::softmax_cols_value<double>(logits);
    Md expected(pr.rows(), pr.cols());
    for (int j = 0; j < pr.cols(); ++j)
      expected.col(j) = pr.col(j).array() * (wt.col(j).array() - pr.col(j).dot(wt.col(j)));
    const double rel = relative_error(tape.grad(l.id), expected);
    v.check(rel < 1e-6, "straight-through rel_err " + fmt("%.1e", rel));
  }
  const double secs = seconds_since(t0);
  v.check(secs < 60.0, fmt("%.1f s", secs));
  return v;
}

// ------------------------------------------------------------------ 4
Verdict ema_contracts() {
  Verdict v;
  const ModelConfig cfg = ModelConfig::micro();
  auto xi = init_parameters<double>(cfg, DecoderKind::transformer, 31);
  randomize(xi, 0.2, 32);
  auto st = init_long(xi, 0.99);
  double copy_diff = 0.0;
  for (const auto& [name, p] : st.xi_long) copy_diff = std::max(copy_diff, (p.value - xi[name]).cwiseAbs().maxCoeff());
  v.check(copy_diff == 0.0 && st.xi_long.same_structure(xi.subset("f.")), "init copy diff " + fmt("%.1e", copy_diff));

  auto moved = xi;
  randomize(moved, 0.5, 33);
  const auto before = st.xi_long;
  ema_update(st, moved);
  double step_err = 0.0;
  for (const auto& [name, p] : st.xi_long) {
    if (!p.trainable) continue;
    const Md expected = 0.99 * before[name] + (1.0 - 0.99) * moved[name];
    step_err = std::max(step_err, (p.value - expected).cwiseAbs().maxCoeff());
  }
  v.check(step_err <= 4 * std::numeric_limits<double>::epsilon(), "one-step max err " + fmt("%.1e", step_err));

  ParameterSet<double> one, zero;
  one.add("f.x", Md::Constant(1, 1, 1.0));
  zero.add("f.x", Md::Zero(1, 1));
  auto decay = init_long(one, 0.9);
  for (int i = 0; i < 100; ++i) ema_update(decay, zero);
  const double ratio = std::abs(decay.xi_long["f.x"](0, 0));
  const double rel = std::abs(ratio - std::pow(0.9, 100)) / std::pow(0.9, 100);
  v.check(rel < 1e-10, "gamma^100 rel_err " + fmt("%.1e", rel));
  return v;
}

// ------------------------------------------------------- desk-scale runs
struct DeskRun {
  TrainResult<float> result;
  EvalReport report;
  double seconds = 0.0;
};

RunConfig desk_config(const std::string& row, std::uint64_t seed) {
  RunConfig cfg = desk_preset();
  cfg.train.objective.flags = ablation_row(row).flags;
  cfg.train.seed = seed;
  return cfg;
}

double min_feature_std(const DeskRun& r) {
  double m = INFINITY;
  for (const auto& row : r.result.log) m = std::min(m, row.feature_std);
  return m;
}

DeskRun desk_run(const std::string& row, std::uint64_t seed, const std::vector<LabeledVideo>& videos) {
  const auto t0 = Clock::now();
  const RunConfig cfg = desk_config(row, seed);
  DeskRun r;
  r.result = train<float>(cfg, videos);
  r.report = evaluate_dataset(r.result.state.xi, cfg.model, videos, PropagationParams::davis());
  r.seconds = seconds_since(t0);
  std::printf("  [%s seed %llu] %zu steps, final feature_std %.4f, min %.4f, J&F_m %.4f (%.0f s)\n", row.c_str(),
              static_cast<unsigned long long>(seed), r.result.log.size(), r.result.log.back().feature_std,
              min_feature_std(r), r.report.jf_mean, r.seconds);
  std::fflush(stdout);
  return r;
}

// ------------------------------------------------------------------ 5
Verdict collapse(const DeskRun& on, const DeskRun& off) {
  Verdict v;
  const double off_min = min_feature_std(off), on_min = min_feature_std(on);
  v.check(off.result.log.size() == 200 && on.result.log.size() == 200,
          std::to_string(off.result.log.size()) + " steps per run");
  v.check(off_min < 0.01, "EMA-off min feature_std " + fmt("%.4f", off_min) + " (need < 0.01)");
  v.check(on_min > 0.1, "EMA-on min feature_std " + fmt("%.4f", on_min) + " (need > 0.1)");
  const double gap = on.report.jf_mean - off.report.jf_mean;
  v.check(gap >= 0.05, "J&F_m gap " + fmt("%.4f", gap) + " (on " + fmt("%.4f", on.report.jf_mean) + ", off " +
                           fmt("%.4f", off.report.jf_mean) + "; need >= 0.05)");
  v.check(on.seconds + off.seconds < 900.0, fmt("%.0f s", on.seconds + off.seconds));
  return v;
}

// ------------------------------------------------------------------ 6
Verdict ordering(const std::map<std::string, std::vector<double>>& scores) {
  Verdict v;
  auto mean = [](const std::vector<double>& x) {
    double s = 0.0;
    for (double e : x) s += e;
    return s / static_cast<double>(x.size());
  };
  std::ostringstream per_seed;
  for (const auto& [row, xs] : scores) {
    per_seed << row << " [";
    for (std::size_t i = 0; i < xs.size(); ++i) per_seed << (i ? " " : "") << fmt("%.4f", xs[i]);
    per_seed << "] ";
  }
  const double p = mean(scores.at("proposed")), s = mean(scores.at("no-symmetric")), e = mean(scores.at("no-ema"));
  v.check(p >= s, "proposed " + fmt("%.4f", p) + " >= no-symmetric " + fmt("%.4f", s));
  v.check(s >= e, "no-symmetric " + fmt("%.4f", s) + " >= no-ema " + fmt("%.4f", e));
  v.notes.push_back(per_seed.str());
  return v;
}

// ------------------------------------------------------------------ 7
Verdict propagation_oracles(const ParameterSet<float>& trained) {
  Verdict v;
  const RunConfig base = desk_preset();
  DataConfig dc = base.data;
  dc.static_scene = true;
  const auto statics = generate_dataset(dc, base.model.image_size);
  const auto untrained = init_parameters<float>(base.model, DecoderKind::transformer, 41);
  for (const auto& [label, params] :
       std::vector<std::pair<std::string, const ParameterSet<float>*>>{{"untrained", &untrained}, {"trained", &trained}}) {
    const auto r = evaluate_dataset(*params, base.model, statics, PropagationParams::davis());
    v.check(std::abs(r.jf_mean - 1.0) <= 1e-9, "static J&F_m (" + label + ") " + fmt("%.10f", r.jf_mean));
  }

  // Degenerate parameters copy the previous frame's labels.
  PropagationParams pp;
  pp.queue = 1;
  pp.radius = 0;
  pp.top_k = 1;
  std::mt19937_64 rng(42);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<FeatureGrid> grids;
  for (int t = 0; t < 6; ++t) {
    FeatureGrid g{4, 4, Eigen::MatrixXf(16, 16)};
    for (int i = 0; i < g.features.size(); ++i) g.features.data()[i] = n(rng);
    g.features.colwise().normalize();
    grids.push_back(g);
  }
  LabelGrid ref(4, 4);
  for (int i = 0; i < ref.size(); ++i) ref.data()[i] = static_cast<int>(rng() % 3);
  bool copies = true;
  for (const auto& s : propagate_labels(grids, ref, 3, pp)) copies = copies && hard_labels(s, 4, 4) == ref;
  v.check(copies, "queue 1 / radius 0 / top_k 1 copies labels");

  // J and F unit cases.
  auto square = [](int y0, int x0, int side) {
    LabelGrid l = LabelGrid::Zero(10, 10);
    l.block(y0, x0, side, side).setConstant(1);
    return l;
  };
  const LabelGrid gt = square(3, 3, 4);
  LabelGrid half = LabelGrid::Zero(10, 10);
  half.block(3, 3, 2, 4).setConstant(1);
  const bool j_ok = jaccard(gt, gt, 1) == 1.0 && jaccard(square(0, 0, 2), square(7, 7, 2), 1) == 0.0 &&
                    jaccard(half, gt, 1) == 0.5;
  const bool f_ok = boundary_f(gt, gt, 1) == 1.0 && boundary_f(LabelGrid::Zero(10, 10), gt, 1) == 0.0 &&
                    boundary_f(square(3, 4, 4), gt, 1, 1.0) == 1.0;
  v.check(j_ok, "J unit cases");
  v.check(f_ok, "F unit cases");
  return v;
}

// ------------------------------------------------------------------ 8
Verdict training_sanity(const DeskRun& run, const std::vector<LabeledVideo>& videos) {
  Verdict v;
  const auto& log = run.result.log;
  if (log.size() < 40) {
    v.check(false, "only " + std::to_string(log.size()) + " steps");
    return v;
  }
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += log[i].total / 20.0;
    last += log[log.size() - 20 + i].total / 20.0;
  }
  v.check(last < first, "mean total first-20 " + fmt("%.2f", first) + ", last-20 " + fmt("%.2f", last));
  const auto again = train<float>(desk_config("proposed", 0), videos);
  bool same_log = again.log.size() == log.size();
  for (std::size_t i = 0; same_log && i < log.size(); ++i) same_log = metrics_csv_row(again.log[i]) == metrics_csv_row(log[i]);
  const bool same_params = parameter_hash(again.state.xi) == parameter_hash(run.result.state.xi);
  v.check(same_params && same_log, "rerun parameter hash " + std::string(same_params ? "equal" : "differs") +
                                       ", metrics " + (same_log ? "equal" : "differ"));
  return v;
}

// ------------------------------------------------------------------ 9
Verdict presets() {
  Verdict v;
  struct Expect {
    const char* name;
    int top_k, radius, queue;
  };
  for (const Expect& e : {Expect{"davis", 7, 30, 30}, Expect{"vip", 7, 5, 3}, Expect{"jhmdb", 10, 5, 30}}) {
    const auto pp = PropagationParams::protocol(e.name);
    v.check(pp.top_k == e.top_k && pp.radius == e.radius && pp.queue == e.queue,
            std::string(e.name) + " (" + std::to_string(pp.top_k) + "," + std::to_string(pp.radius) + "," +
                std::to_string(pp.queue) + ")");
  }
  const RunConfig p = preset("paper");
  const TrainConfig& t = p.train;
  const bool table = t.lr == 1.5e-4 && t.beta1 == 0.9 && t.beta2 == 0.95 && t.weight_decay == 0.05 &&
                     t.warmup_epochs == 40 && t.total_epochs == 400 && t.batch_size == 768 &&
                     p.data.repeated_sampling == 2 && p.data.k_min == 4 && p.data.k_max == 48 &&
                     p.data.crop_min == 0.5 && p.data.crop_max == 1.0 && p.data.hflip_p > 0.0 &&
                     p.model.n_p() - 1 == 196 && p.model.d == 384 && p.model.m == 32 && p.model.c == 32 &&
                     t.objective.sigma_eps == 0.5 && t.objective.alpha == 0.8 && t.gamma == 0.99 &&
                     t.ema_cadence == EmaCadence::per_epoch && t.objective.beta == 0.01;
  v.check(table, "paper preset pre-training values");
  return v;
}

void report(int id, const std::string& title, const Verdict& v, bool advisory, int& failures) {
  std::string line;
  for (const auto& n : v.notes) line += (line.empty() ? "" : "; ") + n;
  const char* tag = v.pass ? "PASS" : (advisory ? "FAIL (advisory)" : "FAIL");
  std::printf("%s %d %s: %s\n", tag, id, title.c_str(), line.c_str());
  std::fflush(stdout);
  if (!v.pass && !advisory) ++failures;
}

}  // namespace

int main() {
  int failures = 0;
  report(1, "gradient suite", gradient_suite(), false, failures);
  report(2, "loss-formula oracles", loss_oracles(), false, failures);
  report(3, "stop-gradient and balancing contracts", gradient_contracts(), false, failures);
  report(4, "EMA contracts", ema_contracts(), false, failures);

  std::printf("  desk-scale runs: 16 videos x 64 frames, 32 px, seed 0, 200 steps each\n");
  const RunConfig desk = desk_preset();
  const auto videos = generate_dataset(desk.data, desk.model.image_size);
  std::map<std::string, std::vector<double>> scores;
  std::map<std::string, DeskRun> seed0;
  for (const std::string row : {"proposed", "no-symmetric", "no-ema"}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      DeskRun r = desk_run(row, seed, videos);
      scores[row].push_back(r.report.jf_mean);
      if (seed == 0) seed0.emplace(row, std::move(r));
    }
  }
  report(5, "collapse without EMA", collapse(seed0.at("proposed"), seed0.at("no-ema")), false, failures);
  report(6, "ablation ordering", ordering(scores), true, failures);
  report(7, "propagation oracles", propagation_oracles(seed0.at("proposed").result.state.xi), false, failures);
  report(8, "training sanity", training_sanity(seed0.at("proposed"), videos), false, failures);
  report(9, "protocol and paper presets", presets(), false, failures);
  std::printf("%d hard criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
