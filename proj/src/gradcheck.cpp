#include "phinet/gradcheck.hpp"

#include <algorithm>
#include <map>
#include <random>

#include "phinet/backbone.hpp"
#include "phinet/ema.hpp"
#include "phinet/hippocampus.hpp"
#include "phinet/model.hpp"
#include "phinet/objective.hpp"

namespace phinet {

double relative_error(const Mat<double>& analytic, const Mat<double>& numeric) {
  const double denom = std::max(analytic.norm(), numeric.norm());
  if (denom == 0.0) return 0.0;
  return (analytic - numeric).norm() / denom;
}

Gradients<double> analytic_gradient(const ParameterSet<double>& params, const ScalarProbe& probe) {
  ad::Tape<double> tape;
  Binder<double> b(tape, params, true);
  auto out = probe(b);
  tape.backward(out);
  Gradients<double> grads;
  b.collect(grads);
  // Entries the probe never touched still get an explicit zero gradient.
  for (const auto& [name, p] : params)
    if (p.trainable) grads.try_emplace(name, Mat<double>::Zero(p.value.rows(), p.value.cols()));
  return grads;
}

Gradients<double> numeric_gradient(const ParameterSet<double>& params, const ScalarProbe& value, double step) {
  auto eval = [&](const ParameterSet<double>& ps) {
    ad::Tape<double> tape;
    Binder<double> b(tape, ps, false);
    return value(b).item();
  };
  ParameterSet<double> work = params;
  Gradients<double> grads;
  for (const auto& [name, p] : params) {
    if (!p.trainable) continue;
    Mat<double> g(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& x = work[name].data()[i];
      const double orig = x;
      x = orig + step;
      const double up = eval(work);
      x = orig - step;
      const double down = eval(work);
      x = orig;
      g.data()[i] = (up - down) / (2.0 * step);
    }
    grads.emplace(name, std::move(g));
  }
  return grads;
}

namespace {

Mat<double> random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Frame random_frame(const ModelConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Frame f(cfg.channels, cfg.image_size);
  for (auto& p : f.planes)
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return f;
}

// Flattens the named gradients into one vector (map order), applying per-name scales.
Mat<double> flatten(const Gradients<double>& g, const std::vector<std::string>& names,
                    const std::map<std::string, double>& scale = {}) {
  Eigen::Index n = 0;
  for (const auto& k : names) n += g.at(k).size();
  Mat<double> out(n, 1);
  Eigen::Index at = 0;
  for (const auto& k : names) {
    const auto& m = g.at(k);
    const auto s = scale.count(k) ? scale.at(k) : 1.0;
    out.middleRows(at, m.size()) = Eigen::Map<const Mat<double>>(m.data(), m.size(), 1) * s;
    at += m.size();
  }
  return out;
}

std::vector<std::string> trainable_names(const ParameterSet<double>& ps) {
  std::vector<std::string> names;
  for (const auto& [name, p] : ps)
    if (p.trainable) names.push_back(name);
  return names;
}

GradCheckResult compare(const std::string& name, const Gradients<double>& analytic, const Gradients<double>& numeric,
                        const std::vector<std::string>& names, const GradCheckOptions& opt,
                        const std::map<std::string, double>& analytic_scale = {}) {
  Mat<double> a = flatten(analytic, names, analytic_scale);
  if (opt.inject_sign_bug.count(name)) a = -a;
  const Mat<double> n = flatten(numeric, names);
  GradCheckResult r;
  r.name = name;
  r.rel_error = relative_error(a, n);
  r.analytic_norm = a.norm();
  r.entries = static_cast<std::size_t>(a.size());
  r.pass = r.rel_error < opt.tolerance && std::isfinite(r.rel_error);
  return r;
}

GradCheckResult check_op(const std::string& name, const ParameterSet<double>& ps, const ScalarProbe& analytic_probe,
                         const ScalarProbe& value_probe, const GradCheckOptions& opt,
                         const std::map<std::string, double>& analytic_scale = {}) {
  const auto a = analytic_gradient(ps, analytic_probe);
  const auto n = numeric_gradient(ps, value_probe, opt.step);
  return compare(name, a, n, trainable_names(ps), opt, analytic_scale);
}

}  // namespace

GradCheckReport run_gradcheck_suite(const GradCheckOptions& opt) {
  const ModelConfig cfg = ModelConfig::micro();
  std::mt19937_64 rng(opt.seed);
  ParameterSet<double> params = init_parameters<double>(cfg, DecoderKind::transformer, opt.seed);
  randomize(params, 0.3, opt.seed + 1);

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  const int d = cfg.d, np = cfg.n_p();

  {  // backbone.encode, including the gradient w.r.t. the input patches
    ParameterSet<double> ps = params.subset("f.");
    ps.add("x.patches", random_matrix(cfg.patch_dim(), np - 1, rng));
    const Mat<double> w = random_matrix(d, np, rng);
    ScalarProbe probe = [&](Binder<double>& b) { return ad::dot(encode(b, b("x.patches"), cfg), w); };
    report.results.push_back(check_op("backbone.encode", ps, probe, probe, opt));
  }
  {
    ParameterSet<double> ps;
    ps.add("h.w", random_matrix(d, d, rng));
    ps.add("x.z", random_matrix(d, np, rng));
    const Mat<double> w = random_matrix(d, np, rng);
    ScalarProbe probe = [&](Binder<double>& b) { return ad::dot(ca3_predict(b, b("x.z")), w); };
    report.results.push_back(check_op("hippocampus.ca3_predict", ps, probe, probe, opt));
  }
  {
    ParameterSet<double> ps = params.subset("prior.");
    ps.add("x.cls", random_matrix(d, 1, rng));
    const Mat<double> w = random_matrix(cfg.c, cfg.m, rng);
    ScalarProbe probe = [&](Binder<double>& b) { return ad::dot(prior_logits(b, b("x.cls"), cfg, false), w); };
    report.results.push_back(check_op("hippocampus.prior_logits", ps, probe, probe, opt));
  }
  {
    ParameterSet<double> ps = params.subset("post.");
    ps.add("x.cls_hat", random_matrix(d, 1, rng));
    ps.add("x.cls_future", random_matrix(d, 1, rng));
    const Mat<double> w = random_matrix(cfg.c, cfg.m, rng);
    ScalarProbe probe = [&](Binder<double>& b) {
      return ad::dot(posterior_logits(b, b("x.cls_hat"), b("x.cls_future"), cfg, false), w);
    };
    report.results.push_back(check_op("hippocampus.posterior_logits", ps, probe, probe, opt));
  }
  {  // backward contract of the straight-through sample: the softmax Jacobian
    ParameterSet<double> ps;
    ps.add("x.logits", random_matrix(cfg.c, cfg.m, rng));
    const Mat<double> w = random_matrix(cfg.c, cfg.m, rng);
    const std::uint64_t seed = rng();
    ScalarProbe analytic = [&](Binder<double>& b) {
      std::mt19937_64 r(seed);
      return ad::dot(sample_straight_through(b("x.logits"), r), w);
    };
    ScalarProbe value = [&](Binder<double>& b) { return ad::dot(ad::softmax_cols(b("x.logits")), w); };
    report.results.push_back(check_op("hippocampus.sample_straight_through", ps, analytic, value, opt));
  }
  {
    ParameterSet<double> ps = params.subset("g.");
    ps.add("x.z_hat", random_matrix(d, np, rng));
    ps.add("x.r", random_matrix(cfg.c, cfg.m, rng));
    const Mat<double> w = random_matrix(d, np - 1, rng);
    ScalarProbe probe = [&](Binder<double>& b) { return ad::dot(ca1_decode(b, b("x.z_hat"), b("x.r"), cfg), w); };
    report.results.push_back(check_op("hippocampus.ca1_decode", ps, probe, probe, opt));
  }
  {
    ParameterSet<double> ps;
    ps.add("x.y", random_matrix(d, np - 1, rng));
    ps.add("x.target", random_matrix(d, np - 1, rng), false);
    const double s2 = sigma_squared(cfg, 0.01);
    ScalarProbe probe = [&](Binder<double>& b) { return sim2(b("x.y"), b("x.target"), s2); };
    report.results.push_back(check_op("objective.sim2", ps, probe, probe, opt));
  }
  {  // each side receives its share of the full KL gradient
    ParameterSet<double> ps;
    ps.add("x.q", random_matrix(cfg.c, cfg.m, rng));
    ps.add("x.p", random_matrix(cfg.c, cfg.m, rng));
    const double alpha = 0.8;
    ScalarProbe probe = [&](Binder<double>& b) { return kl_balanced(b("x.q"), b("x.p"), alpha); };
    report.results.push_back(
        check_op("objective.kl_balanced", ps, probe, probe, opt, {{"x.q", 1.0 / (1.0 - alpha)}, {"x.p", 1.0 / alpha}}));
  }
  {  // end to end on the smooth surrogate, one result per trainable parameter
    const Frame x_t = random_frame(cfg, rng);
    const Frame x_tk = random_frame(cfg, rng);
    ParameterSet<double> slow = params.subset("f.");
    randomize(slow, 0.05, opt.seed + 2);
    ObjectiveConfig oc;
    oc.flags = LossFlags::proposed();
    oc.smooth_surrogate = true;
    const std::uint64_t seed = rng();
    ScalarProbe probe = [&](Binder<double>& b) {
      Binder<double> slow_b(b.tape(), slow, false);
      std::mt19937_64 r(seed);
      return phinet_loss_asym(b, slow_b, x_t, x_tk, oc, cfg, r).total;
    };
    const auto a = analytic_gradient(params, probe);
    const auto n = numeric_gradient(params, probe, opt.step);
    for (const auto& name : trainable_names(params))
      report.results.push_back(compare("loss[" + name + "]", a, n, {name}, opt));
  }
  return report;
}

}  // namespace phinet
