#include "phinet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <Eigen/SVD>

#include "phinet/errors.hpp"
#include "phinet/raster.hpp"

namespace phinet {

int lattice_side(int patch_count) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(patch_count))));
  if (side * side != patch_count)
    throw ConfigError("patch count " + std::to_string(patch_count) + " does not form a square lattice");
  return side;
}

FeatureGrid to_feature_grid(const Mat<float>& patch_tokens) {
  const int side = lattice_side(static_cast<int>(patch_tokens.cols()));
  FeatureGrid g;
  g.height = g.width = side;
  g.features = patch_tokens;
  for (Eigen::Index j = 0; j < g.features.cols(); ++j) {
    const float n = g.features.col(j).norm();
    if (n > 0.0f) g.features.col(j) /= n;
  }
  return g;
}

LabelGrid downsample_majority(const LabelGrid& mask, int patch_size) {
  if (patch_size <= 0 || mask.rows() % patch_size != 0 || mask.cols() % patch_size != 0)
    throw ConfigError("downsample_majority: mask size must be a multiple of the patch size");
  const int h = static_cast<int>(mask.rows()) / patch_size, w = static_cast<int>(mask.cols()) / patch_size;
  LabelGrid out(h, w);
  std::vector<int> counts;
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      counts.assign(1, 0);
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x) {
          const int l = mask(py * patch_size + y, px * patch_size + x);
          if (l < 0) throw ConfigError("downsample_majority: negative label");
          if (l >= static_cast<int>(counts.size())) counts.resize(l + 1, 0);
          ++counts[l];
        }
      out(py, px) = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
  return out;
}

std::vector<Eigen::MatrixXf> propagate_labels(const std::vector<FeatureGrid>& grids, const LabelGrid& ref_labels,
                                              int n_labels, const PropagationParams& pp) {
  pp.validate();
  if (grids.empty()) throw ProtocolError("propagate_labels: no frames");
  const int h = grids[0].height, w = grids[0].width, n = h * w;
  if (ref_labels.rows() != h || ref_labels.cols() != w)
    throw ProtocolError("propagate_labels: reference labels do not match the feature lattice");
  for (const auto& g : grids)
    if (g.height != h || g.width != w || g.dim() != grids[0].dim())
      throw ProtocolError("propagate_labels: feature grids differ in shape");

  std::vector<Eigen::MatrixXf> soft;
  soft.reserve(grids.size());
  Eigen::MatrixXf ref = Eigen::MatrixXf::Zero(n_labels, n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int l = ref_labels(y, x);
      if (l < 0 || l >= n_labels) throw ProtocolError("propagate_labels: reference label out of range");
      ref(l, y * w + x) = 1.0f;
    }
  soft.push_back(std::move(ref));

  struct Candidate {
    float affinity;
    int frame;
    int patch;
  };
  std::vector<Candidate> cand;
  for (std::size_t t = 1; t < grids.size(); ++t) {
    // Context: the `queue` most recent frames, plus the pinned reference when queue ≥ 2.
    std::vector<int> context;
    const int first = std::max(0, static_cast<int>(t) - pp.queue);
    if (pp.queue >= 2 && first > 0) context.push_back(0);
    for (int c = first; c < static_cast<int>(t); ++c) context.push_back(c);
    if (context.empty()) throw ProtocolError("propagate_labels: empty context");

    Eigen::MatrixXf out = Eigen::MatrixXf::Zero(n_labels, n);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int q = y * w + x;
        cand.clear();
        for (int c : context) {
          const auto& f = grids[c].features;
          for (int yy = std::max(0, y - pp.radius); yy <= std::min(h - 1, y + pp.radius); ++yy)
            for (int xx = std::max(0, x - pp.radius); xx <= std::min(w - 1, x + pp.radius); ++xx) {
              const int p = yy * w + xx;
              cand.push_back({grids[t].features.col(q).dot(f.col(p)), c, p});
            }
        }
        if (cand.empty()) throw ProtocolError("propagate_labels: empty context");
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(pp.top_k), cand.size());
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                          [](const Candidate& a, const Candidate& b) {
                            if (a.affinity != b.affinity) return a.affinity > b.affinity;
                            if (a.frame != b.frame) return a.frame > b.frame;
                            return a.patch < b.patch;
                          });
        const float top = cand[0].affinity;
        double z = 0.0;
        std::vector<double> weight(k);
        for (std::size_t i = 0; i < k; ++i) {
          weight[i] = std::exp((static_cast<double>(cand[i].affinity) - top) / pp.temperature);
          z += weight[i];
        }
        for (std::size_t i = 0; i < k; ++i)
          out.col(q) += static_cast<float>(weight[i] / z) * soft[cand[i].frame].col(cand[i].patch);
      }
    soft.push_back(std::move(out));
  }
  return soft;
}

LabelGrid hard_labels(const Eigen::MatrixXf& soft, int height, int width) {
  LabelGrid out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      Eigen::Index best = 0;
      soft.col(y * width + x).maxCoeff(&best);
      out(y, x) = static_cast<int>(best);
    }
  return out;
}

LabelGrid upsample_labels(const Eigen::MatrixXf& soft, int height, int width, int size) {
  LabelGrid out(size, size);
  const double sy = static_cast<double>(height) / size, sx = static_cast<double>(width) / size;
  Eigen::VectorXf v(soft.rows());
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(height - 1));
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(width - 1));
      const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
      const int y1 = std::min(y0 + 1, height - 1), x1 = std::min(x0 + 1, width - 1);
      const float ay = static_cast<float>(fy - y0), ax = static_cast<float>(fx - x0);
      v = (1 - ay) * ((1 - ax) * soft.col(y0 * width + x0) + ax * soft.col(y0 * width + x1)) +
          ay * ((1 - ax) * soft.col(y1 * width + x0) + ax * soft.col(y1 * width + x1));
      Eigen::Index best = 0;
      v.maxCoeff(&best);
      out(y, x) = static_cast<int>(best);
    }
  return out;
}

double jaccard(const LabelGrid& pred, const LabelGrid& gt, int label) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw ProtocolError("jaccard: shape mismatch");
  const auto a = (pred.array() == label), b = (gt.array() == label);
  const auto inter = (a && b).count(), uni = (a || b).count();
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

// Pixels of `label` with a 4-neighbour (inside the image) of another label.
std::vector<std::pair<int, int>> boundary(const LabelGrid& m, int label) {
  std::vector<std::pair<int, int>> out;
  const int h = static_cast<int>(m.rows()), w = static_cast<int>(m.cols());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (m(y, x) != label) continue;
      const bool edge = (y > 0 && m(y - 1, x) != label) || (y + 1 < h && m(y + 1, x) != label) ||
                        (x > 0 && m(y, x - 1) != label) || (x + 1 < w && m(y, x + 1) != label);
      if (edge) out.emplace_back(y, x);
    }
  return out;
}

double matched_fraction(const std::vector<std::pair<int, int>>& from, const std::vector<std::pair<int, int>>& to,
                        double tol) {
  std::size_t hit = 0;
  const double tol2 = tol * tol;
  for (const auto& [y, x] : from)
    for (const auto& [v, u] : to) {
      const double dy = y - v, dx = x - u;
      if (dy * dy + dx * dx <= tol2) {
        ++hit;
        break;
      }
    }
  return static_cast<double>(hit) / static_cast<double>(from.size());
}

}  // namespace

double boundary_f(const LabelGrid& pred, const LabelGrid& gt, int label, double tol) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw ProtocolError("boundary_f: shape mismatch");
  const auto bp = boundary(pred, label), bg = boundary(gt, label);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;
  const double p = matched_fraction(bp, bg, tol), r = matched_fraction(bg, bp, tol);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

CollapseMetrics collapse_metrics(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw ProtocolError("collapse_metrics: need at least 2 samples");
  CollapseMetrics m;
  const Eigen::RowVectorXd mean = x.colwise().mean();
  m.per_dim_std = ((x.rowwise() - mean).cwiseAbs2().colwise().mean()).cwiseSqrt().transpose();
  m.mean_std = m.per_dim_std.mean();
  const Eigen::VectorXd s = Eigen::BDCSVD<Eigen::MatrixXd>(x).singularValues();
  const double total = s.sum();
  if (total <= 0.0) {
    m.effective_rank = 0.0;
    return m;
  }
  double entropy = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double p = s(i) / total;
    // Round-off eigenvalues of a rank-deficient matrix are not spectrum.
    if (p > 1e-12) entropy -= p * std::log(p);
  }
  m.effective_rank = std::exp(entropy);
  return m;
}

CollapseMetrics collapse_metrics(const std::vector<FeatureGrid>& grids) {
  if (grids.empty()) throw ProtocolError("collapse_metrics: no feature grids");
  Eigen::Index rows = 0;
  for (const auto& g : grids) rows += g.features.cols();
  Eigen::MatrixXd x(rows, grids[0].dim());
  Eigen::Index at = 0;
  for (const auto& g : grids) {
    x.middleRows(at, g.features.cols()) = g.features.transpose().cast<double>();
    at += g.features.cols();
  }
  return collapse_metrics(x);
}

SequenceScore score_sequence(const std::string& id, const std::vector<LabelGrid>& pred,
                             const std::vector<LabelGrid>& gt) {
  if (pred.size() != gt.size() || gt.size() < 2) throw ProtocolError("score_sequence: need ≥ 2 aligned frames");
  std::set<int> objects;
  for (Eigen::Index i = 0; i < gt[0].size(); ++i)
    if (gt[0].data()[i] != 0) objects.insert(gt[0].data()[i]);
  SequenceScore s;
  s.id = id;
  if (objects.empty()) {
    s.j = s.f = 1.0;
    return s;
  }
  std::size_t count = 0;
  for (std::size_t t = 1; t < gt.size(); ++t)
    for (int l : objects) {
      s.j += jaccard(pred[t], gt[t], l);
      s.f += boundary_f(pred[t], gt[t], l);
      ++count;
    }
  s.j /= static_cast<double>(count);
  s.f /= static_cast<double>(count);
  return s;
}

EvalReport aggregate(std::vector<SequenceScore> sequences) {
  if (sequences.empty()) throw ProtocolError("aggregate: no sequences");
  EvalReport r;
  for (const auto& s : sequences) {
    r.j_mean += s.j;
    r.f_mean += s.f;
  }
  r.j_mean /= static_cast<double>(sequences.size());
  r.f_mean /= static_cast<double>(sequences.size());
  r.jf_mean = 0.5 * (r.j_mean + r.f_mean);
  r.sequences = std::move(sequences);
  return r;
}

SequenceScore evaluate_sequence(const LabeledVideo& video, const std::vector<FeatureGrid>& grids,
                                const ModelConfig& cfg, const PropagationParams& pp,
                                std::vector<LabelGrid>* predictions) {
  if (video.masks.size() != grids.size()) throw ProtocolError("evaluate_sequence: masks missing for '" + video.id + "'");
  int n_labels = 1;
  for (const auto& m : video.masks) n_labels = std::max(n_labels, m.maxCoeff() + 1);
  const LabelGrid ref = downsample_majority(video.masks[0], cfg.patch_size);
  const auto soft = propagate_labels(grids, ref, n_labels, pp);
  const int h = grids[0].height, w = grids[0].width;

  std::vector<LabelGrid> pred, gt;
  for (std::size_t t = 0; t < soft.size(); ++t) {
    if (pp.upsample) {
      pred.push_back(t == 0 ? video.masks[0] : upsample_labels(soft[t], h, w, cfg.image_size));
      gt.push_back(video.masks[t]);
    } else {
      pred.push_back(t == 0 ? ref : hard_labels(soft[t], h, w));
      gt.push_back(downsample_majority(video.masks[t], cfg.patch_size));
    }
  }
  auto score = score_sequence(video.id, pred, gt);
  if (predictions) *predictions = std::move(pred);
  return score;
}

template <typename Scalar>
EvalReport evaluate_dataset(const ParameterSet<Scalar>& params, const ModelConfig& cfg,
                            const std::vector<LabeledVideo>& videos, const PropagationParams& pp,
                            const EvalOptions& opt) {
  std::vector<SequenceScore> scores;
  for (const auto& v : videos) {
    std::vector<FeatureGrid> grids;
    grids.reserve(v.frames.size());
    for (const auto& f : v.frames) grids.push_back(extract_features(params, f, cfg));
    std::vector<LabelGrid> pred;
    scores.push_back(evaluate_sequence(v, grids, cfg, pp, &pred));
    if (!opt.mask_dir.empty()) {
      const auto dir = opt.mask_dir / v.id;
      std::filesystem::create_directories(dir);
      for (std::size_t t = 0; t < pred.size(); ++t)
        write_labels(pred[t], dir / frame_filename(static_cast<int>(t), "pgm"));
    }
  }
  return aggregate(std::move(scores));
}

template EvalReport evaluate_dataset<float>(const ParameterSet<float>&, const ModelConfig&,
                                            const std::vector<LabeledVideo>&, const PropagationParams&,
                                            const EvalOptions&);
template EvalReport evaluate_dataset<double>(const ParameterSet<double>&, const ModelConfig&,
                                             const std::vector<LabeledVideo>&, const PropagationParams&,
                                             const EvalOptions&);

void write_scores_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.precision(10);
  out << "sequence,J_m,F_m,J&F_m\n";
  for (const auto& s : report.sequences) out << s.id << "," << s.j << "," << s.f << "," << s.jf() << "\n";
  out << "mean," << report.j_mean << "," << report.f_mean << "," << report.jf_mean << "\n";
}

}  // namespace phinet
