#pragma once

// Label propagation over learned patch features, J/F metrics and collapse
// diagnostics.

#include <filesystem>
#include <string>
#include <vector>

#include "phinet/autodiff.hpp"
#include "phinet/backbone.hpp"
#include "phinet/config.hpp"
#include "phinet/frame.hpp"
#include "phinet/params.hpp"
#include "phinet/videodata.hpp"

namespace phinet {

// Patch features on the h×w lattice: column y·w + x holds the unit-norm
// d-vector of patch (y, x).
struct FeatureGrid {
  int height = 0;
  int width = 0;
  Eigen::MatrixXf features;

  int dim() const { return static_cast<int>(features.rows()); }
};

// Side of the square patch lattice; throws ConfigError if count is not a square.
int lattice_side(int patch_count);

FeatureGrid to_feature_grid(const Mat<float>& patch_tokens);

template <typename Scalar>
FeatureGrid extract_features(const ParameterSet<Scalar>& params, const Frame& frame, const ModelConfig& cfg) {
  const TokenMatrix<Scalar> z = encode(params, frame, cfg);
  return to_feature_grid(z.rightCols(z.cols() - 1).template cast<float>());
}

// Most frequent label inside each patch; ties go to the smaller label.
LabelGrid downsample_majority(const LabelGrid& mask, int patch_size);

// Soft label maps, one n_labels×(h·w) column-stochastic matrix per frame.
// Frame 0 is the one-hot reference.
std::vector<Eigen::MatrixXf> propagate_labels(const std::vector<FeatureGrid>& grids, const LabelGrid& ref_labels,
                                              int n_labels, const PropagationParams& pp);

LabelGrid hard_labels(const Eigen::MatrixXf& soft, int height, int width);

// Bilinear upsampling of each label channel to size×size, then argmax.
LabelGrid upsample_labels(const Eigen::MatrixXf& soft, int height, int width, int size);

double jaccard(const LabelGrid& pred, const LabelGrid& gt, int label);
double boundary_f(const LabelGrid& pred, const LabelGrid& gt, int label, double tol = 1.0);

struct CollapseMetrics {
  Eigen::VectorXd per_dim_std;
  double mean_std = 0.0;
  double effective_rank = 0.0;
};

// Rows are samples, columns feature dimensions.
CollapseMetrics collapse_metrics(const Eigen::MatrixXd& samples);
CollapseMetrics collapse_metrics(const std::vector<FeatureGrid>& grids);

struct SequenceScore {
  std::string id;
  double j = 0.0;
  double f = 0.0;
  double jf() const { return 0.5 * (j + f); }
};

struct EvalReport {
  std::vector<SequenceScore> sequences;
  double j_mean = 0.0;
  double f_mean = 0.0;
  double jf_mean = 0.0;
};

// Scores one sequence from its predicted and ground-truth label grids. The
// reference frame is excluded; objects are the non-zero labels present in
// the reference ground truth.
SequenceScore score_sequence(const std::string& id, const std::vector<LabelGrid>& pred,
                             const std::vector<LabelGrid>& gt);

EvalReport aggregate(std::vector<SequenceScore> sequences);

struct EvalOptions {
  std::filesystem::path mask_dir;  // empty: predicted masks are not written
};

template <typename Scalar>
EvalReport evaluate_dataset(const ParameterSet<Scalar>& params, const ModelConfig& cfg,
                            const std::vector<LabeledVideo>& videos, const PropagationParams& pp,
                            const EvalOptions& opt = {});

// Propagates and scores one video given its feature grids.
SequenceScore evaluate_sequence(const LabeledVideo& video, const std::vector<FeatureGrid>& grids,
                                const ModelConfig& cfg, const PropagationParams& pp,
                                std::vector<LabelGrid>* predictions = nullptr);

void write_scores_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace phinet
