#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgmkit/data.hpp"
#include "dgmkit/model.hpp"

// Test-time metrics and diagnostic artifacts: cluster accuracy with the
// majority-vote cluster-to-class assignment, confusion matrices, entropy
// distributions, generation grids, most-confident exemplars and latent
// exports.

namespace dgmkit {

// mapping[k] = ground-truth class the k-th learnt cluster is attributed
// to (many-to-one allowed).
struct Assignment {
  std::vector<int> mapping;
};

struct ClusterAccuracyResult {
  double acc = 0.0;
  Assignment assignment;
  std::vector<int> empty_clusters;  // mapped to class 0, flagged
};

// Majority-vote assignment; attains the maximum over all T x K
// rectangular assignment matrices. Ties toward the lower class id.
ClusterAccuracyResult cluster_accuracy(const std::vector<int>& predictions,
                                       const std::vector<int>& truths, int k,
                                       int t);

struct ClusterPrediction {
  std::vector<int> clusters;   // argmax q(y|x), ties toward lower index
  std::vector<double> probs;   // row-major N x K
};
ClusterPrediction predict_clusters(const ParamStore& params,
                                   const ModelSpec& spec,
                                   const std::vector<double>& features,
                                   std::size_t n);

// counts[t][k] = #{i : truth_i = t, prediction_i = k}
std::vector<std::vector<long>> confusion_matrix(
    const std::vector<int>& predictions, const std::vector<int>& truths, int k,
    int t);
std::vector<std::vector<long>> assigned_confusion(
    const std::vector<std::vector<long>>& confusion,
    const Assignment& assignment);

struct EntropySubset {
  std::string name;
  std::vector<double> entropies;
  double mean = 0.0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};
// subset_of[i] selects which subset example i belongs to; -1 skips it.
std::vector<EntropySubset> entropy_report(
    const std::vector<double>& probs, std::size_t n, int k,
    const std::vector<int>& subset_of,
    const std::vector<std::string>& subset_names);

// Cell (r, c) is the decoder mean for y = c; row r shares one latent
// draw. For SSVAE z* ~ N(0,I); for GM-DGM the row's standard-normal
// draw is pushed through the y-th table entry.
struct GenerationGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t cell_dim = 0;
  std::vector<double> values;  // rows * cols * cell_dim
};
GenerationGrid generation_grid(const ParamStore& params, const ModelSpec& spec,
                               std::size_t n_z_samples, std::uint64_t seed);

// Expands each cell back to the full pixel layout (dropped dims render
// as 0) and tiles the cells into one PGM image.
void write_grid_pgm(const std::string& path, const GenerationGrid& grid,
                    const PreprocessSpec* preprocess, std::size_t img_w,
                    std::size_t img_h);
void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<double>& gray01);

// Per cluster, indices of the n most confidently assigned examples,
// confidence non-increasing. Clusters with fewer members return fewer.
std::vector<std::vector<std::size_t>> most_confident(
    const std::vector<double>& probs, std::size_t n, int k,
    std::size_t per_cluster);

enum class LatentYPolicy { kArgmaxPosterior, kGivenLabels };
// Rows are the posterior means mu(x, y) under the chosen y policy.
std::vector<double> export_latents(const ParamStore& params,
                                   const ModelSpec& spec,
                                   const std::vector<double>& features,
                                   std::size_t n, LatentYPolicy policy,
                                   const std::vector<int>& labels = {});

struct EvalReport {
  double acc = 0.0;             // cluster accuracy over the full test set
  double plain_accuracy = -1.0; // identity assignment; only when K == T
  double labelled_class_acc = -1.0;
  double unlabelled_class_acc = -1.0;
  std::size_t n_test = 0;
  Assignment assignment;
  std::vector<std::vector<long>> confusion;  // T x K
  std::vector<double> entropies;             // per test example
  std::vector<int> labelled_classes;
  std::uint64_t seed = 0;
};

// Full test-set evaluation. Bernoulli inputs are the raw grayscale
// probabilities (no binarization), so evaluation is deterministic.
EvalReport evaluate_model(const ParamStore& params, const ModelSpec& spec,
                          const LabeledDataset& test,
                          const std::vector<int>& labelled_classes,
                          std::uint64_t seed = 0);

void write_eval_report(const EvalReport& report, const std::string& path);
EvalReport read_eval_report(const std::string& path);
void write_confusion_csv(const std::vector<std::vector<long>>& confusion,
                         const std::string& path);

}  // namespace dgmkit
