#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dgmkit/class_prior.hpp"

// Dataset ingestion, preprocessing and label-regime construction,
// including the semi-unsupervised masking protocol.

namespace dgmkit {

struct LabeledDataset {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // row-major n x dim
  std::vector<int> labels;       // ground-truth ids 0..n_gt-1
  int n_gt = 0;
  std::string name;
  bool preprocessed = false;
};

// IDX (MNIST-style) binary files, big-endian, magic 0x803 / 0x801.
LabeledDataset load_idx_images(const std::string& images_path,
                               const std::string& labels_path);
void write_idx_images(const std::string& images_path,
                      const std::string& labels_path,
                      const LabeledDataset& ds, std::size_t rows,
                      std::size_t cols);

// Delimited numeric text, one example per row; label file one id per
// row. Labels are shifted so the smallest becomes 0.
LabeledDataset load_tabular(const std::string& features_path,
                            const std::string& labels_path,
                            char delimiter = ' ');

struct PreprocessSpec {
  double std_threshold = 0.1;
  bool binarize_dynamic = false;
  bool standardize = false;
  std::size_t source_dim = 0;
  std::vector<std::size_t> kept_dims;  // fit once on train, reused for test
  std::vector<double> means;           // per kept dim, when standardizing
  std::vector<double> stds;
};

PreprocessSpec fit_preprocess(const LabeledDataset& train,
                              double std_threshold = 0.1,
                              bool binarize_dynamic = false,
                              bool standardize = false);
// Applying to an already-applied dataset is a no-op.
LabeledDataset apply_preprocess(const LabeledDataset& ds,
                                const PreprocessSpec& spec);

// Fresh Bernoulli draw per entry, entry value as the probability.
std::vector<double> binarize_batch(const std::vector<double>& batch,
                                   std::mt19937_64& rng);

enum class Regime {
  kUnsupervised,
  kSemiSupervised,
  kSusAccident,
  kSemiUnsupervised,
};

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& name);

struct RegimeDataset {
  std::size_t dim = 0;
  int n_gt = 0;
  Regime regime = Regime::kSemiSupervised;
  double label_fraction = 0.2;
  std::uint64_t seed = 0;
  std::vector<int> labelled_classes;
  std::string source_name;

  std::vector<double> labelled_x;
  std::vector<int> labelled_y;
  std::vector<std::size_t> labelled_idx;  // indices into the source dataset
  std::vector<double> unlabelled_x;
  std::vector<std::size_t> unlabelled_idx;

  std::size_t n_labelled() const { return labelled_idx.size(); }
  std::size_t n_unlabelled() const { return unlabelled_idx.size(); }
};

// Stratified masking: per labelled class, `label_fraction` of its
// examples keep their labels; everything else in scope becomes
// unlabelled. Scope is all examples except for kSemiSupervised, where
// examples of classes outside `labelled_classes` are excluded entirely.
// An empty `labelled_classes` means the regime default: all classes for
// kSemiSupervised, the first ceil(n_gt/2) for the SUS regimes, none for
// kUnsupervised.
RegimeDataset build_regime(const LabeledDataset& ds, Regime regime,
                           double label_fraction = 0.2, std::uint64_t seed = 0,
                           std::vector<int> labelled_classes = {});

void write_regime_manifest(const RegimeDataset& rd, const std::string& path);
// Reconstructs the exact split from a manifest and the source dataset.
RegimeDataset regime_from_manifest(const LabeledDataset& ds,
                                   const std::string& path);

// Well-separated Gaussian blobs; classes 0..n_classes-1 in a row.
LabeledDataset make_synthetic_blobs(int n_classes, int dim, int per_class,
                                    std::uint64_t seed,
                                    double separation = 4.0);

}  // namespace dgmkit
