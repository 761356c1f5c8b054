#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dgmkit/data.hpp"
#include "dgmkit/eval.hpp"
#include "dgmkit/model.hpp"
#include "dgmkit/train.hpp"

// Declarative experiment runner: model family x dataset x regime x
// seeds, with per-dataset hyperparameter defaults and per-seed artifact
// directories.

namespace dgmkit {

struct ExperimentConfig {
  std::string dataset = "synthetic";  // mnist | fashion-mnist | har | synthetic
  Family family = Family::kSsvae;
  Regime regime = Regime::kSemiSupervised;
  int n_aug = 40;
  double label_fraction = 0.2;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4};
  std::string out_dir = "runs/exp";
  bool parallel_seeds = true;

  // Training overrides; negative values mean per-dataset defaults.
  int epochs = -1;
  int batch_size = -1;
  double lr = -1.0;
  int hidden_units = -1;
  int hidden_layers = -1;
  int z_dim = -1;
  double alpha = -1.0;  // default 0.1 * N_total / N_labelled
  double tau = -1.0;
  std::size_t train_subset = 0;  // 0 = full training set
  int grid_rows = 8;

  // mnist / fashion-mnist: IDX files under data_dir.
  std::string data_dir;
  // har: delimited text files.
  std::string features_train, labels_train, features_test, labels_test;
  char delimiter = ' ';

  // synthetic blobs.
  int syn_classes = 4;
  int syn_dim = 8;
  int syn_per_class = 250;
  int syn_test_per_class = 250;
  double syn_separation = 4.0;
  double syn_sigma = 1.0;
};

// Flat key = value text with '#' comments and an `include <path>`
// directive (included files provide defaults, later keys win).
ExperimentConfig load_experiment_config(const std::string& path);
void write_experiment_config(const ExperimentConfig& cfg,
                             const std::string& path,
                             std::uint64_t single_seed);

// Everything derivable before picking a seed: preprocessed train/test
// splits and the resolved model/training configuration.
struct PreparedExperiment {
  LabeledDataset train;
  LabeledDataset test;
  PreprocessSpec preprocess;
  ModelSpec spec;       // prior/alpha filled in per seed by run_experiment
  TrainConfig train_cfg;
  std::vector<int> labelled_classes;
  std::uint64_t dataset_hash = 0;
};
PreparedExperiment prepare_experiment(const ExperimentConfig& cfg);

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::string dir;
  EvalReport report;
  EvalReport labelled_subset_report;  // sus-accident only
  bool has_subset_report = false;
};

struct ExperimentResult {
  std::vector<SeedOutcome> outcomes;
  bool all_ok = false;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct SummaryRow {
  std::string family;
  std::string dataset;
  std::string regime;
  int n_runs = 0;
  double mean_acc = 0.0;
  double sd_acc = -1.0;  // < 0 when a single run
  double mean_labelled_acc = -1.0;
  double mean_unlabelled_acc = -1.0;
};

std::vector<SummaryRow> summarize(const std::vector<std::string>& run_dirs);
std::string summary_table(const std::vector<SummaryRow>& rows);

}  // namespace dgmkit
