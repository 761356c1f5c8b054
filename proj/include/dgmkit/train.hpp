#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dgmkit/data.hpp"
#include "dgmkit/model.hpp"

// Stochastic-gradient maximization of the total objective with Adam and
// cosine learning-rate decay, paired labelled/unlabelled minibatching,
// and epoch-boundary checkpointing.

namespace dgmkit {

struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

OptimizerState init_optimizer(const ParamStore& params);

// Ascent on the objective, implemented as descent on its negation.
// Throws on non-finite gradients, naming the offending parameter.
void adam_step(ParamStore& params,
               const std::map<std::string, std::vector<double>>& objective_grads,
               OptimizerState& state, double lr);

// base_lr * 0.5 * (1 + cos(pi * step / total_steps)), measured in steps.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr);

struct TrainConfig {
  int epochs = 50;
  // Horizon of the cosine schedule in epochs; 0 means `epochs`. Set it
  // to the full-run length when deliberately stopping early, so a later
  // resume sees the same learning rates.
  int schedule_epochs = 0;
  std::size_t batch_size = 64;
  double base_lr = 1e-3;
  std::uint64_t seed = 0;
  int eval_every = 0;  // checkpoint interval in epochs; 0 = final only
  std::string checkpoint_path;
};

struct EpochRecord {
  int epoch = 0;
  double objective = 0.0;  // mean over steps of the per-step objective
  double ce = 0.0;         // mean labelled cross-entropy
  double lr = 0.0;
  double seconds = 0.0;
};

struct RunLog {
  std::vector<EpochRecord> records;
};

void write_runlog(const RunLog& log, const std::string& path);

struct TrainResult {
  ParamStore params;
  OptimizerState opt;
  RunLog log;
};

TrainResult train(const ModelSpec& spec, const RegimeDataset& data,
                  const TrainConfig& cfg);

// Resume from epoch `start_epoch` with existing parameters and optimizer
// state; with the same seed this reproduces uninterrupted training.
TrainResult train_from(const ModelSpec& spec, const RegimeDataset& data,
                       const TrainConfig& cfg, ParamStore params,
                       OptimizerState opt, int start_epoch);

// --- checkpoints ------------------------------------------------------------

struct Checkpoint {
  ModelSpec spec;
  std::uint64_t seed = 0;
  int epoch = 0;  // completed epochs
  ParamStore params;
  OptimizerState opt;
};

// Self-describing binary container; round-trips parameter values bitwise.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dgmkit
