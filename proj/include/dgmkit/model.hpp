#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dgmkit/class_prior.hpp"
#include "dgmkit/distributions.hpp"
#include "dgmkit/tensor.hpp"

// The two generative models and their training objectives.
//
// SSVAE:   p(x|y,z) p(y) p(z),          p(z)   = N(0, I)
// GM-DGM:  p(x|z)   p(z|y) p(y),        p(z|y) = N(mu(y), Sigma(y)) lookup
//
// Both share the recognition networks q(y|x) = Cat(pi(x)) and
// q(z|x,y) = N(mu(x,y), Sigma(x,y)).

namespace dgmkit {

enum class Family { kSsvae, kGmDgm };
enum class Activation { kRelu, kTanh };

struct ModelSpec {
  Family family = Family::kSsvae;
  int x_dim = 0;
  int z_dim = 0;
  int y_dim = 0;  // K = n_labelled + n_aug
  int hidden_units = 200;
  int hidden_layers = 2;
  LikelihoodSpec likelihood;
  double alpha = 0.0;
  ClassPrior prior;
  Activation activation = Activation::kRelu;
  double tau = 0.5;  // Gumbel-Softmax temperature
};

void validate_spec(const ModelSpec& spec);

struct HostTensor {
  Shape shape;
  std::vector<double> values;
};

// Live parameter values, keyed by name. std::map so iteration order is
// deterministic everywhere (checkpointing, Adam, gradient checks).
using ParamStore = std::map<std::string, HostTensor>;

// Gaussian(0, 0.001^2) weights, zero biases; GM-DGM additionally gets
// the per-class (mu, log-variance) lookup table.
ParamStore build_model(const ModelSpec& spec, std::uint64_t seed);

// Parameters staged onto a tape as differentiable leaves.
struct ModelGraph {
  std::map<std::string, Var> params;
};
ModelGraph stage_params(Tape& tape, const ParamStore& params);

// q(y|x): probability rows [B x K].
Var classify_rows(Tape& tape, const ModelGraph& g, const ModelSpec& spec,
                  Var x);
// Convenience forward pass on a throwaway tape; returns row-major [B x K].
std::vector<double> classify(const ParamStore& params, const ModelSpec& spec,
                             const std::vector<double>& x, std::size_t batch);

struct GaussianRows {
  Var mu;
  Var log_var;
};
// q(z|x,y): encoder over the concatenation [x ; y].
GaussianRows encode_rows(Tape& tape, const ModelGraph& g,
                         const ModelSpec& spec, Var x, Var y);
// Mean of p(x|.): decoder input is [z ; y] for SSVAE, z for GM-DGM.
Var decode_rows(Tape& tape, const ModelGraph& g, const ModelSpec& spec, Var z,
                Var y);

// Host-level forward passes over parameter snapshots.
std::vector<double> decode_mean(const ParamStore& params,
                                const ModelSpec& spec,
                                const std::vector<double>& z,
                                const std::vector<double>& y_onehot,
                                std::size_t batch);
std::vector<double> posterior_mean(const ParamStore& params,
                                   const ModelSpec& spec,
                                   const std::vector<double>& x,
                                   const std::vector<double>& y_onehot,
                                   std::size_t batch);

std::vector<double> one_hot(const std::vector<int>& labels, int k);

// ELBO_l per row. y_onehot must be exactly one-hot per row. One
// reparameterized z sample; the Gaussian KL term is analytic.
Var elbo_labelled_rows(Tape& tape, const ModelGraph& g, const ModelSpec& spec,
                       const std::vector<double>& x, std::size_t batch,
                       const std::vector<double>& y_onehot,
                       const std::vector<double>& z_noise);

// ELBO_u per row. One Gumbel-Softmax sample of y feeds the decoder and
// encoder paths; the categorical term E_q[log p(y) - log q(y|x)] is
// analytic. `gumbels` holds g = -log(-log u), row-major [B x K].
Var elbo_unlabelled_rows(Tape& tape, const ModelGraph& g,
                         const ModelSpec& spec, const std::vector<double>& x,
                         std::size_t batch,
                         const std::vector<double>& z_noise,
                         const std::vector<double>& gumbels);

struct LabelledBatch {
  std::size_t n = 0;
  std::vector<double> x;    // n x x_dim
  std::vector<int> labels;  // n
};
struct UnlabelledBatch {
  std::size_t n = 0;
  std::vector<double> x;  // n x x_dim
};

struct ObjectiveVars {
  Var value;          // quantity to MAXIMIZE
  Var mean_ce;        // mean -log q(y_l|x_l); zero constant if no labelled rows
  bool has_labelled = false;
};

// Eq-style total: mean_l[ELBO_l + alpha log q(y_l|x_l)] + mean_u[ELBO_u].
// Either batch may be empty, but not both.
ObjectiveVars total_objective(Tape& tape, const ModelGraph& g,
                              const ModelSpec& spec,
                              const LabelledBatch& labelled,
                              const UnlabelledBatch& unlabelled,
                              const std::vector<double>& z_noise_l,
                              const std::vector<double>& z_noise_u,
                              const std::vector<double>& gumbels_u);

}  // namespace dgmkit
