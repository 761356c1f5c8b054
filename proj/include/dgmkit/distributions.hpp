#pragma once

#include <span>
#include <vector>

#include "dgmkit/tensor.hpp"

// Densities, KL divergences and reparameterized samplers for the
// distributions the models need: diagonal Gaussians, Bernoulli vectors,
// fixed-variance Gaussian likelihoods and the Gumbel-Softmax relaxation
// of the categorical.
//
// Each operation exists in two forms: a plain-double version for
// evaluation and test oracles, and a tape version used inside the ELBO
// graphs so gradients flow through it.

namespace dgmkit {

struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_var;
};

struct LikelihoodSpec {
  enum class Kind { kBernoulli, kGaussianFixedSigma };
  Kind kind = Kind::kBernoulli;
  double sigma = 0.01;  // used for kGaussianFixedSigma only
};

// --- plain versions ---------------------------------------------------------

double gaussian_logpdf(std::span<const double> x, const DiagGaussian& dist);
double kl_diag_gaussians(const DiagGaussian& q, const DiagGaussian& p);
std::vector<double> reparam_sample(const DiagGaussian& dist,
                                   std::span<const double> noise);
// softmax((log pi + g) / tau) with g_k = -log(-log u_k).
std::vector<double> gumbel_softmax_sample(std::span<const double> probs,
                                          double temperature,
                                          std::span<const double> uniforms);
double bernoulli_loglik(std::span<const double> x,
                        std::span<const double> probs);
double categorical_entropy(std::span<const double> probs);

// Single-sample log-ratio log q(z) - log p(z); equals the analytic KL in
// expectation. Kept as a test oracle for the graph KL.
double kl_log_ratio_sample(const DiagGaussian& q, const DiagGaussian& p,
                           std::span<const double> z);

// --- tape versions (batched, one row per datapoint) -------------------------

// KL(q || N(0, I)) per row; mu/lv are [B x d].
Var gaussian_kl_rows(Var mu_q, Var lv_q);
// KL(q || p) per row for two diagonal Gaussians.
Var gaussian_kl_rows(Var mu_q, Var lv_q, Var mu_p, Var lv_p);
// mu + exp(lv/2) * noise, noise a constant [B x d] node.
Var reparam_rows(Var mu, Var lv, Var noise);
// Per-row Gumbel-Softmax sample; probs [B x K], gumbels a constant node
// of already-transformed noise g = -log(-log u).
Var gumbel_softmax_rows(Var probs, double temperature, Var gumbels);
// Per-row sum of x log p + (1-x) log(1-p); x a constant binary node.
Var bernoulli_loglik_rows(Var x, Var probs);
// Per-row log N(x | mean, sigma^2 I).
Var gaussian_fixed_sigma_loglik_rows(Var x, Var mean, double sigma);
// Per-row E_q[log p(y) - log q(y|x)] computed analytically over K.
Var categorical_prior_term_rows(Var probs, const std::vector<double>& prior);

}  // namespace dgmkit
