#include "dgmkit/distributions.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dgmkit {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)

double floored(double p) { return p < kLogFloor ? kLogFloor : p; }

void check_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch " +
                                std::to_string(a) + " vs " + std::to_string(b));
  }
}

}  // namespace

double gaussian_logpdf(std::span<const double> x, const DiagGaussian& dist) {
  check_dim(x.size(), dist.mean.size(), "gaussian_logpdf");
  check_dim(x.size(), dist.log_var.size(), "gaussian_logpdf");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lv = dist.log_var[i];
    const double d = x[i] - dist.mean[i];
    acc += -kHalfLog2Pi - 0.5 * lv - 0.5 * d * d * std::exp(-lv);
  }
  return acc;
}

double kl_diag_gaussians(const DiagGaussian& q, const DiagGaussian& p) {
  check_dim(q.mean.size(), p.mean.size(), "kl_diag_gaussians");
  double acc = 0.0;
  for (std::size_t i = 0; i < q.mean.size(); ++i) {
    const double dlv = q.log_var[i] - p.log_var[i];
    const double d = q.mean[i] - p.mean[i];
    acc += 0.5 * (std::exp(dlv) + d * d * std::exp(-p.log_var[i]) - 1.0 - dlv);
  }
  return acc;
}

std::vector<double> reparam_sample(const DiagGaussian& dist,
                                   std::span<const double> noise) {
  check_dim(noise.size(), dist.mean.size(), "reparam_sample");
  std::vector<double> out(noise.size());
  for (std::size_t i = 0; i < noise.size(); ++i) {
    out[i] = dist.mean[i] + std::exp(0.5 * dist.log_var[i]) * noise[i];
  }
  return out;
}

std::vector<double> gumbel_softmax_sample(std::span<const double> probs,
                                          double temperature,
                                          std::span<const double> uniforms) {
  if (temperature <= 0.0) {
    throw std::invalid_argument("gumbel_softmax_sample: temperature must be > 0");
  }
  check_dim(probs.size(), uniforms.size(), "gumbel_softmax_sample");
  std::vector<double> logits(probs.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double g = -std::log(-std::log(uniforms[i]));
    logits[i] = (std::log(floored(probs[i])) + g) / temperature;
    mx = std::max(mx, logits[i]);
  }
  double z = 0.0;
  for (double& l : logits) z += (l = std::exp(l - mx));
  for (double& l : logits) l /= z;
  return logits;
}

double bernoulli_loglik(std::span<const double> x,
                        std::span<const double> probs) {
  check_dim(x.size(), probs.size(), "bernoulli_loglik");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += x[i] * std::log(floored(probs[i])) +
           (1.0 - x[i]) * std::log(floored(1.0 - probs[i]));
  }
  return acc;
}

double categorical_entropy(std::span<const double> probs) {
  double acc = 0.0;
  for (double p : probs) acc -= p * std::log(floored(p));
  return acc;
}

double kl_log_ratio_sample(const DiagGaussian& q, const DiagGaussian& p,
                           std::span<const double> z) {
  return gaussian_logpdf(z, q) - gaussian_logpdf(z, p);
}

// ---------------------------------------------------------------------------
// Tape versions

Var gaussian_kl_rows(Var mu_q, Var lv_q) {
  // 0.5 * sum_i (exp(lv) + mu^2 - 1 - lv)
  Var inner = sub(add(exp(lv_q), square(mu_q)), add_scalar(lv_q, 1.0));
  return scale(row_sum(inner), 0.5);
}

Var gaussian_kl_rows(Var mu_q, Var lv_q, Var mu_p, Var lv_p) {
  Var dlv = sub(lv_q, lv_p);
  Var quad = mul(square(sub(mu_q, mu_p)), exp(neg(lv_p)));
  Var inner = sub(add(exp(dlv), quad), add_scalar(dlv, 1.0));
  return scale(row_sum(inner), 0.5);
}

Var reparam_rows(Var mu, Var lv, Var noise) {
  return add(mu, mul(exp(scale(lv, 0.5)), noise));
}

Var gumbel_softmax_rows(Var probs, double temperature, Var gumbels) {
  if (temperature <= 0.0) {
    throw std::invalid_argument("gumbel_softmax_rows: temperature must be > 0");
  }
  return softmax_rows(scale(add(log(probs), gumbels), 1.0 / temperature));
}

Var bernoulli_loglik_rows(Var x, Var probs) {
  Var pos = mul(x, log(probs));
  Var negterm = mul(add_scalar(neg(x), 1.0), log(add_scalar(neg(probs), 1.0)));
  return row_sum(add(pos, negterm));
}

Var gaussian_fixed_sigma_loglik_rows(Var x, Var mean_v, double sigma) {
  if (sigma <= 0.0) {
    throw std::invalid_argument(
        "gaussian_fixed_sigma_loglik_rows: sigma must be > 0");
  }
  Tape& t = *x.tape;
  const double d = static_cast<double>(t.shape(x)[1]);
  const double lognorm = -d * (kHalfLog2Pi + std::log(sigma));
  Var quad = scale(row_sum(square(sub(x, mean_v))), -0.5 / (sigma * sigma));
  return add_scalar(quad, lognorm);
}

Var categorical_prior_term_rows(Var probs, const std::vector<double>& prior) {
  Tape& t = *probs.tape;
  const Shape& s = t.shape(probs);
  if (s.size() != 2 || s[1] != prior.size()) {
    throw std::invalid_argument("categorical_prior_term_rows: probs " +
                                shape_str(s) + " vs prior size " +
                                std::to_string(prior.size()));
  }
  std::vector<double> log_prior(s[0] * s[1]);
  for (std::size_t r = 0; r < s[0]; ++r) {
    for (std::size_t k = 0; k < s[1]; ++k) {
      log_prior[r * s[1] + k] = std::log(floored(prior[k]));
    }
  }
  Var lp = t.constant(s, std::move(log_prior));
  return row_sum(mul(probs, sub(lp, log(probs))));
}

}  // namespace dgmkit
