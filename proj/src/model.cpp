#include "dgmkit/model.hpp"

#include <cmath>
#include <stdexcept>

#include "dgmkit/rng.hpp"

namespace dgmkit {

namespace {

constexpr double kInitStd = 0.001;
// Mixture-component means start spread out so components break symmetry
// instead of collapsing onto one another.
constexpr double kPriorMuInitStd = 1.0;

Var activation(const ModelSpec& spec, Var v) {
  return spec.activation == Activation::kRelu ? relu(v) : dgmkit::tanh(v);
}

Var param(const ModelGraph& g, const std::string& name) {
  auto it = g.params.find(name);
  if (it == g.params.end()) {
    throw std::invalid_argument("missing parameter: " + name);
  }
  return it->second;
}

// Hidden stack "prefix.h0" ... then caller applies its own output head.
Var hidden_stack(const ModelSpec& spec, const ModelGraph& g,
                 const std::string& prefix, Var in) {
  Var h = in;
  for (int l = 0; l < spec.hidden_layers; ++l) {
    const std::string base = prefix + ".h" + std::to_string(l) + ".";
    h = activation(spec,
                   add_bias(matmul(h, param(g, base + "w")), param(g, base + "b")));
  }
  return h;
}

Var linear_head(const ModelGraph& g, const std::string& base, Var in) {
  return add_bias(matmul(in, param(g, base + ".w")), param(g, base + ".b"));
}

void add_mlp(ParamStore& store, std::mt19937_64& rng, const std::string& prefix,
             int in_dim, int hidden, int layers) {
  int w = in_dim;
  for (int l = 0; l < layers; ++l) {
    const std::string base = prefix + ".h" + std::to_string(l) + ".";
    store[base + "w"] = HostTensor{
        {static_cast<std::size_t>(w), static_cast<std::size_t>(hidden)},
        normal_vector(rng, static_cast<std::size_t>(w) * hidden, kInitStd)};
    store[base + "b"] = HostTensor{{static_cast<std::size_t>(hidden)},
                                   std::vector<double>(hidden, 0.0)};
    w = hidden;
  }
}

void add_head(ParamStore& store, std::mt19937_64& rng, const std::string& base,
              int in_dim, int out_dim) {
  store[base + ".w"] = HostTensor{
      {static_cast<std::size_t>(in_dim), static_cast<std::size_t>(out_dim)},
      normal_vector(rng, static_cast<std::size_t>(in_dim) * out_dim, kInitStd)};
  store[base + ".b"] =
      HostTensor{{static_cast<std::size_t>(out_dim)},
                 std::vector<double>(out_dim, 0.0)};
}

void check_x(const ModelSpec& spec, const std::vector<double>& x,
             std::size_t batch) {
  if (x.size() != batch * static_cast<std::size_t>(spec.x_dim)) {
    throw std::invalid_argument(
        "batch features: expected " +
        std::to_string(batch * static_cast<std::size_t>(spec.x_dim)) +
        " values, got " + std::to_string(x.size()));
  }
}

void check_one_hot(const std::vector<double>& y, std::size_t batch, int k) {
  if (y.size() != batch * static_cast<std::size_t>(k)) {
    throw std::invalid_argument("y_onehot: wrong size");
  }
  for (std::size_t r = 0; r < batch; ++r) {
    int ones = 0;
    for (int c = 0; c < k; ++c) {
      const double v = y[r * k + c];
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw std::invalid_argument("y_onehot: entry not in {0,1} at row " +
                                    std::to_string(r));
      }
    }
    if (ones != 1) {
      throw std::invalid_argument("y_onehot: row " + std::to_string(r) +
                                  " is not one-hot");
    }
  }
}

Var likelihood_rows(const ModelSpec& spec, Var x, Var dec_out) {
  if (spec.likelihood.kind == LikelihoodSpec::Kind::kBernoulli) {
    return bernoulli_loglik_rows(x, sigmoid(dec_out));
  }
  return gaussian_fixed_sigma_loglik_rows(x, dec_out, spec.likelihood.sigma);
}

// Per-row log p(y) for observed labels, as a constant node.
Var log_prior_rows(Tape& tape, const ModelSpec& spec,
                   const std::vector<double>& y_onehot, std::size_t batch) {
  const int k = spec.y_dim;
  std::vector<double> out(batch, 0.0);
  for (std::size_t r = 0; r < batch; ++r) {
    for (int c = 0; c < k; ++c) {
      if (y_onehot[r * k + c] == 1.0) {
        out[r] = std::log(spec.prior.probs[c]);
      }
    }
  }
  return tape.constant({batch}, std::move(out));
}

// KL(q(z|x,y) || p_z) per row; p_z depends on family and on the (possibly
// relaxed) y rows.
Var prior_kl_rows(const ModelGraph& g, const ModelSpec& spec,
                  const GaussianRows& q, Var y) {
  if (spec.family == Family::kSsvae) {
    return gaussian_kl_rows(q.mu, q.log_var);
  }
  Var mu_p = matmul(y, param(g, "prior.mu"));
  Var lv_p = matmul(y, param(g, "prior.lv"));
  return gaussian_kl_rows(q.mu, q.log_var, mu_p, lv_p);
}

}  // namespace

void validate_spec(const ModelSpec& spec) {
  if (spec.x_dim < 1 || spec.z_dim < 1 || spec.y_dim < 1) {
    throw std::invalid_argument("ModelSpec: dimensions must be positive");
  }
  if (spec.hidden_units < 1 || spec.hidden_layers < 1) {
    throw std::invalid_argument("ModelSpec: hidden configuration invalid");
  }
  if (spec.alpha < 0.0) {
    throw std::invalid_argument("ModelSpec: alpha must be nonnegative");
  }
  if (spec.tau <= 0.0) {
    throw std::invalid_argument("ModelSpec: tau must be positive");
  }
  if (static_cast<int>(spec.prior.probs.size()) != spec.y_dim) {
    throw std::invalid_argument("ModelSpec: prior size " +
                                std::to_string(spec.prior.probs.size()) +
                                " != y_dim " + std::to_string(spec.y_dim));
  }
  if (spec.likelihood.kind == LikelihoodSpec::Kind::kGaussianFixedSigma &&
      spec.likelihood.sigma <= 0.0) {
    throw std::invalid_argument("ModelSpec: likelihood sigma must be positive");
  }
}

ParamStore build_model(const ModelSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  auto rng = stream_rng(seed, RngStream::kInit);
  ParamStore store;
  // Classifier pi(x).
  add_mlp(store, rng, "cls", spec.x_dim, spec.hidden_units, spec.hidden_layers);
  add_head(store, rng, "cls.out", spec.hidden_units, spec.y_dim);
  // Encoder over [x ; y]; mean and log-variance heads share the hidden
  // stack, each with its own output layer.
  add_mlp(store, rng, "enc", spec.x_dim + spec.y_dim, spec.hidden_units,
          spec.hidden_layers);
  add_head(store, rng, "enc.mu", spec.hidden_units, spec.z_dim);
  add_head(store, rng, "enc.lv", spec.hidden_units, spec.z_dim);
  // Decoder.
  const int dec_in =
      spec.family == Family::kSsvae ? spec.z_dim + spec.y_dim : spec.z_dim;
  add_mlp(store, rng, "dec", dec_in, spec.hidden_units, spec.hidden_layers);
  add_head(store, rng, "dec.out", spec.hidden_units, spec.x_dim);
  if (spec.family == Family::kGmDgm) {
    const std::size_t k = spec.y_dim, z = spec.z_dim;
    store["prior.mu"] =
        HostTensor{{k, z}, normal_vector(rng, k * z, kPriorMuInitStd)};
    store["prior.lv"] = HostTensor{{k, z}, std::vector<double>(k * z, 0.0)};
  }
  return store;
}

ModelGraph stage_params(Tape& tape, const ParamStore& params) {
  ModelGraph g;
  for (const auto& [name, tensor] : params) {
    g.params[name] = tape.leaf(tensor.shape, tensor.values);
  }
  return g;
}

Var classify_rows(Tape& tape, const ModelGraph& g, const ModelSpec& spec,
                  Var x) {
  if (tape.shape(x).size() != 2 ||
      tape.shape(x)[1] != static_cast<std::size_t>(spec.x_dim)) {
    throw std::invalid_argument("classify_rows: input shape " +
                                shape_str(tape.shape(x)) + " != [B x " +
                                std::to_string(spec.x_dim) + "]");
  }
  Var h = hidden_stack(spec, g, "cls", x);
  return softmax_rows(linear_head(g, "cls.out", h));
}

std::vector<double> classify(const ParamStore& params, const ModelSpec& spec,
                             const std::vector<double>& x, std::size_t batch) {
  check_x(spec, x, batch);
  Tape tape;
  ModelGraph g = stage_params(tape, params);
  Var xc = tape.constant({batch, static_cast<std::size_t>(spec.x_dim)}, x);
  return tape.val(classify_rows(tape, g, spec, xc));
}

GaussianRows encode_rows(Tape&, const ModelGraph& g,
                         const ModelSpec& spec, Var x, Var y) {
  Var h = hidden_stack(spec, g, "enc", concat_cols(x, y));
  return {linear_head(g, "enc.mu", h), linear_head(g, "enc.lv", h)};
}

Var decode_rows(Tape&, const ModelGraph& g, const ModelSpec& spec, Var z,
                Var y) {
  Var in = spec.family == Family::kSsvae ? concat_cols(z, y) : z;
  Var h = hidden_stack(spec, g, "dec", in);
  return linear_head(g, "dec.out", h);
}

std::vector<double> decode_mean(const ParamStore& params,
                                const ModelSpec& spec,
                                const std::vector<double>& z,
                                const std::vector<double>& y_onehot,
                                std::size_t batch) {
  Tape tape;
  ModelGraph g = stage_params(tape, params);
  Var zc = tape.constant({batch, static_cast<std::size_t>(spec.z_dim)}, z);
  Var yc = tape.constant({batch, static_cast<std::size_t>(spec.y_dim)},
                         y_onehot);
  Var out = decode_rows(tape, g, spec, zc, yc);
  if (spec.likelihood.kind == LikelihoodSpec::Kind::kBernoulli) {
    out = sigmoid(out);
  }
  return tape.val(out);
}

std::vector<double> posterior_mean(const ParamStore& params,
                                   const ModelSpec& spec,
                                   const std::vector<double>& x,
                                   const std::vector<double>& y_onehot,
                                   std::size_t batch) {
  check_x(spec, x, batch);
  Tape tape;
  ModelGraph g = stage_params(tape, params);
  Var xc = tape.constant({batch, static_cast<std::size_t>(spec.x_dim)}, x);
  Var yc = tape.constant({batch, static_cast<std::size_t>(spec.y_dim)},
                         y_onehot);
  return tape.val(encode_rows(tape, g, spec, xc, yc).mu);
}

std::vector<double> one_hot(const std::vector<int>& labels, int k) {
  std::vector<double> out(labels.size() * static_cast<std::size_t>(k), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw std::invalid_argument("one_hot: label " +
                                  std::to_string(labels[i]) +
                                  " out of range for K=" + std::to_string(k));
    }
    out[i * k + labels[i]] = 1.0;
  }
  return out;
}

Var elbo_labelled_rows(Tape& tape, const ModelGraph& g, const ModelSpec& spec,
                       const std::vector<double>& x, std::size_t batch,
                       const std::vector<double>& y_onehot,
                       const std::vector<double>& z_noise) {
  check_x(spec, x, batch);
  check_one_hot(y_onehot, batch, spec.y_dim);
  Var xc = tape.constant({batch, static_cast<std::size_t>(spec.x_dim)}, x);
  Var yc = tape.constant({batch, static_cast<std::size_t>(spec.y_dim)},
                         y_onehot);
  Var noise = tape.constant({batch, static_cast<std::size_t>(spec.z_dim)},
                            z_noise);
  GaussianRows q = encode_rows(tape, g, spec, xc, yc);
  Var z = reparam_rows(q.mu, q.log_var, noise);
  Var recon = likelihood_rows(spec, xc, decode_rows(tape, g, spec, z, yc));
  Var kl = prior_kl_rows(g, spec, q, yc);
  return sub(add(recon, log_prior_rows(tape, spec, y_onehot, batch)), kl);
}

Var elbo_unlabelled_rows(Tape& tape, const ModelGraph& g,
                         const ModelSpec& spec, const std::vector<double>& x,
                         std::size_t batch,
                         const std::vector<double>& z_noise,
                         const std::vector<double>& gumbels) {
  check_x(spec, x, batch);
  Var xc = tape.constant({batch, static_cast<std::size_t>(spec.x_dim)}, x);
  Var gc = tape.constant({batch, static_cast<std::size_t>(spec.y_dim)},
                         gumbels);
  Var noise = tape.constant({batch, static_cast<std::size_t>(spec.z_dim)},
                            z_noise);
  Var probs = classify_rows(tape, g, spec, xc);
  Var y_relaxed = gumbel_softmax_rows(probs, spec.tau, gc);
  GaussianRows q = encode_rows(tape, g, spec, xc, y_relaxed);
  Var z = reparam_rows(q.mu, q.log_var, noise);
  Var recon =
      likelihood_rows(spec, xc, decode_rows(tape, g, spec, z, y_relaxed));
  Var kl = prior_kl_rows(g, spec, q, y_relaxed);
  Var cat = categorical_prior_term_rows(probs, spec.prior.probs);
  return sub(add(recon, cat), kl);
}

ObjectiveVars total_objective(Tape& tape, const ModelGraph& g,
                              const ModelSpec& spec,
                              const LabelledBatch& labelled,
                              const UnlabelledBatch& unlabelled,
                              const std::vector<double>& z_noise_l,
                              const std::vector<double>& z_noise_u,
                              const std::vector<double>& gumbels_u) {
  if (labelled.n == 0 && unlabelled.n == 0) {
    throw std::invalid_argument("total_objective: both batches empty");
  }
  ObjectiveVars out;
  Var acc{};
  bool have = false;
  if (labelled.n > 0) {
    const auto y = one_hot(labelled.labels, spec.y_dim);
    Var elbo_l = elbo_labelled_rows(tape, g, spec, labelled.x, labelled.n, y,
                                    z_noise_l);
    Var xc = tape.constant({labelled.n, static_cast<std::size_t>(spec.x_dim)},
                           labelled.x);
    Var yc = tape.constant({labelled.n, static_cast<std::size_t>(spec.y_dim)},
                           y);
    Var probs = classify_rows(tape, g, spec, xc);
    Var log_qy = row_sum(mul(yc, log(probs)));
    out.mean_ce = mean(neg(log_qy));
    out.has_labelled = true;
    acc = add(mean(elbo_l), scale(out.mean_ce, -spec.alpha));
    have = true;
  } else {
    out.mean_ce = tape.constant({1}, {0.0});
  }
  if (unlabelled.n > 0) {
    Var elbo_u = mean(elbo_unlabelled_rows(tape, g, spec, unlabelled.x,
                                           unlabelled.n, z_noise_u,
                                           gumbels_u));
    acc = have ? add(acc, elbo_u) : elbo_u;
  }
  out.value = acc;
  return out;
}

}  // namespace dgmkit
