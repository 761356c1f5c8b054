#include "dgmkit/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "dgmkit/rng.hpp"

namespace dgmkit {

OptimizerState init_optimizer(const ParamStore& params) {
  OptimizerState st;
  for (const auto& [name, tensor] : params) {
    st.m[name].assign(tensor.values.size(), 0.0);
    st.v[name].assign(tensor.values.size(), 0.0);
  }
  return st;
}

void adam_step(ParamStore& params,
               const std::map<std::string, std::vector<double>>& objective_grads,
               OptimizerState& state, double lr) {
  for (const auto& [name, g] : objective_grads) {
    for (double x : g) {
      if (!std::isfinite(x)) {
        throw std::runtime_error("adam_step: non-finite gradient in parameter " +
                                 name);
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, tensor] : params) {
    auto git = objective_grads.find(name);
    if (git == objective_grads.end()) {
      throw std::invalid_argument("adam_step: missing gradient for " + name);
    }
    const auto& grad = git->second;
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
      const double g = -grad[i];  // descent on the negated objective
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      tensor.values[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.eps);
    }
  }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
  if (step < 0 || step > total_steps || total_steps <= 0) {
    throw std::invalid_argument("cosine_lr: step out of range");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void write_runlog(const RunLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write runlog: " + path);
  out.precision(17);
  out << "epoch,objective,ce,lr,seconds\n";
  for (const auto& r : log.records) {
    out << r.epoch << "," << r.objective << "," << r.ce << "," << r.lr << ","
        << r.seconds << "\n";
  }
}

namespace {

// Labelled indices for positions [begin, begin+count) of an epoch-long
// reshuffled cycle over D_l. Stateless: each wrap has its own derived
// permutation, so resuming at an epoch boundary is exact.
std::vector<std::size_t> labelled_cycle(const RegimeDataset& data,
                                        std::uint64_t seed, int epoch,
                                        std::size_t begin, std::size_t count) {
  const std::size_t n = data.n_labelled();
  std::vector<std::size_t> out;
  out.reserve(count);
  std::size_t wrap = begin / n;
  std::size_t pos = begin % n;
  std::vector<std::size_t> perm(n);
  auto fill_perm = [&](std::size_t w) {
    std::iota(perm.begin(), perm.end(), 0);
    auto rng = stream_rng(seed ^ (0x5abeULL + w),
                          RngStream::kShuffle,
                          static_cast<std::uint64_t>(epoch));
    std::shuffle(perm.begin(), perm.end(), rng);
  };
  fill_perm(wrap);
  while (out.size() < count) {
    if (pos == n) {
      pos = 0;
      fill_perm(++wrap);
    }
    out.push_back(perm[pos++]);
  }
  return out;
}

std::vector<double> gather_rows(const std::vector<double>& src,
                                std::size_t dim,
                                const std::vector<std::size_t>& rows) {
  std::vector<double> out(rows.size() * dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(src.begin() + rows[i] * dim, src.begin() + (rows[i] + 1) * dim,
              out.begin() + i * dim);
  }
  return out;
}

}  // namespace

TrainResult train(const ModelSpec& spec, const RegimeDataset& data,
                  const TrainConfig& cfg) {
  ParamStore params = build_model(spec, cfg.seed);
  OptimizerState opt = init_optimizer(params);
  return train_from(spec, data, cfg, std::move(params), std::move(opt), 0);
}

TrainResult train_from(const ModelSpec& spec, const RegimeDataset& data,
                       const TrainConfig& cfg, ParamStore params,
                       OptimizerState opt, int start_epoch) {
  validate_spec(spec);
  for (int c : data.labelled_classes) {
    if (c >= spec.y_dim) {
      throw std::invalid_argument("train: labelled class " + std::to_string(c) +
                                  " outside model label space K=" +
                                  std::to_string(spec.y_dim));
    }
  }
  if (data.dim != static_cast<std::size_t>(spec.x_dim)) {
    throw std::invalid_argument("train: data dim " + std::to_string(data.dim) +
                                " != model x_dim " +
                                std::to_string(spec.x_dim));
  }
  const std::size_t n_u = data.n_unlabelled();
  const std::size_t n_l = data.n_labelled();
  if (n_u == 0 && n_l == 0) {
    throw std::invalid_argument("train: regime dataset is empty");
  }
  const bool bernoulli =
      spec.likelihood.kind == LikelihoodSpec::Kind::kBernoulli;
  // An epoch is one pass over D_u (over D_l if D_u is empty).
  const std::size_t n_main = n_u > 0 ? n_u : n_l;
  const std::size_t steps_per_epoch =
      (n_main + cfg.batch_size - 1) / cfg.batch_size;
  const int schedule_epochs =
      cfg.schedule_epochs > 0 ? cfg.schedule_epochs : cfg.epochs;
  if (schedule_epochs < cfg.epochs) {
    throw std::invalid_argument(
        "train: schedule_epochs shorter than the training run");
  }
  const std::int64_t total_steps =
      static_cast<std::int64_t>(steps_per_epoch) * schedule_epochs;

  TrainResult result;
  result.log.records.reserve(cfg.epochs - start_epoch);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto shuffle_rng =
        stream_rng(cfg.seed, RngStream::kShuffle, static_cast<std::uint64_t>(epoch));
    auto bin_rng =
        stream_rng(cfg.seed, RngStream::kBinarize, static_cast<std::uint64_t>(epoch));
    auto z_rng =
        stream_rng(cfg.seed, RngStream::kZNoise, static_cast<std::uint64_t>(epoch));
    auto gumbel_rng =
        stream_rng(cfg.seed, RngStream::kGumbel, static_cast<std::uint64_t>(epoch));

    std::vector<std::size_t> main_order(n_main);
    std::iota(main_order.begin(), main_order.end(), 0);
    std::shuffle(main_order.begin(), main_order.end(), shuffle_rng);

    double obj_sum = 0.0, ce_sum = 0.0;
    std::size_t ce_steps = 0;
    double lr = cfg.base_lr;
    std::size_t labelled_cursor = 0;

    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::int64_t global_step =
          static_cast<std::int64_t>(epoch) * steps_per_epoch + s;
      lr = cosine_lr(global_step, total_steps, cfg.base_lr);

      const std::size_t lo = s * cfg.batch_size;
      const std::size_t hi = std::min(lo + cfg.batch_size, n_main);
      const std::size_t bs = hi - lo;

      UnlabelledBatch ub;
      LabelledBatch lb;
      if (n_u > 0) {
        std::vector<std::size_t> rows(main_order.begin() + lo,
                                      main_order.begin() + hi);
        ub.n = bs;
        ub.x = gather_rows(data.unlabelled_x, data.dim, rows);
      }
      if (n_l > 0) {
        std::vector<std::size_t> rows;
        if (n_u > 0) {
          rows = labelled_cycle(data, cfg.seed, epoch, labelled_cursor, bs);
          labelled_cursor += bs;
        } else {
          rows.assign(main_order.begin() + lo, main_order.begin() + hi);
        }
        lb.n = rows.size();
        lb.x = gather_rows(data.labelled_x, data.dim, rows);
        lb.labels.reserve(rows.size());
        for (std::size_t r : rows) lb.labels.push_back(data.labelled_y[r]);
      }
      if (bernoulli) {
        if (lb.n > 0) lb.x = binarize_batch(lb.x, bin_rng);
        if (ub.n > 0) ub.x = binarize_batch(ub.x, bin_rng);
      }

      const std::size_t zd = static_cast<std::size_t>(spec.z_dim);
      const std::size_t kd = static_cast<std::size_t>(spec.y_dim);
      std::vector<double> z_noise_l = normal_vector(z_rng, lb.n * zd);
      std::vector<double> z_noise_u = normal_vector(z_rng, ub.n * zd);
      std::vector<double> gumbels = open_uniform_vector(gumbel_rng, ub.n * kd);
      for (double& u : gumbels) u = -std::log(-std::log(u));

      Tape tape;
      ModelGraph graph = stage_params(tape, params);
      ObjectiveVars obj = total_objective(tape, graph, spec, lb, ub, z_noise_l,
                                          z_noise_u, gumbels);
      const double obj_val = tape.val(obj.value)[0];
      if (!std::isfinite(obj_val)) {
        if (!cfg.checkpoint_path.empty()) {
          save_checkpoint({spec, cfg.seed, epoch, params, opt},
                          cfg.checkpoint_path + ".diagnostic");
        }
        throw std::runtime_error(
            "train: non-finite objective at epoch " + std::to_string(epoch) +
            " step " + std::to_string(s));
      }
      tape.backward(obj.value);

      std::map<std::string, std::vector<double>> grads;
      for (const auto& [name, var] : graph.params) {
        grads[name] = tape.grad(var);
      }
      try {
        adam_step(params, grads, opt, lr);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " at epoch " +
                                 std::to_string(epoch));
      }

      obj_sum += obj_val;
      if (obj.has_labelled) {
        ce_sum += tape.val(obj.mean_ce)[0];
        ++ce_steps;
      }
    }

    const auto t1 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.objective = obj_sum / static_cast<double>(steps_per_epoch);
    rec.ce = ce_steps > 0 ? ce_sum / static_cast<double>(ce_steps) : 0.0;
    rec.lr = lr;
    rec.seconds = std::chrono::duration<double>(t1 - t0).count();
    result.log.records.push_back(rec);

    const bool final_epoch = epoch + 1 == cfg.epochs;
    if (!cfg.checkpoint_path.empty() &&
        (final_epoch ||
         (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0))) {
      save_checkpoint({spec, cfg.seed, epoch + 1, params, opt},
                      cfg.checkpoint_path);
    }
  }

  result.params = std::move(params);
  result.opt = std::move(opt);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[8] = {'D', 'G', 'M', 'K', 'C', 'K', 'P', '1'};

nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["family"] = spec.family == Family::kSsvae ? "ssvae" : "gm-dgm";
  j["x_dim"] = spec.x_dim;
  j["z_dim"] = spec.z_dim;
  j["y_dim"] = spec.y_dim;
  j["hidden_units"] = spec.hidden_units;
  j["hidden_layers"] = spec.hidden_layers;
  j["likelihood"] = spec.likelihood.kind == LikelihoodSpec::Kind::kBernoulli
                        ? "bernoulli"
                        : "gaussian-fixed-sigma";
  j["sigma"] = spec.likelihood.sigma;
  j["alpha"] = spec.alpha;
  j["tau"] = spec.tau;
  j["activation"] = spec.activation == Activation::kRelu ? "relu" : "tanh";
  j["prior"] = {{"probs", spec.prior.probs},
                {"n_labelled", spec.prior.n_labelled},
                {"n_aug", spec.prior.n_aug}};
  return j;
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.family = j.at("family") == "ssvae" ? Family::kSsvae : Family::kGmDgm;
  spec.x_dim = j.at("x_dim");
  spec.z_dim = j.at("z_dim");
  spec.y_dim = j.at("y_dim");
  spec.hidden_units = j.at("hidden_units");
  spec.hidden_layers = j.at("hidden_layers");
  spec.likelihood.kind = j.at("likelihood") == "bernoulli"
                             ? LikelihoodSpec::Kind::kBernoulli
                             : LikelihoodSpec::Kind::kGaussianFixedSigma;
  spec.likelihood.sigma = j.at("sigma");
  spec.alpha = j.at("alpha");
  spec.tau = j.at("tau");
  spec.activation =
      j.at("activation") == "relu" ? Activation::kRelu : Activation::kTanh;
  spec.prior.probs = j.at("prior").at("probs").get<std::vector<double>>();
  spec.prior.n_labelled = j.at("prior").at("n_labelled");
  spec.prior.n_aug = j.at("prior").at("n_aug");
  return spec;
}

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& in, std::vector<double>& v, std::size_t n,
                  const std::string& path) {
  v.resize(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json header = spec_to_json(ckpt.spec);
  header["seed"] = ckpt.seed;
  header["epoch"] = ckpt.epoch;
  header["opt"] = {{"beta1", ckpt.opt.beta1},
                   {"beta2", ckpt.opt.beta2},
                   {"eps", ckpt.opt.eps},
                   {"step", ckpt.opt.step}};
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, tensor] : ckpt.params) {
    tensors.push_back({{"name", name}, {"shape", tensor.shape}});
  }
  header["tensors"] = tensors;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kCkptMagic, 8);
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, tensor] : ckpt.params) {
    write_doubles(out, tensor.values);
    write_doubles(out, ckpt.opt.m.at(name));
    write_doubles(out, ckpt.opt.v.at(name));
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0) {
    throw std::runtime_error("not a dgmkit checkpoint: " + path);
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  const nlohmann::json header = nlohmann::json::parse(hs);

  Checkpoint ckpt;
  ckpt.spec = spec_from_json(header);
  ckpt.seed = header.at("seed");
  ckpt.epoch = header.at("epoch");
  ckpt.opt.beta1 = header.at("opt").at("beta1");
  ckpt.opt.beta2 = header.at("opt").at("beta2");
  ckpt.opt.eps = header.at("opt").at("eps");
  ckpt.opt.step = header.at("opt").at("step");
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name");
    HostTensor tensor;
    tensor.shape = t.at("shape").get<Shape>();
    const std::size_t n = numel(tensor.shape);
    read_doubles(in, tensor.values, n, path);
    read_doubles(in, ckpt.opt.m[name], n, path);
    read_doubles(in, ckpt.opt.v[name], n, path);
    ckpt.params[name] = std::move(tensor);
  }
  return ckpt;
}

}  // namespace dgmkit
