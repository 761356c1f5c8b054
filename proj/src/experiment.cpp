#include "dgmkit/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace fs = std::filesystem;

namespace dgmkit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void parse_config_file(const std::string& path, ExperimentConfig& cfg);

void apply_key(ExperimentConfig& cfg, const std::string& key,
               const std::string& value, const std::string& base_dir) {
  auto as_int = [&] { return std::stoi(value); };
  auto as_double = [&] { return std::stod(value); };
  if (key == "include") {
    fs::path p(value);
    if (p.is_relative()) p = fs::path(base_dir) / p;
    parse_config_file(p.string(), cfg);
  } else if (key == "dataset") {
    cfg.dataset = value;
  } else if (key == "family") {
    if (value == "ssvae") {
      cfg.family = Family::kSsvae;
    } else if (value == "gm-dgm") {
      cfg.family = Family::kGmDgm;
    } else {
      throw std::runtime_error("config: unknown family '" + value + "'");
    }
  } else if (key == "regime") {
    cfg.regime = regime_from_name(value);
  } else if (key == "n_aug") {
    cfg.n_aug = as_int();
  } else if (key == "label_fraction") {
    cfg.label_fraction = as_double();
  } else if (key == "seeds") {
    cfg.seeds.clear();
    std::istringstream ss(value);
    std::uint64_t s;
    while (ss >> s) cfg.seeds.push_back(s);
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else if (key == "parallel_seeds") {
    cfg.parallel_seeds = value == "1" || value == "true";
  } else if (key == "epochs") {
    cfg.epochs = as_int();
  } else if (key == "batch_size") {
    cfg.batch_size = as_int();
  } else if (key == "lr") {
    cfg.lr = as_double();
  } else if (key == "hidden_units") {
    cfg.hidden_units = as_int();
  } else if (key == "hidden_layers") {
    cfg.hidden_layers = as_int();
  } else if (key == "z_dim") {
    cfg.z_dim = as_int();
  } else if (key == "alpha") {
    cfg.alpha = as_double();
  } else if (key == "tau") {
    cfg.tau = as_double();
  } else if (key == "train_subset") {
    cfg.train_subset = static_cast<std::size_t>(std::stoul(value));
  } else if (key == "grid_rows") {
    cfg.grid_rows = as_int();
  } else if (key == "data_dir") {
    cfg.data_dir = value;
  } else if (key == "features_train") {
    cfg.features_train = value;
  } else if (key == "labels_train") {
    cfg.labels_train = value;
  } else if (key == "features_test") {
    cfg.features_test = value;
  } else if (key == "labels_test") {
    cfg.labels_test = value;
  } else if (key == "delimiter") {
    cfg.delimiter = value == "comma" ? ',' : value == "tab" ? '\t' : ' ';
  } else if (key == "syn_classes") {
    cfg.syn_classes = as_int();
  } else if (key == "syn_dim") {
    cfg.syn_dim = as_int();
  } else if (key == "syn_per_class") {
    cfg.syn_per_class = as_int();
  } else if (key == "syn_test_per_class") {
    cfg.syn_test_per_class = as_int();
  } else if (key == "syn_separation") {
    cfg.syn_separation = as_double();
  } else if (key == "syn_sigma") {
    cfg.syn_sigma = as_double();
  } else {
    throw std::runtime_error("config: unknown key '" + key + "'");
  }
}

void parse_config_file(const std::string& path, ExperimentConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  const std::string base_dir = fs::path(path).parent_path().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    std::string key, value;
    if (eq == std::string::npos) {
      // bare `include path`
      const auto sp = line.find(' ');
      if (sp == std::string::npos) {
        throw std::runtime_error("config: bad line " + std::to_string(lineno) +
                                 " in " + path);
      }
      key = trim(line.substr(0, sp));
      value = trim(line.substr(sp + 1));
    } else {
      key = trim(line.substr(0, eq));
      value = trim(line.substr(eq + 1));
    }
    try {
      apply_key(cfg, key, value, base_dir);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(e.what()) + " (line " +
                               std::to_string(lineno) + " of " + path + ")");
    }
  }
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_dataset(const LabeledDataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(ds.features.data(), ds.features.size() * sizeof(double), h);
  h = fnv1a(ds.labels.data(), ds.labels.size() * sizeof(int), h);
  return h;
}

LabeledDataset truncate_dataset(LabeledDataset ds, std::size_t n) {
  if (n == 0 || n >= ds.n) return ds;
  ds.n = n;
  ds.features.resize(n * ds.dim);
  ds.labels.resize(n);
  return ds;
}

struct DatasetDefaults {
  int z_dim, hidden_units, batch_size, epochs;
  double lr;
  LikelihoodSpec likelihood;
  double std_threshold;
  bool binarize, standardize;
};

DatasetDefaults dataset_defaults(const ExperimentConfig& cfg) {
  if (cfg.dataset == "mnist") {
    return {5, 200, 4, 50, 0.001,
            {LikelihoodSpec::Kind::kBernoulli, 0.0}, 0.1, true, false};
  }
  if (cfg.dataset == "fashion-mnist") {
    return {10, 500, 64, 50, 0.0015,
            {LikelihoodSpec::Kind::kBernoulli, 0.0}, 0.1, true, false};
  }
  if (cfg.dataset == "har") {
    return {15, 500, 64, 50, 0.005,
            {LikelihoodSpec::Kind::kGaussianFixedSigma, 0.01}, 0.0, false,
            true};
  }
  if (cfg.dataset == "synthetic") {
    return {4, 64, 32, 300, 0.002,
            {LikelihoodSpec::Kind::kGaussianFixedSigma, cfg.syn_sigma}, 0.0,
            false, false};
  }
  throw std::runtime_error("unknown dataset '" + cfg.dataset +
                           "' (expected mnist, fashion-mnist, har, synthetic)");
}

std::vector<int> default_labelled_classes(Regime regime, int n_gt) {
  std::vector<int> out;
  switch (regime) {
    case Regime::kUnsupervised:
      break;
    case Regime::kSemiSupervised:
      for (int c = 0; c < n_gt; ++c) out.push_back(c);
      break;
    case Regime::kSusAccident:
    case Regime::kSemiUnsupervised:
      for (int c = 0; c < (n_gt + 1) / 2; ++c) out.push_back(c);
      break;
  }
  return out;
}

LabeledDataset filter_classes(const LabeledDataset& ds,
                              const std::vector<int>& classes) {
  std::vector<bool> keep(ds.n_gt, false);
  for (int c : classes) keep[c] = true;
  LabeledDataset out;
  out.dim = ds.dim;
  out.n_gt = ds.n_gt;
  out.name = ds.name;
  out.preprocessed = ds.preprocessed;
  for (std::size_t i = 0; i < ds.n; ++i) {
    if (!keep[ds.labels[i]]) continue;
    out.labels.push_back(ds.labels[i]);
    out.features.insert(out.features.end(), ds.features.begin() + i * ds.dim,
                        ds.features.begin() + (i + 1) * ds.dim);
  }
  out.n = out.labels.size();
  return out;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
  ExperimentConfig cfg;
  parse_config_file(path, cfg);
  if (cfg.seeds.empty()) {
    throw std::runtime_error("config: seeds must be nonempty");
  }
  return cfg;
}

void write_experiment_config(const ExperimentConfig& cfg,
                             const std::string& path,
                             std::uint64_t single_seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  out.precision(17);
  out << "dataset = " << cfg.dataset << "\n";
  out << "family = " << (cfg.family == Family::kSsvae ? "ssvae" : "gm-dgm")
      << "\n";
  out << "regime = " << regime_name(cfg.regime) << "\n";
  out << "n_aug = " << cfg.n_aug << "\n";
  out << "label_fraction = " << cfg.label_fraction << "\n";
  out << "seeds = " << single_seed << "\n";
  out << "out_dir = " << cfg.out_dir << "\n";
  out << "parallel_seeds = " << (cfg.parallel_seeds ? 1 : 0) << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "lr = " << cfg.lr << "\n";
  out << "hidden_units = " << cfg.hidden_units << "\n";
  out << "hidden_layers = " << cfg.hidden_layers << "\n";
  out << "z_dim = " << cfg.z_dim << "\n";
  out << "alpha = " << cfg.alpha << "\n";
  out << "tau = " << cfg.tau << "\n";
  out << "train_subset = " << cfg.train_subset << "\n";
  out << "grid_rows = " << cfg.grid_rows << "\n";
  if (!cfg.data_dir.empty()) out << "data_dir = " << cfg.data_dir << "\n";
  if (!cfg.features_train.empty()) {
    out << "features_train = " << cfg.features_train << "\n";
    out << "labels_train = " << cfg.labels_train << "\n";
    out << "features_test = " << cfg.features_test << "\n";
    out << "labels_test = " << cfg.labels_test << "\n";
  }
  out << "syn_classes = " << cfg.syn_classes << "\n";
  out << "syn_dim = " << cfg.syn_dim << "\n";
  out << "syn_per_class = " << cfg.syn_per_class << "\n";
  out << "syn_test_per_class = " << cfg.syn_test_per_class << "\n";
  out << "syn_separation = " << cfg.syn_separation << "\n";
  out << "syn_sigma = " << cfg.syn_sigma << "\n";
}

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg) {
  const DatasetDefaults defaults = dataset_defaults(cfg);
  PreparedExperiment prep;

  if (cfg.dataset == "mnist" || cfg.dataset == "fashion-mnist") {
    if (cfg.data_dir.empty()) {
      throw std::runtime_error(
          "config: data_dir required for " + cfg.dataset +
          ". Download the four IDX files (train-images-idx3-ubyte, "
          "train-labels-idx1-ubyte, t10k-images-idx3-ubyte, "
          "t10k-labels-idx1-ubyte), decompress them into one directory "
          "and point data_dir at it.");
    }
    const fs::path d(cfg.data_dir);
    prep.train = load_idx_images((d / "train-images-idx3-ubyte").string(),
                                 (d / "train-labels-idx1-ubyte").string());
    prep.test = load_idx_images((d / "t10k-images-idx3-ubyte").string(),
                                (d / "t10k-labels-idx1-ubyte").string());
  } else if (cfg.dataset == "har") {
    if (cfg.features_train.empty()) {
      throw std::runtime_error(
          "config: features_train/labels_train/features_test/labels_test "
          "required for har (UCI HAR X_train.txt / y_train.txt layout)");
    }
    prep.train =
        load_tabular(cfg.features_train, cfg.labels_train, cfg.delimiter);
    prep.test = load_tabular(cfg.features_test, cfg.labels_test, cfg.delimiter);
  } else {
    prep.train = make_synthetic_blobs(cfg.syn_classes, cfg.syn_dim,
                                      cfg.syn_per_class, 0xD6A11ULL,
                                      cfg.syn_separation);
    prep.test = make_synthetic_blobs(cfg.syn_classes, cfg.syn_dim,
                                     cfg.syn_test_per_class, 0x7E57ULL,
                                     cfg.syn_separation);
  }

  prep.train = truncate_dataset(std::move(prep.train), cfg.train_subset);
  prep.dataset_hash = hash_dataset(prep.train);

  prep.preprocess = fit_preprocess(prep.train, defaults.std_threshold,
                                   defaults.binarize, defaults.standardize);
  prep.train = apply_preprocess(prep.train, prep.preprocess);
  prep.test = apply_preprocess(prep.test, prep.preprocess);

  prep.labelled_classes =
      default_labelled_classes(cfg.regime, prep.train.n_gt);
  const int n_l = static_cast<int>(prep.labelled_classes.size());

  ModelSpec spec;
  spec.family = cfg.family;
  spec.x_dim = static_cast<int>(prep.train.dim);
  spec.z_dim = cfg.z_dim > 0 ? cfg.z_dim : defaults.z_dim;
  spec.hidden_units =
      cfg.hidden_units > 0 ? cfg.hidden_units : defaults.hidden_units;
  spec.hidden_layers = cfg.hidden_layers > 0 ? cfg.hidden_layers : 2;
  spec.likelihood = defaults.likelihood;
  if (cfg.tau > 0) spec.tau = cfg.tau;

  // Label space and prior per regime: the split prior is used exactly
  // when extra unlabelled classes are being accounted for.
  switch (cfg.regime) {
    case Regime::kUnsupervised:
      spec.y_dim = prep.train.n_gt + cfg.n_aug;
      spec.prior = build_class_prior(spec.y_dim, 0);
      break;
    case Regime::kSemiSupervised:
    case Regime::kSusAccident:
      spec.y_dim = n_l;
      spec.prior = build_class_prior(n_l, 0);
      break;
    case Regime::kSemiUnsupervised:
      spec.y_dim = n_l + cfg.n_aug;
      spec.prior = build_class_prior(n_l, cfg.n_aug);
      break;
  }
  prep.spec = spec;

  prep.train_cfg.epochs = cfg.epochs > 0 ? cfg.epochs : defaults.epochs;
  prep.train_cfg.batch_size = static_cast<std::size_t>(
      cfg.batch_size > 0 ? cfg.batch_size : defaults.batch_size);
  prep.train_cfg.base_lr = cfg.lr > 0 ? cfg.lr : defaults.lr;
  return prep;
}

namespace {

SeedOutcome run_one_seed(const ExperimentConfig& cfg,
                         const PreparedExperiment& prep, std::uint64_t seed) {
  SeedOutcome outcome;
  outcome.seed = seed;
  try {
    const fs::path dir =
        fs::path(cfg.out_dir) / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    outcome.dir = dir.string();

    RegimeDataset regime =
        build_regime(prep.train, cfg.regime, cfg.label_fraction, seed,
                     prep.labelled_classes);
    write_regime_manifest(regime, (dir / "regime_manifest.txt").string());

    ModelSpec spec = prep.spec;
    if (cfg.alpha >= 0) {
      spec.alpha = cfg.alpha;
    } else if (regime.n_labelled() > 0) {
      spec.alpha = 0.1 *
                   static_cast<double>(regime.n_labelled() +
                                       regime.n_unlabelled()) /
                   static_cast<double>(regime.n_labelled());
    } else {
      spec.alpha = 0.0;
    }

    TrainConfig tc = prep.train_cfg;
    tc.seed = seed;
    tc.checkpoint_path = (dir / "checkpoint.bin").string();
    TrainResult tr = train(spec, regime, tc);
    write_runlog(tr.log, (dir / "runlog.csv").string());

    outcome.report = evaluate_model(tr.params, spec, prep.test,
                                    prep.labelled_classes, seed);
    write_eval_report(outcome.report, (dir / "eval.json").string());
    write_confusion_csv(outcome.report.confusion,
                        (dir / "confusion.csv").string());

    if (cfg.regime == Regime::kSusAccident) {
      const LabeledDataset subset =
          filter_classes(prep.test, prep.labelled_classes);
      outcome.labelled_subset_report = evaluate_model(
          tr.params, spec, subset, prep.labelled_classes, seed);
      outcome.has_subset_report = true;
      write_eval_report(outcome.labelled_subset_report,
                        (dir / "eval_labelled_subset.json").string());
    }

    // Entropy diagnostics split by labelled vs unlabelled-only classes.
    {
      const auto pred =
          predict_clusters(tr.params, spec, prep.test.features, prep.test.n);
      std::vector<bool> is_lab(prep.test.n_gt, false);
      for (int c : prep.labelled_classes) is_lab[c] = true;
      std::vector<int> subset_of(prep.test.n);
      for (std::size_t i = 0; i < prep.test.n; ++i) {
        subset_of[i] = is_lab[prep.test.labels[i]] ? 0 : 1;
      }
      const auto subsets =
          entropy_report(pred.probs, prep.test.n, spec.y_dim, subset_of,
                         {"labelled-classes", "unlabelled-classes"});
      std::ofstream ent(dir / "entropies.csv");
      ent << "subset,entropy\n";
      ent.precision(17);
      for (const auto& sub : subsets) {
        for (double h : sub.entropies) ent << sub.name << "," << h << "\n";
      }
    }

    if (spec.likelihood.kind == LikelihoodSpec::Kind::kBernoulli) {
      const GenerationGrid grid = generation_grid(
          tr.params, spec, static_cast<std::size_t>(cfg.grid_rows), seed);
      write_grid_pgm((dir / "grid.pgm").string(), grid, &prep.preprocess, 28,
                     28);
    }

    ExperimentConfig manifest_cfg = cfg;
    manifest_cfg.epochs = tc.epochs;
    manifest_cfg.batch_size = static_cast<int>(tc.batch_size);
    manifest_cfg.lr = tc.base_lr;
    manifest_cfg.hidden_units = spec.hidden_units;
    manifest_cfg.hidden_layers = spec.hidden_layers;
    manifest_cfg.z_dim = spec.z_dim;
    manifest_cfg.alpha = spec.alpha;
    manifest_cfg.tau = spec.tau;
    write_experiment_config(manifest_cfg, (dir / "manifest.txt").string(),
                            seed);
    {
      std::ofstream mf(dir / "manifest.txt", std::ios::app);
      mf << "# dataset_hash " << std::hex << prep.dataset_hash << std::dec
         << "\n";
    }
    outcome.ok = true;
  } catch (const std::exception& e) {
    outcome.error = e.what();
  }
  return outcome;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const PreparedExperiment prep = prepare_experiment(cfg);
  ExperimentResult result;
  result.outcomes.resize(cfg.seeds.size());
  if (cfg.parallel_seeds && cfg.seeds.size() > 1) {
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      workers.emplace_back([&, i] {
        result.outcomes[i] = run_one_seed(cfg, prep, cfg.seeds[i]);
      });
    }
    for (auto& w : workers) w.join();
  } else {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      result.outcomes[i] = run_one_seed(cfg, prep, cfg.seeds[i]);
    }
  }
  result.all_ok = std::all_of(result.outcomes.begin(), result.outcomes.end(),
                              [](const SeedOutcome& o) { return o.ok; });
  return result;
}

std::vector<SummaryRow> summarize(const std::vector<std::string>& run_dirs) {
  struct Group {
    ExperimentConfig cfg;
    std::vector<EvalReport> reports;
  };
  std::map<std::string, Group> groups;
  for (const auto& dir : run_dirs) {
    const fs::path d(dir);
    if (!fs::exists(d / "manifest.txt") || !fs::exists(d / "eval.json")) {
      throw std::runtime_error("run dir " + dir +
                               " is incomplete (missing manifest or eval)");
    }
    ExperimentConfig cfg = load_experiment_config((d / "manifest.txt").string());
    const std::string key = cfg.dataset + "|" +
                            (cfg.family == Family::kSsvae ? "ssvae" : "gm-dgm") +
                            "|" + regime_name(cfg.regime);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) {
      it->second.cfg = cfg;
    } else {
      const ExperimentConfig& ref = it->second.cfg;
      if (cfg.n_aug != ref.n_aug ||
          cfg.label_fraction != ref.label_fraction ||
          cfg.epochs != ref.epochs || cfg.z_dim != ref.z_dim ||
          cfg.hidden_units != ref.hidden_units) {
        throw std::runtime_error(
            "summarize: run dir " + dir + " shares group " + key +
            " but differs in hyperparameters; refusing to pool");
      }
    }
    it->second.reports.push_back(read_eval_report((d / "eval.json").string()));
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, group] : groups) {
    SummaryRow row;
    row.dataset = group.cfg.dataset;
    row.family = group.cfg.family == Family::kSsvae ? "ssvae" : "gm-dgm";
    row.regime = regime_name(group.cfg.regime);
    row.n_runs = static_cast<int>(group.reports.size());
    double sum = 0.0, lab_sum = 0.0, unlab_sum = 0.0;
    int lab_n = 0, unlab_n = 0;
    for (const auto& r : group.reports) {
      sum += r.acc;
      if (r.labelled_class_acc >= 0) {
        lab_sum += r.labelled_class_acc;
        ++lab_n;
      }
      if (r.unlabelled_class_acc >= 0) {
        unlab_sum += r.unlabelled_class_acc;
        ++unlab_n;
      }
    }
    row.mean_acc = sum / row.n_runs;
    if (row.n_runs > 1) {
      double ss = 0.0;
      for (const auto& r : group.reports) {
        ss += (r.acc - row.mean_acc) * (r.acc - row.mean_acc);
      }
      row.sd_acc = std::sqrt(ss / (row.n_runs - 1));
    }
    if (lab_n > 0) row.mean_labelled_acc = lab_sum / lab_n;
    if (unlab_n > 0) row.mean_unlabelled_acc = unlab_sum / unlab_n;
    rows.push_back(row);
  }
  return rows;
}

std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "family   dataset        regime             runs  acc%          "
        "lab%    unlab%\n";
  for (const auto& r : rows) {
    char buf[160];
    std::string acc = [&] {
      char b[32];
      if (r.sd_acc >= 0) {
        std::snprintf(b, sizeof b, "%5.1f +- %.1f", 100 * r.mean_acc,
                      100 * r.sd_acc);
      } else {
        std::snprintf(b, sizeof b, "%5.1f", 100 * r.mean_acc);
      }
      return std::string(b);
    }();
    auto pct = [](double v) {
      char b[16];
      if (v < 0) return std::string("   -");
      std::snprintf(b, sizeof b, "%5.1f", 100 * v);
      return std::string(b);
    };
    std::snprintf(buf, sizeof buf, "%-8s %-14s %-18s %4d  %-13s %s   %s\n",
                  r.family.c_str(), r.dataset.c_str(), r.regime.c_str(),
                  r.n_runs, acc.c_str(), pct(r.mean_labelled_acc).c_str(),
                  pct(r.mean_unlabelled_acc).c_str());
    os << buf;
  }
  return os.str();
}

}  // namespace dgmkit
