#include "dgmkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dgmkit/rng.hpp"

namespace dgmkit {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off,
                   const std::string& path) {
  if (off + 4 > b.size()) {
    throw std::runtime_error("truncated IDX file: " + path);
  }
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

LabeledDataset load_idx_images(const std::string& images_path,
                               const std::string& labels_path) {
  const auto ib = read_file(images_path);
  if (be32(ib, 0, images_path) != kImageMagic) {
    throw std::runtime_error("bad IDX image magic in " + images_path);
  }
  const std::size_t n = be32(ib, 4, images_path);
  const std::size_t rows = be32(ib, 8, images_path);
  const std::size_t cols = be32(ib, 12, images_path);
  const std::size_t dim = rows * cols;
  if (ib.size() < 16 + n * dim) {
    throw std::runtime_error("truncated IDX image data in " + images_path);
  }
  const auto lb = read_file(labels_path);
  if (be32(lb, 0, labels_path) != kLabelMagic) {
    throw std::runtime_error("bad IDX label magic in " + labels_path);
  }
  const std::size_t nl = be32(lb, 4, labels_path);
  if (nl != n) {
    throw std::runtime_error("IDX count mismatch: " + std::to_string(n) +
                             " images vs " + std::to_string(nl) + " labels");
  }
  if (lb.size() < 8 + n) {
    throw std::runtime_error("truncated IDX label data in " + labels_path);
  }
  LabeledDataset ds;
  ds.n = n;
  ds.dim = dim;
  ds.features.resize(n * dim);
  for (std::size_t i = 0; i < n * dim; ++i) {
    ds.features[i] = static_cast<double>(ib[16 + i]) / 255.0;
  }
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lb[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.n_gt = max_label + 1;
  ds.name = images_path;
  return ds;
}

void write_idx_images(const std::string& images_path,
                      const std::string& labels_path,
                      const LabeledDataset& ds, std::size_t rows,
                      std::size_t cols) {
  if (rows * cols != ds.dim) {
    throw std::invalid_argument("write_idx_images: rows*cols != dim");
  }
  std::ofstream im(images_path, std::ios::binary);
  put_be32(im, kImageMagic);
  put_be32(im, static_cast<std::uint32_t>(ds.n));
  put_be32(im, static_cast<std::uint32_t>(rows));
  put_be32(im, static_cast<std::uint32_t>(cols));
  for (double v : ds.features) {
    im.put(static_cast<char>(
        static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  std::ofstream lb(labels_path, std::ios::binary);
  put_be32(lb, kLabelMagic);
  put_be32(lb, static_cast<std::uint32_t>(ds.n));
  for (int l : ds.labels) lb.put(static_cast<char>(l));
}

LabeledDataset load_tabular(const std::string& features_path,
                            const std::string& labels_path, char delimiter) {
  std::ifstream in(features_path);
  if (!in) throw std::runtime_error("cannot open file: " + features_path);
  LabeledDataset ds;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::istringstream ls(line);
    std::string cell;
    if (delimiter == ' ') {
      while (ls >> cell) {
        try {
          std::size_t used = 0;
          vals.push_back(std::stod(cell, &used));
          if (used != cell.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw std::runtime_error("non-numeric cell '" + cell + "' at row " +
                                   std::to_string(row) + " of " +
                                   features_path);
        }
      }
    } else {
      while (std::getline(ls, cell, delimiter)) {
        try {
          std::size_t used = 0;
          vals.push_back(std::stod(cell, &used));
          if (used != cell.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw std::runtime_error("non-numeric cell '" + cell + "' at row " +
                                   std::to_string(row) + " of " +
                                   features_path);
        }
      }
    }
    if (ds.dim == 0) {
      ds.dim = vals.size();
    } else if (vals.size() != ds.dim) {
      throw std::runtime_error("ragged row " + std::to_string(row) + " in " +
                               features_path + ": expected " +
                               std::to_string(ds.dim) + " cells, got " +
                               std::to_string(vals.size()));
    }
    ds.features.insert(ds.features.end(), vals.begin(), vals.end());
    ++row;
  }
  ds.n = row;
  std::ifstream lin(labels_path);
  if (!lin) throw std::runtime_error("cannot open file: " + labels_path);
  std::size_t lrow = 0;
  while (std::getline(lin, line)) {
    if (line.empty()) continue;
    try {
      ds.labels.push_back(std::stoi(line));
    } catch (const std::exception&) {
      throw std::runtime_error("non-numeric label at row " +
                               std::to_string(lrow) + " of " + labels_path);
    }
    ++lrow;
  }
  if (lrow != ds.n) {
    throw std::runtime_error("label count mismatch: " + std::to_string(ds.n) +
                             " rows vs " + std::to_string(lrow) + " labels");
  }
  if (!ds.labels.empty()) {
    const int mn = *std::min_element(ds.labels.begin(), ds.labels.end());
    for (int& l : ds.labels) l -= mn;
    ds.n_gt = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  }
  ds.name = features_path;
  return ds;
}

PreprocessSpec fit_preprocess(const LabeledDataset& train,
                              double std_threshold, bool binarize_dynamic,
                              bool standardize) {
  if (std_threshold < 0.0) {
    throw std::invalid_argument("fit_preprocess: threshold must be >= 0");
  }
  PreprocessSpec spec;
  spec.std_threshold = std_threshold;
  spec.binarize_dynamic = binarize_dynamic;
  spec.standardize = standardize;
  spec.source_dim = train.dim;
  std::vector<double> mean(train.dim, 0.0), var(train.dim, 0.0);
  for (std::size_t i = 0; i < train.n; ++i) {
    for (std::size_t j = 0; j < train.dim; ++j) {
      mean[j] += train.features[i * train.dim + j];
    }
  }
  for (double& m : mean) m /= static_cast<double>(train.n);
  for (std::size_t i = 0; i < train.n; ++i) {
    for (std::size_t j = 0; j < train.dim; ++j) {
      const double d = train.features[i * train.dim + j] - mean[j];
      var[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < train.dim; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(train.n));
    if (sd > std_threshold) {
      spec.kept_dims.push_back(j);
      if (standardize) {
        spec.means.push_back(mean[j]);
        spec.stds.push_back(sd);
      }
    }
  }
  if (spec.kept_dims.empty()) {
    throw std::runtime_error(
        "fit_preprocess: no dimension survives std threshold " +
        std::to_string(std_threshold));
  }
  return spec;
}

LabeledDataset apply_preprocess(const LabeledDataset& ds,
                                const PreprocessSpec& spec) {
  if (ds.preprocessed) return ds;
  if (ds.dim != spec.source_dim) {
    throw std::invalid_argument(
        "apply_preprocess: dataset dim " + std::to_string(ds.dim) +
        " != fitted source dim " + std::to_string(spec.source_dim));
  }
  LabeledDataset out;
  out.n = ds.n;
  out.dim = spec.kept_dims.size();
  out.labels = ds.labels;
  out.n_gt = ds.n_gt;
  out.name = ds.name;
  out.preprocessed = true;
  out.features.resize(out.n * out.dim);
  for (std::size_t i = 0; i < ds.n; ++i) {
    for (std::size_t j = 0; j < out.dim; ++j) {
      double v = ds.features[i * ds.dim + spec.kept_dims[j]];
      if (spec.standardize) v = (v - spec.means[j]) / spec.stds[j];
      out.features[i * out.dim + j] = v;
    }
  }
  return out;
}

std::vector<double> binarize_batch(const std::vector<double>& batch,
                                   std::mt19937_64& rng) {
  std::vector<double> out(batch.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double p = batch[i];
    if (p < 0.0 || p > 1.0) {
      throw std::invalid_argument("binarize_batch: entry " +
                                  std::to_string(p) + " outside [0,1]");
    }
    out[i] = u(rng) < p ? 1.0 : 0.0;
  }
  return out;
}

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::kUnsupervised: return "unsupervised";
    case Regime::kSemiSupervised: return "semi-supervised";
    case Regime::kSusAccident: return "sus-accident";
    case Regime::kSemiUnsupervised: return "semi-unsupervised";
  }
  return "?";
}

Regime regime_from_name(const std::string& name) {
  if (name == "unsupervised") return Regime::kUnsupervised;
  if (name == "semi-supervised") return Regime::kSemiSupervised;
  if (name == "sus-accident") return Regime::kSusAccident;
  if (name == "semi-unsupervised") return Regime::kSemiUnsupervised;
  throw std::invalid_argument("unknown regime: " + name);
}

RegimeDataset build_regime(const LabeledDataset& ds, Regime regime,
                           double label_fraction, std::uint64_t seed,
                           std::vector<int> labelled_classes) {
  if (ds.n == 0) throw std::invalid_argument("build_regime: empty dataset");
  if (regime != Regime::kUnsupervised &&
      (label_fraction <= 0.0 || label_fraction > 1.0)) {
    throw std::invalid_argument("build_regime: label_fraction must be in (0,1]");
  }
  if (labelled_classes.empty()) {
    switch (regime) {
      case Regime::kUnsupervised:
        break;
      case Regime::kSemiSupervised:
        for (int c = 0; c < ds.n_gt; ++c) labelled_classes.push_back(c);
        break;
      case Regime::kSusAccident:
      case Regime::kSemiUnsupervised:
        for (int c = 0; c < (ds.n_gt + 1) / 2; ++c) {
          labelled_classes.push_back(c);
        }
        break;
    }
  } else if (regime == Regime::kUnsupervised) {
    throw std::invalid_argument(
        "build_regime: unsupervised regime takes no labelled classes");
  }
  std::sort(labelled_classes.begin(), labelled_classes.end());
  for (int c : labelled_classes) {
    if (c < 0 || c >= ds.n_gt) {
      throw std::invalid_argument("build_regime: labelled class " +
                                  std::to_string(c) + " outside 0.." +
                                  std::to_string(ds.n_gt - 1));
    }
  }

  RegimeDataset rd;
  rd.dim = ds.dim;
  rd.n_gt = ds.n_gt;
  rd.regime = regime;
  rd.label_fraction = label_fraction;
  rd.seed = seed;
  rd.labelled_classes = labelled_classes;
  rd.source_name = ds.name;

  std::vector<bool> is_labelled_class(ds.n_gt, false);
  for (int c : labelled_classes) is_labelled_class[c] = true;

  // Scope: semi-supervised drops other-class examples entirely.
  std::vector<bool> in_scope(ds.n, true);
  if (regime == Regime::kSemiSupervised) {
    for (std::size_t i = 0; i < ds.n; ++i) {
      in_scope[i] = is_labelled_class[ds.labels[i]];
    }
  }

  std::vector<bool> chosen(ds.n, false);
  auto rng = stream_rng(seed, RngStream::kRegime);
  for (int c : labelled_classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.n; ++i) {
      if (in_scope[i] && ds.labels[i] == c) members.push_back(i);
    }
    if (members.empty()) {
      throw std::invalid_argument("build_regime: class " + std::to_string(c) +
                                  " has no examples");
    }
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t take = static_cast<std::size_t>(
        std::floor(label_fraction * static_cast<double>(members.size())));
    take = std::max<std::size_t>(take, 1);
    for (std::size_t i = 0; i < take; ++i) chosen[members[i]] = true;
  }

  for (std::size_t i = 0; i < ds.n; ++i) {
    if (!in_scope[i]) continue;
    if (chosen[i]) {
      rd.labelled_idx.push_back(i);
      rd.labelled_y.push_back(ds.labels[i]);
      rd.labelled_x.insert(rd.labelled_x.end(),
                           ds.features.begin() + i * ds.dim,
                           ds.features.begin() + (i + 1) * ds.dim);
    } else {
      rd.unlabelled_idx.push_back(i);
      rd.unlabelled_x.insert(rd.unlabelled_x.end(),
                             ds.features.begin() + i * ds.dim,
                             ds.features.begin() + (i + 1) * ds.dim);
    }
  }
  return rd;
}

void write_regime_manifest(const RegimeDataset& rd, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << "dgmkit-regime-manifest v1\n";
  out << "source " << rd.source_name << "\n";
  out << "dim " << rd.dim << "\n";
  out << "n_gt " << rd.n_gt << "\n";
  out << "regime " << regime_name(rd.regime) << "\n";
  out << "label_fraction " << rd.label_fraction << "\n";
  out << "seed " << rd.seed << "\n";
  out << "labelled_classes";
  for (int c : rd.labelled_classes) out << " " << c;
  out << "\n";
  out << "labelled_indices " << rd.labelled_idx.size() << "\n";
  for (std::size_t i : rd.labelled_idx) out << i << "\n";
}

RegimeDataset regime_from_manifest(const LabeledDataset& ds,
                                   const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::string header;
  std::getline(in, header);
  if (header != "dgmkit-regime-manifest v1") {
    throw std::runtime_error("not a regime manifest: " + path);
  }
  RegimeDataset rd;
  rd.dim = ds.dim;
  rd.n_gt = ds.n_gt;
  rd.source_name = ds.name;
  std::string key;
  std::size_t n_idx = 0;
  while (in >> key) {
    if (key == "source") {
      std::string v;
      std::getline(in, v);
    } else if (key == "dim" || key == "n_gt") {
      std::size_t v;
      in >> v;
    } else if (key == "regime") {
      std::string v;
      in >> v;
      rd.regime = regime_from_name(v);
    } else if (key == "label_fraction") {
      in >> rd.label_fraction;
    } else if (key == "seed") {
      in >> rd.seed;
    } else if (key == "labelled_classes") {
      std::string rest;
      std::getline(in, rest);
      std::istringstream rs(rest);
      int c;
      while (rs >> c) rd.labelled_classes.push_back(c);
    } else if (key == "labelled_indices") {
      in >> n_idx;
      rd.labelled_idx.resize(n_idx);
      for (std::size_t i = 0; i < n_idx; ++i) in >> rd.labelled_idx[i];
    } else {
      throw std::runtime_error("unknown manifest key '" + key + "' in " + path);
    }
  }
  std::vector<bool> chosen(ds.n, false);
  for (std::size_t i : rd.labelled_idx) {
    if (i >= ds.n) {
      throw std::runtime_error("manifest index " + std::to_string(i) +
                               " outside dataset of size " +
                               std::to_string(ds.n));
    }
    chosen[i] = true;
  }
  std::vector<bool> is_labelled_class(ds.n_gt, false);
  for (int c : rd.labelled_classes) is_labelled_class[c] = true;
  for (std::size_t i = 0; i < ds.n; ++i) {
    if (rd.regime == Regime::kSemiSupervised &&
        !is_labelled_class[ds.labels[i]]) {
      continue;
    }
    if (chosen[i]) {
      rd.labelled_y.push_back(ds.labels[i]);
      rd.labelled_x.insert(rd.labelled_x.end(),
                           ds.features.begin() + i * ds.dim,
                           ds.features.begin() + (i + 1) * ds.dim);
    } else {
      rd.unlabelled_idx.push_back(i);
      rd.unlabelled_x.insert(rd.unlabelled_x.end(),
                             ds.features.begin() + i * ds.dim,
                             ds.features.begin() + (i + 1) * ds.dim);
    }
  }
  return rd;
}

ClassPrior build_class_prior(int n_labelled, int n_aug) {
  if (n_labelled < 1 || n_aug < 0) {
    throw std::invalid_argument("build_class_prior: need n_labelled >= 1, "
                                "n_aug >= 0");
  }
  ClassPrior prior;
  prior.n_labelled = n_labelled;
  prior.n_aug = n_aug;
  const int k = n_labelled + n_aug;
  prior.probs.resize(k);
  if (n_aug == 0) {
    for (double& p : prior.probs) p = 1.0 / n_labelled;
  } else {
    for (int i = 0; i < n_labelled; ++i) prior.probs[i] = 0.5 / n_labelled;
    for (int i = n_labelled; i < k; ++i) prior.probs[i] = 0.5 / n_aug;
  }
  // Pin the sum to exactly 1 by folding the rounding residual into the
  // last entry. The leading partial sum s is at least 0.5 (every entry
  // is at most 0.5), so 1 - s is exact and a left-to-right summation of
  // the result gives exactly 1.0.
  double s = 0.0;
  for (int i = 0; i + 1 < k; ++i) s += prior.probs[i];
  prior.probs[k - 1] = 1.0 - s;
  return prior;
}

LabeledDataset make_synthetic_blobs(int n_classes, int dim, int per_class,
                                    std::uint64_t seed, double separation) {
  if (n_classes < 1 || dim < 1 || per_class < 1) {
    throw std::invalid_argument("make_synthetic_blobs: bad sizes");
  }
  auto rng = stream_rng(seed, RngStream::kSynthetic);
  LabeledDataset ds;
  ds.n = static_cast<std::size_t>(n_classes) * per_class;
  ds.dim = dim;
  ds.n_gt = n_classes;
  ds.name = "synthetic-blobs";
  ds.features.resize(ds.n * ds.dim);
  ds.labels.resize(ds.n);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t row = 0;
  for (int c = 0; c < n_classes; ++c) {
    for (int i = 0; i < per_class; ++i, ++row) {
      ds.labels[row] = c;
      for (int j = 0; j < dim; ++j) {
        const double mu = (j % n_classes == c) ? separation : 0.0;
        ds.features[row * dim + j] = mu + noise(rng);
      }
    }
  }
  return ds;
}

}  // namespace dgmkit
