#include "dgmkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "dgmkit/distributions.hpp"
#include "dgmkit/rng.hpp"

namespace dgmkit {

ClusterAccuracyResult cluster_accuracy(const std::vector<int>& predictions,
                                       const std::vector<int>& truths, int k,
                                       int t) {
  if (predictions.empty() || predictions.size() != truths.size()) {
    throw std::invalid_argument("cluster_accuracy: empty or mismatched input");
  }
  for (int p : predictions) {
    if (p < 0 || p >= k) {
      throw std::invalid_argument("cluster_accuracy: prediction out of range");
    }
  }
  for (int c : truths) {
    if (c < 0 || c >= t) {
      throw std::invalid_argument("cluster_accuracy: truth out of range");
    }
  }
  std::vector<std::vector<long>> counts(k, std::vector<long>(t, 0));
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    ++counts[predictions[i]][truths[i]];
  }
  ClusterAccuracyResult result;
  result.assignment.mapping.resize(k, 0);
  long correct = 0;
  for (int c = 0; c < k; ++c) {
    long total = 0, best = -1;
    int best_class = 0;
    for (int cls = 0; cls < t; ++cls) {
      total += counts[c][cls];
      if (counts[c][cls] > best) {
        best = counts[c][cls];
        best_class = cls;
      }
    }
    if (total == 0) {
      result.empty_clusters.push_back(c);
      best_class = 0;
      best = 0;
    }
    result.assignment.mapping[c] = best_class;
    correct += best;
  }
  result.acc = static_cast<double>(correct) /
               static_cast<double>(predictions.size());
  return result;
}

ClusterPrediction predict_clusters(const ParamStore& params,
                                   const ModelSpec& spec,
                                   const std::vector<double>& features,
                                   std::size_t n) {
  ClusterPrediction out;
  out.probs = classify(params, spec, features, n);
  out.clusters.resize(n);
  const int k = spec.y_dim;
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    for (int c = 1; c < k; ++c) {
      if (out.probs[i * k + c] > out.probs[i * k + best]) best = c;
    }
    out.clusters[i] = best;
  }
  return out;
}

std::vector<std::vector<long>> confusion_matrix(
    const std::vector<int>& predictions, const std::vector<int>& truths, int k,
    int t) {
  std::vector<std::vector<long>> counts(t, std::vector<long>(k, 0));
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    ++counts.at(truths[i]).at(predictions[i]);
  }
  return counts;
}

std::vector<std::vector<long>> assigned_confusion(
    const std::vector<std::vector<long>>& confusion,
    const Assignment& assignment) {
  const std::size_t t = confusion.size();
  std::vector<std::vector<long>> out(t, std::vector<long>(t, 0));
  for (std::size_t row = 0; row < t; ++row) {
    for (std::size_t c = 0; c < confusion[row].size(); ++c) {
      out[row][assignment.mapping.at(c)] += confusion[row][c];
    }
  }
  return out;
}

namespace {

double quantile(std::vector<double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

std::vector<EntropySubset> entropy_report(
    const std::vector<double>& probs, std::size_t n, int k,
    const std::vector<int>& subset_of,
    const std::vector<std::string>& subset_names) {
  if (subset_of.size() != n) {
    throw std::invalid_argument("entropy_report: subset_of size mismatch");
  }
  std::vector<EntropySubset> subsets(subset_names.size());
  for (std::size_t s = 0; s < subset_names.size(); ++s) {
    subsets[s].name = subset_names[s];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int s = subset_of[i];
    if (s < 0) continue;
    const double h = categorical_entropy(
        std::span<const double>(probs.data() + i * k, static_cast<std::size_t>(k)));
    subsets.at(s).entropies.push_back(h);
  }
  for (auto& sub : subsets) {
    if (sub.entropies.empty()) continue;
    std::vector<double> sorted = sub.entropies;
    std::sort(sorted.begin(), sorted.end());
    sub.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) /
               static_cast<double>(sorted.size());
    sub.median = quantile(sorted, 0.5);
    sub.q25 = quantile(sorted, 0.25);
    sub.q75 = quantile(sorted, 0.75);
  }
  return subsets;
}

GenerationGrid generation_grid(const ParamStore& params, const ModelSpec& spec,
                               std::size_t n_z_samples, std::uint64_t seed) {
  const std::size_t k = static_cast<std::size_t>(spec.y_dim);
  const std::size_t zd = static_cast<std::size_t>(spec.z_dim);
  auto rng = stream_rng(seed, RngStream::kGeneration);
  GenerationGrid grid;
  grid.rows = n_z_samples;
  grid.cols = k;
  grid.cell_dim = static_cast<std::size_t>(spec.x_dim);
  // One batch: row-major (row, col) cells; every cell in a row shares
  // the row's standard-normal draw.
  std::vector<double> z(n_z_samples * k * zd);
  std::vector<double> y(n_z_samples * k * k, 0.0);
  for (std::size_t r = 0; r < n_z_samples; ++r) {
    const std::vector<double> eps = normal_vector(rng, zd);
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t cell = r * k + c;
      y[cell * k + c] = 1.0;
      for (std::size_t j = 0; j < zd; ++j) {
        double zj = eps[j];
        if (spec.family == Family::kGmDgm) {
          const auto& mu = params.at("prior.mu").values;
          const auto& lv = params.at("prior.lv").values;
          zj = mu[c * zd + j] + std::exp(0.5 * lv[c * zd + j]) * eps[j];
        }
        z[cell * zd + j] = zj;
      }
    }
  }
  grid.values = decode_mean(params, spec, z, y, n_z_samples * k);
  return grid;
}

void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<double>& gray01) {
  if (gray01.size() != width * height) {
    throw std::invalid_argument("write_pgm: size mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write PGM: " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  for (double v : gray01) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
}

void write_grid_pgm(const std::string& path, const GenerationGrid& grid,
                    const PreprocessSpec* preprocess, std::size_t img_w,
                    std::size_t img_h) {
  const std::size_t full_dim = img_w * img_h;
  if (preprocess != nullptr && preprocess->source_dim != full_dim) {
    throw std::invalid_argument("write_grid_pgm: preprocess dims mismatch");
  }
  if (preprocess == nullptr && grid.cell_dim != full_dim) {
    throw std::invalid_argument("write_grid_pgm: cell dims mismatch");
  }
  const std::size_t w = grid.cols * img_w;
  const std::size_t h = grid.rows * img_h;
  std::vector<double> canvas(w * h, 0.0);
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const double* cell = &grid.values[(r * grid.cols + c) * grid.cell_dim];
      std::vector<double> full(full_dim, 0.0);
      if (preprocess != nullptr) {
        for (std::size_t j = 0; j < preprocess->kept_dims.size(); ++j) {
          full[preprocess->kept_dims[j]] = cell[j];
        }
      } else {
        std::copy(cell, cell + full_dim, full.begin());
      }
      for (std::size_t py = 0; py < img_h; ++py) {
        for (std::size_t px = 0; px < img_w; ++px) {
          canvas[(r * img_h + py) * w + c * img_w + px] = full[py * img_w + px];
        }
      }
    }
  }
  write_pgm(path, w, h, canvas);
}

std::vector<std::vector<std::size_t>> most_confident(
    const std::vector<double>& probs, std::size_t n, int k,
    std::size_t per_cluster) {
  if (per_cluster < 1) {
    throw std::invalid_argument("most_confident: per_cluster must be >= 1");
  }
  // Assign each example to its argmax cluster, then rank by confidence.
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    for (int c = 1; c < k; ++c) {
      if (probs[i * k + c] > probs[i * k + best]) best = c;
    }
    members[best].push_back(i);
  }
  for (int c = 0; c < k; ++c) {
    std::stable_sort(members[c].begin(), members[c].end(),
                     [&](std::size_t a, std::size_t b) {
                       return probs[a * k + c] > probs[b * k + c];
                     });
    if (members[c].size() > per_cluster) members[c].resize(per_cluster);
  }
  return members;
}

std::vector<double> export_latents(const ParamStore& params,
                                   const ModelSpec& spec,
                                   const std::vector<double>& features,
                                   std::size_t n, LatentYPolicy policy,
                                   const std::vector<int>& labels) {
  std::vector<int> y_ids;
  if (policy == LatentYPolicy::kGivenLabels) {
    if (labels.size() != n) {
      throw std::invalid_argument("export_latents: labels required");
    }
    y_ids = labels;
  } else {
    y_ids = predict_clusters(params, spec, features, n).clusters;
  }
  return posterior_mean(params, spec, features, one_hot(y_ids, spec.y_dim), n);
}

EvalReport evaluate_model(const ParamStore& params, const ModelSpec& spec,
                          const LabeledDataset& test,
                          const std::vector<int>& labelled_classes,
                          std::uint64_t seed) {
  if (test.dim != static_cast<std::size_t>(spec.x_dim)) {
    throw std::invalid_argument(
        "evaluate_model: test dim " + std::to_string(test.dim) +
        " != model x_dim " + std::to_string(spec.x_dim) +
        "; was the training-fit preprocess applied?");
  }
  EvalReport report;
  report.n_test = test.n;
  report.labelled_classes = labelled_classes;
  report.seed = seed;

  const auto pred = predict_clusters(params, spec, test.features, test.n);
  const auto ca =
      cluster_accuracy(pred.clusters, test.labels, spec.y_dim, test.n_gt);
  report.acc = ca.acc;
  report.assignment = ca.assignment;
  report.confusion =
      confusion_matrix(pred.clusters, test.labels, spec.y_dim, test.n_gt);

  if (spec.y_dim == test.n_gt) {
    long correct = 0;
    for (std::size_t i = 0; i < test.n; ++i) {
      if (pred.clusters[i] == test.labels[i]) ++correct;
    }
    report.plain_accuracy =
        static_cast<double>(correct) / static_cast<double>(test.n);
  }

  std::vector<bool> is_labelled(test.n_gt, false);
  for (int c : labelled_classes) is_labelled.at(c) = true;
  long lab_correct = 0, lab_total = 0, unlab_correct = 0, unlab_total = 0;
  for (std::size_t i = 0; i < test.n; ++i) {
    const bool ok =
        ca.assignment.mapping[pred.clusters[i]] == test.labels[i];
    if (is_labelled[test.labels[i]]) {
      ++lab_total;
      lab_correct += ok;
    } else {
      ++unlab_total;
      unlab_correct += ok;
    }
  }
  if (lab_total > 0) {
    report.labelled_class_acc =
        static_cast<double>(lab_correct) / static_cast<double>(lab_total);
  }
  if (unlab_total > 0) {
    report.unlabelled_class_acc =
        static_cast<double>(unlab_correct) / static_cast<double>(unlab_total);
  }

  report.entropies.resize(test.n);
  for (std::size_t i = 0; i < test.n; ++i) {
    report.entropies[i] = categorical_entropy(std::span<const double>(
        pred.probs.data() + i * spec.y_dim,
        static_cast<std::size_t>(spec.y_dim)));
  }
  return report;
}

void write_eval_report(const EvalReport& report, const std::string& path) {
  nlohmann::json j;
  j["acc"] = report.acc;
  j["plain_accuracy"] = report.plain_accuracy;
  j["labelled_class_acc"] = report.labelled_class_acc;
  j["unlabelled_class_acc"] = report.unlabelled_class_acc;
  j["n_test"] = report.n_test;
  j["assignment"] = report.assignment.mapping;
  j["confusion"] = report.confusion;
  j["entropies"] = report.entropies;
  j["labelled_classes"] = report.labelled_classes;
  j["seed"] = report.seed;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write eval report: " + path);
  out << j.dump(2) << "\n";
}

EvalReport read_eval_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open eval report: " + path);
  nlohmann::json j;
  in >> j;
  EvalReport report;
  report.acc = j.at("acc");
  report.plain_accuracy = j.at("plain_accuracy");
  report.labelled_class_acc = j.at("labelled_class_acc");
  report.unlabelled_class_acc = j.at("unlabelled_class_acc");
  report.n_test = j.at("n_test");
  report.assignment.mapping = j.at("assignment").get<std::vector<int>>();
  report.confusion = j.at("confusion").get<std::vector<std::vector<long>>>();
  report.entropies = j.at("entropies").get<std::vector<double>>();
  report.labelled_classes = j.at("labelled_classes").get<std::vector<int>>();
  report.seed = j.at("seed");
  return report;
}

void write_confusion_csv(const std::vector<std::vector<long>>& confusion,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write confusion: " + path);
  for (const auto& row : confusion) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << ",";
      out << row[c];
    }
    out << "\n";
  }
}

}  // namespace dgmkit
