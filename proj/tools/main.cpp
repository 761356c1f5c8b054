#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dgmkit/eval.hpp"
#include "dgmkit/experiment.hpp"
#include "dgmkit/train.hpp"

using namespace dgmkit;

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir,
            const std::vector<std::uint64_t>& seeds, bool serial) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (!seeds.empty()) cfg.seeds = seeds;
  if (serial) cfg.parallel_seeds = false;

  const ExperimentResult result = run_experiment(cfg);
  std::vector<std::string> dirs;
  for (const auto& o : result.outcomes) {
    if (o.ok) {
      std::printf("seed %llu: acc %.4f", (unsigned long long)o.seed,
                  o.report.acc);
      if (o.report.labelled_class_acc >= 0) {
        std::printf("  labelled %.4f", o.report.labelled_class_acc);
      }
      if (o.report.unlabelled_class_acc >= 0) {
        std::printf("  unlabelled %.4f", o.report.unlabelled_class_acc);
      }
      if (o.has_subset_report) {
        std::printf("  labelled-subset %.4f", o.labelled_subset_report.acc);
      }
      std::printf("  (%s)\n", o.dir.c_str());
      dirs.push_back(o.dir);
    } else {
      std::fprintf(stderr, "seed %llu: FAILED: %s\n",
                   (unsigned long long)o.seed, o.error.c_str());
    }
  }
  if (dirs.size() > 1) {
    std::printf("\n%s", summary_table(summarize(dirs)).c_str());
  }
  return result.all_ok ? 0 : 1;
}

int cmd_summarize(const std::vector<std::string>& dirs) {
  std::printf("%s", summary_table(summarize(dirs)).c_str());
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& out_path) {
  const ExperimentConfig cfg = load_experiment_config(config_path);
  const PreparedExperiment prep = prepare_experiment(cfg);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const EvalReport report = evaluate_model(ckpt.params, ckpt.spec, prep.test,
                                           prep.labelled_classes, ckpt.seed);
  std::printf("acc %.4f  n_test %zu\n", report.acc, report.n_test);
  if (report.labelled_class_acc >= 0) {
    std::printf("labelled-class acc %.4f\n", report.labelled_class_acc);
  }
  if (report.unlabelled_class_acc >= 0) {
    std::printf("unlabelled-class acc %.4f\n", report.unlabelled_class_acc);
  }
  if (!out_path.empty()) write_eval_report(report, out_path);
  return 0;
}

int cmd_gen_grid(const std::string& config_path, const std::string& ckpt_path,
                 const std::string& out_path, int rows, std::uint64_t seed) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.spec.likelihood.kind != LikelihoodSpec::Kind::kBernoulli) {
    std::fprintf(stderr, "gen-grid: only image (Bernoulli) models render\n");
    return 1;
  }
  const ExperimentConfig cfg = load_experiment_config(config_path);
  const PreparedExperiment prep = prepare_experiment(cfg);
  const GenerationGrid grid =
      generation_grid(ckpt.params, ckpt.spec, (std::size_t)rows, seed);
  write_grid_pgm(out_path, grid, &prep.preprocess, 28, 28);
  std::printf("wrote %s (%zu x %zu cells)\n", out_path.c_str(), grid.rows,
              grid.cols);
  return 0;
}

int cmd_export_latents(const std::string& config_path,
                       const std::string& ckpt_path,
                       const std::string& out_path,
                       const std::string& policy_name) {
  const ExperimentConfig cfg = load_experiment_config(config_path);
  const PreparedExperiment prep = prepare_experiment(cfg);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const LatentYPolicy policy = policy_name == "labels"
                                   ? LatentYPolicy::kGivenLabels
                                   : LatentYPolicy::kArgmaxPosterior;
  const std::vector<double> z =
      export_latents(ckpt.params, ckpt.spec, prep.test.features, prep.test.n,
                     policy, prep.test.labels);
  std::ofstream out(out_path);
  if (!out) {
    std::fprintf(stderr, "cannot write %s\n", out_path.c_str());
    return 1;
  }
  out.precision(17);
  out << "label";
  for (int d = 0; d < ckpt.spec.z_dim; ++d) out << ",z" << d;
  out << "\n";
  for (std::size_t i = 0; i < prep.test.n; ++i) {
    out << prep.test.labels[i];
    for (int d = 0; d < ckpt.spec.z_dim; ++d) {
      out << "," << z[i * ckpt.spec.z_dim + d];
    }
    out << "\n";
  }
  std::printf("wrote %s (%zu rows)\n", out_path.c_str(), prep.test.n);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep generative models across label regimes"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, out_path, out_dir, policy = "argmax";
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> dirs;
  int rows = 8;
  std::uint64_t seed = 0;
  bool serial = false;

  auto* run = app.add_subcommand("run", "Train and evaluate across seeds");
  run->add_option("-c,--config", config_path, "experiment config file")
      ->required();
  run->add_option("-o,--out-dir", out_dir, "override output directory");
  run->add_option("-s,--seeds", seeds, "override seed list");
  run->add_flag("--serial", serial, "run seeds sequentially");

  auto* summ = app.add_subcommand("summarize", "Pool completed run dirs");
  summ->add_option("dirs", dirs, "per-seed run directories")->required();

  auto* ev = app.add_subcommand("eval", "Re-evaluate a checkpoint");
  ev->add_option("-c,--config", config_path)->required();
  ev->add_option("-k,--checkpoint", ckpt_path)->required();
  ev->add_option("-o,--out", out_path, "write eval report JSON");

  auto* gg = app.add_subcommand("gen-grid", "Render a class-conditional grid");
  gg->add_option("-c,--config", config_path)->required();
  gg->add_option("-k,--checkpoint", ckpt_path)->required();
  gg->add_option("-o,--out", out_path)->required();
  gg->add_option("--rows", rows, "latent samples per class");
  gg->add_option("--seed", seed);

  auto* ex = app.add_subcommand("export-latents", "Posterior means as CSV");
  ex->add_option("-c,--config", config_path)->required();
  ex->add_option("-k,--checkpoint", ckpt_path)->required();
  ex->add_option("-o,--out", out_path)->required();
  ex->add_option("--policy", policy, "argmax | labels");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, seeds, serial);
    if (summ->parsed()) return cmd_summarize(dirs);
    if (ev->parsed()) return cmd_eval(config_path, ckpt_path, out_path);
    if (gg->parsed()) {
      return cmd_gen_grid(config_path, ckpt_path, out_path, rows, seed);
    }
    if (ex->parsed()) {
      return cmd_export_latents(config_path, ckpt_path, out_path, policy);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
