#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dgmkit/experiment.hpp"

using namespace dgmkit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dgmkit-exp-test-" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

// RunLog minus the wall-clock column; everything else must be bitwise
// reproducible.
std::string runlog_trace(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    out << line.substr(0, line.rfind(',')) << "\n";
  }
  return out.str();
}

// Small, fast synthetic configuration shared by the runner tests.
ExperimentConfig tiny_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.dataset = "synthetic";
  cfg.family = Family::kGmDgm;
  cfg.regime = Regime::kSemiUnsupervised;
  cfg.n_aug = 2;
  cfg.label_fraction = 0.25;
  cfg.seeds = {3};
  cfg.out_dir = out_dir;
  cfg.parallel_seeds = false;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.syn_classes = 4;
  cfg.syn_dim = 4;
  cfg.syn_per_class = 20;
  cfg.syn_test_per_class = 20;
  return cfg;
}

}  // namespace

TEST_CASE("config files: comments, includes and precedence") {
  TempDir dir;
  write_text(dir.file("base.cfg"),
             "dataset = synthetic\n"
             "family = ssvae\n"
             "epochs = 10   # trailing comment\n"
             "seeds = 1 2 3\n");
  write_text(dir.file("exp.cfg"),
             "# experiment overrides\n"
             "include base.cfg\n"
             "family = gm-dgm\n"
             "regime = semi-unsupervised\n"
             "n_aug = 6\n"
             "lr = 0.004\n");
  const ExperimentConfig cfg = load_experiment_config(dir.file("exp.cfg"));
  CHECK(cfg.dataset == "synthetic");
  CHECK(cfg.family == Family::kGmDgm);  // later key wins over the include
  CHECK(cfg.regime == Regime::kSemiUnsupervised);
  CHECK(cfg.epochs == 10);
  CHECK(cfg.n_aug == 6);
  CHECK(cfg.lr == doctest::Approx(0.004));
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
}

TEST_CASE("config files: unknown keys and empty seeds are rejected") {
  TempDir dir;
  write_text(dir.file("bad.cfg"), "dataset = synthetic\nbogus_key = 3\n");
  CHECK_THROWS_WITH_AS(load_experiment_config(dir.file("bad.cfg")),
                       doctest::Contains("unknown key"), std::runtime_error);
  write_text(dir.file("noseeds.cfg"), "dataset = synthetic\nseeds =\n");
  CHECK_THROWS_WITH_AS(load_experiment_config(dir.file("noseeds.cfg")),
                       doctest::Contains("seeds"), std::runtime_error);
  write_text(dir.file("badfam.cfg"), "family = vanilla\nseeds = 1\n");
  CHECK_THROWS_WITH_AS(load_experiment_config(dir.file("badfam.cfg")),
                       doctest::Contains("unknown family"), std::runtime_error);
}

TEST_CASE("config round trip through write_experiment_config") {
  TempDir dir;
  ExperimentConfig cfg = tiny_config("runs/x");
  cfg.alpha = 2.5;
  cfg.tau = 0.3;
  cfg.label_fraction = 0.15;
  write_experiment_config(cfg, dir.file("saved.cfg"), 42);
  const ExperimentConfig back = load_experiment_config(dir.file("saved.cfg"));
  CHECK(back.dataset == cfg.dataset);
  CHECK(back.family == cfg.family);
  CHECK(back.regime == cfg.regime);
  CHECK(back.n_aug == cfg.n_aug);
  CHECK(back.label_fraction == cfg.label_fraction);
  CHECK(back.seeds == std::vector<std::uint64_t>{42});
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.alpha == cfg.alpha);
  CHECK(back.tau == cfg.tau);
  CHECK(back.syn_per_class == cfg.syn_per_class);
}

TEST_CASE("prepare_experiment resolves the label space per regime") {
  ExperimentConfig cfg = tiny_config("unused");
  cfg.n_aug = 6;

  SUBCASE("semi-unsupervised: K = n_labelled + n_aug with a split prior") {
    cfg.regime = Regime::kSemiUnsupervised;
    const PreparedExperiment prep = prepare_experiment(cfg);
    CHECK(prep.labelled_classes == std::vector<int>{0, 1});
    CHECK(prep.spec.y_dim == 8);
    REQUIRE(prep.spec.prior.probs.size() == 8);
    // Half the mass on the 2 labelled ids, half on the 6 augmented ones.
    for (int i = 0; i < 2; ++i) {
      CHECK(prep.spec.prior.probs[i] == doctest::Approx(0.25).epsilon(1e-12));
    }
    for (int i = 2; i < 8; ++i) {
      CHECK(prep.spec.prior.probs[i] ==
            doctest::Approx(0.5 / 6.0).epsilon(1e-12));
    }
    double sum = 0.0;
    for (double p : prep.spec.prior.probs) sum += p;
    CHECK(sum == 1.0);
  }
  SUBCASE("unsupervised: K = n_gt + n_aug, uniform") {
    cfg.regime = Regime::kUnsupervised;
    const PreparedExperiment prep = prepare_experiment(cfg);
    CHECK(prep.labelled_classes.empty());
    CHECK(prep.spec.y_dim == 10);
    for (double p : prep.spec.prior.probs) {
      CHECK(p == doctest::Approx(0.1).epsilon(1e-12));
    }
  }
  SUBCASE("semi-supervised: K = number of labelled classes") {
    cfg.regime = Regime::kSemiSupervised;
    const PreparedExperiment prep = prepare_experiment(cfg);
    CHECK(prep.labelled_classes == std::vector<int>{0, 1, 2, 3});
    CHECK(prep.spec.y_dim == 4);
  }
  SUBCASE("sus-accident: K restricted to the labelled classes") {
    cfg.regime = Regime::kSusAccident;
    const PreparedExperiment prep = prepare_experiment(cfg);
    CHECK(prep.labelled_classes == std::vector<int>{0, 1});
    CHECK(prep.spec.y_dim == 2);
    for (double p : prep.spec.prior.probs) {
      CHECK(p == doctest::Approx(0.5).epsilon(1e-12));
    }
  }
}

TEST_CASE("prepare_experiment fills dataset defaults and honors overrides") {
  ExperimentConfig cfg = tiny_config("unused");
  cfg.epochs = -1;
  cfg.batch_size = -1;
  cfg.z_dim = -1;
  PreparedExperiment prep = prepare_experiment(cfg);
  CHECK(prep.spec.z_dim == 4);
  CHECK(prep.spec.hidden_units == 64);
  CHECK(prep.train_cfg.epochs == 300);
  CHECK(prep.train_cfg.batch_size == 32);
  CHECK(prep.train_cfg.base_lr == doctest::Approx(0.002));

  cfg.z_dim = 7;
  cfg.epochs = 12;
  cfg.lr = 0.5;
  prep = prepare_experiment(cfg);
  CHECK(prep.spec.z_dim == 7);
  CHECK(prep.train_cfg.epochs == 12);
  CHECK(prep.train_cfg.base_lr == 0.5);
}

TEST_CASE("prepare_experiment refuses image datasets without data_dir") {
  ExperimentConfig cfg = tiny_config("unused");
  cfg.dataset = "mnist";
  CHECK_THROWS_WITH_AS(prepare_experiment(cfg),
                       doctest::Contains("data_dir"), std::runtime_error);
  cfg.dataset = "hal9000";
  CHECK_THROWS_WITH_AS(prepare_experiment(cfg),
                       doctest::Contains("unknown dataset"),
                       std::runtime_error);
}

TEST_CASE("run_experiment writes the per-seed artifact set") {
  TempDir dir;
  const ExperimentConfig cfg = tiny_config(dir.file("run"));
  const ExperimentResult res = run_experiment(cfg);
  REQUIRE(res.all_ok);
  REQUIRE(res.outcomes.size() == 1);
  const fs::path seed_dir = res.outcomes[0].dir;
  CHECK(seed_dir.filename() == "seed_3");
  for (const char* name : {"runlog.csv", "eval.json", "confusion.csv",
                           "entropies.csv", "regime_manifest.txt",
                           "manifest.txt", "checkpoint.bin"}) {
    CHECK_MESSAGE(fs::exists(seed_dir / name), name);
  }
  // Gaussian likelihood: no PGM sample grid.
  CHECK_FALSE(fs::exists(seed_dir / "grid.pgm"));

  const EvalReport report =
      read_eval_report((seed_dir / "eval.json").string());
  CHECK(report.n_test == 80);
  CHECK(report.acc == res.outcomes[0].report.acc);
  CHECK(report.labelled_classes == std::vector<int>{0, 1});

  // The default alpha is recorded in the manifest: 0.1 * N / N_labelled.
  const ExperimentConfig manifest =
      load_experiment_config((seed_dir / "manifest.txt").string());
  CHECK(manifest.alpha == doctest::Approx(0.1 * 80.0 / 10.0));
}

TEST_CASE("identical configs reproduce the run byte-for-byte") {
  TempDir dir;
  ExperimentConfig cfg = tiny_config(dir.file("a"));
  const ExperimentResult a = run_experiment(cfg);
  cfg.out_dir = dir.file("b");
  const ExperimentResult b = run_experiment(cfg);
  REQUIRE(a.all_ok);
  REQUIRE(b.all_ok);
  CHECK(runlog_trace(dir.file("a/seed_3/runlog.csv")) ==
        runlog_trace(dir.file("b/seed_3/runlog.csv")));
  CHECK(a.outcomes[0].report.acc == b.outcomes[0].report.acc);
  CHECK(a.outcomes[0].report.entropies == b.outcomes[0].report.entropies);
}

TEST_CASE("a run's manifest re-runs to the identical RunLog") {
  TempDir dir;
  const ExperimentConfig cfg = tiny_config(dir.file("orig"));
  const ExperimentResult orig = run_experiment(cfg);
  REQUIRE(orig.all_ok);

  ExperimentConfig replay =
      load_experiment_config(dir.file("orig/seed_3/manifest.txt"));
  replay.out_dir = dir.file("replay");
  const ExperimentResult again = run_experiment(replay);
  REQUIRE(again.all_ok);
  CHECK(runlog_trace(dir.file("orig/seed_3/runlog.csv")) ==
        runlog_trace(dir.file("replay/seed_3/runlog.csv")));
}

TEST_CASE("summarize pools compatible runs and refuses incompatible ones") {
  TempDir dir;
  ExperimentConfig cfg = tiny_config(dir.file("multi"));
  cfg.seeds = {3, 4};
  const ExperimentResult res = run_experiment(cfg);
  REQUIRE(res.all_ok);

  SUBCASE("single run reports no standard deviation") {
    const auto rows = summarize({dir.file("multi/seed_3")});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].n_runs == 1);
    CHECK(rows[0].sd_acc < 0.0);
    CHECK(rows[0].mean_acc == res.outcomes[0].report.acc);
  }
  SUBCASE("two seeds pool into one row with the exact mean") {
    const auto rows =
        summarize({dir.file("multi/seed_3"), dir.file("multi/seed_4")});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].n_runs == 2);
    CHECK(rows[0].family == "gm-dgm");
    CHECK(rows[0].dataset == "synthetic");
    CHECK(rows[0].regime == "semi-unsupervised");
    const double mean =
        (res.outcomes[0].report.acc + res.outcomes[1].report.acc) / 2.0;
    CHECK(rows[0].mean_acc == doctest::Approx(mean).epsilon(1e-15));
    CHECK(rows[0].sd_acc >= 0.0);
    const std::string table = summary_table(rows);
    CHECK(table.find("gm-dgm") != std::string::npos);
    CHECK(table.find("semi-unsupervised") != std::string::npos);
  }
  SUBCASE("same group with different hyperparameters is refused") {
    ExperimentConfig other = tiny_config(dir.file("other"));
    other.z_dim = 6;
    REQUIRE(run_experiment(other).all_ok);
    CHECK_THROWS_WITH_AS(
        summarize({dir.file("multi/seed_3"), dir.file("other/seed_3")}),
        doctest::Contains("refusing to pool"), std::runtime_error);
  }
  SUBCASE("incomplete directories are reported") {
    fs::create_directories(dir.file("empty"));
    CHECK_THROWS_WITH_AS(summarize({dir.file("empty")}),
                         doctest::Contains("incomplete"), std::runtime_error);
  }
}
