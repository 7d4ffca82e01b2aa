#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "avr/error.hpp"
#include "avr/io_util.hpp"
#include "avr/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

// Fresh directory with a small config whose paths all point inside it.
struct Workdir {
  fs::path root;

  explicit Workdir(const std::string& name, const std::string& extra = "") {
    root = fs::temp_directory_path() / ("avr_test_" + name);
    fs::remove_all(root);
    fs::create_directories(root);
    std::string cfg = R"({
  "seed": 5,
  "paths": {
    "annotations": "@/data/train.annotations", "features": "@/data/train.features",
    "test_annotations": "@/data/test.annotations", "test_features": "@/data/test.features",
    "embeddings": "@/data/embeddings.txt", "manifest": "@/data/manifest.json",
    "checkpoint": "@/run/model.ckpt", "prior": "@/run/prior.txt",
    "predictions": "@/run/predictions.tsv", "report": "@/run/report.tsv"
  },
  "synth": {"n_images": 8, "n_test_images": 2, "visual_dim": 8, "global_dim": 4, "embedding_dim": 10},
  "heads": {"semantic_hidden": 8, "semantic_dim": 8, "attention_hidden": 8},
  "train": {"epochs": 2, "batch_size": 4})";
    cfg += extra + "\n}\n";
    std::string::size_type at;
    while ((at = cfg.find('@')) != std::string::npos) cfg.replace(at, 1, root.string());
    avr::io::write_file(config().string(), cfg);
  }
  ~Workdir() { fs::remove_all(root); }

  fs::path config() const { return root / "config.json"; }

  int run(const std::string& args) const {
    const std::string cmd = std::string(AVR_CLI_PATH) + " " + args + " > " +
                            (root / "out.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  int run_cfg(const std::string& command, const std::string& extra = "") const {
    return run(command + " --config " + config().string() + " " + extra);
  }
  std::string read(const std::string& rel) const { return avr::io::read_file((root / rel).string()); }
};

}  // namespace

TEST(Config, DefaultsAndRoundTrip) {
  const auto c = avr::parse_config("{}");
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.train.epochs, 50u);
  EXPECT_FALSE(c.prior.lambda.has_value());
  const auto again = avr::parse_config(c.to_json());
  EXPECT_EQ(again.to_json(), c.to_json());
  EXPECT_EQ(again.hash(), c.hash());
  auto changed = c;
  changed.seed = 1;
  EXPECT_NE(changed.hash(), c.hash());
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(avr::parse_config(R"({"sed": 1})"), std::invalid_argument);
  EXPECT_THROW(avr::parse_config(R"({"train": {"epoch": 1}})"), std::invalid_argument);
  EXPECT_THROW(avr::parse_config(R"({"seed": "one"})"), std::invalid_argument);
  EXPECT_THROW(avr::parse_config(R"({"prior": {"lambda": 1.0}})"), std::invalid_argument);
  EXPECT_THROW(avr::parse_config(R"({"inference": {"mode": "fancy"}})"), std::invalid_argument);
  EXPECT_THROW(avr::parse_config(R"({"inference": {"per_pair_k": 0}})"), std::invalid_argument);
  EXPECT_THROW(avr::parse_config("{"), std::invalid_argument);
  EXPECT_THROW(avr::load_config("/nonexistent/avr.json"), std::invalid_argument);
}

TEST(Config, DerivedOptions) {
  const auto c = avr::parse_config(R"({"train": {"epochs": 3, "clip_norm": 0}, "seed": 9})");
  const auto t = avr::train_options(c);
  EXPECT_EQ(t.epochs, 3u);
  EXPECT_EQ(t.clip_norm, 0.0);
  EXPECT_EQ(t.seed, 9u);
  const auto s = avr::synth_config(c);
  EXPECT_EQ(s.n_images, c.synth.n_images + c.synth.n_test_images);
}

TEST(Cli, UsageErrors) {
  Workdir w("usage");
  EXPECT_EQ(w.run(""), 1);
  EXPECT_EQ(w.run("frobnicate"), 1);
  EXPECT_EQ(w.run_cfg("synth", "--lambda 1.5"), 1);
  EXPECT_EQ(w.run_cfg("synth", "--per-pair-k -2"), 1);
  EXPECT_EQ(w.run_cfg("eval", "--task scene"), 1);
  EXPECT_EQ(w.run("synth --config " + (w.root / "missing.json").string()), 1);
}

TEST(Cli, SynthIsByteStable) {
  Workdir w("synth");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  const auto first = w.read("data/train.features") + w.read("data/train.annotations") +
                     w.read("data/test.annotations") + w.read("data/embeddings.txt");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  const auto second = w.read("data/train.features") + w.read("data/train.annotations") +
                      w.read("data/test.annotations") + w.read("data/embeddings.txt");
  EXPECT_EQ(first, second);

  const auto manifest = w.read("data/manifest.json");
  EXPECT_NE(manifest.find("\"n_images\": 8"), std::string::npos) << manifest;
  EXPECT_NE(manifest.find("\"n_test_images\": 2"), std::string::npos);
  EXPECT_EQ(avr::load_annotations((w.root / "data/train.annotations").string()).images.size(), 8u);
  EXPECT_EQ(avr::load_annotations((w.root / "data/test.annotations").string()).images.size(), 2u);

  ASSERT_EQ(w.run_cfg("synth", "--seed 6"), 0);
  EXPECT_NE(w.read("data/train.annotations"), second.substr(w.read("data/train.features").size()));

  auto cfg = w.read("config.json");
  cfg.replace(cfg.find("\"n_images\": 8"), 13, "\"n_images\": 10");
  avr::io::write_file(w.config().string(), cfg);
  ASSERT_EQ(w.run_cfg("synth"), 0);
  const auto ten = w.read("data/manifest.json");
  EXPECT_NE(ten.find("\"n_images\": 10"), std::string::npos) << ten;
  EXPECT_NE(ten.find("\"num_objects\": 6"), std::string::npos);
  EXPECT_NE(ten.find("\"num_predicates\": 4"), std::string::npos);
}

TEST(Cli, DataErrors) {
  Workdir w("data");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  // truncated feature bundle
  const auto bytes = w.read("data/train.features");
  avr::io::write_file((w.root / "data/train.features").string(), bytes.substr(0, bytes.size() / 2));
  EXPECT_EQ(w.run_cfg("train"), 2);
  // missing annotations
  fs::remove(w.root / "data/train.annotations");
  EXPECT_EQ(w.run_cfg("build-prior"), 2);
}

TEST(Cli, UnwritableOutput) {
  Workdir w("unwritable");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  // a regular file where the run directory should be
  avr::io::write_file((w.root / "run").string(), "x");
  EXPECT_NE(w.run_cfg("build-prior"), 0);
}

TEST(Cli, LambdaZeroPriorIsFrequencyTable) {
  Workdir w("lambda0");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  ASSERT_EQ(w.run_cfg("build-prior", "--lambda 0"), 0);
  const auto prior = avr::load_prior((w.root / "run/prior.txt").string());
  const auto d0 = avr::build_d0(avr::load_annotations((w.root / "data/train.annotations").string())).d0;
  ASSERT_EQ(prior.d_inf.rows(), d0.rows());
  ASSERT_EQ(prior.d_inf.cols(), d0.cols());
  for (std::size_t i = 0; i < d0.size(); ++i) {
    EXPECT_NEAR(prior.d_inf.values()[i], d0.values()[i], 1e-12);
  }
}

// Dense Gauss-Jordan solve of D (I - lambda M) = (1 - lambda) D0.
avr::Matrix dense_fixed_point(const avr::Matrix& d0, const avr::Matrix& m, double lambda) {
  const std::size_t n = m.rows();
  // A^T X^T = B^T with A = I - lambda M
  std::vector<std::vector<double>> a(n, std::vector<double>(n + d0.rows()));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a[i][j] = (i == j ? 1.0 : 0.0) - lambda * m(j, i);
    for (std::size_t r = 0; r < d0.rows(); ++r) a[i][n + r] = (1.0 - lambda) * d0(r, i);
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < a[r].size(); ++k) a[r][k] -= f * a[c][k];
    }
  }
  avr::Matrix out(d0.rows(), n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < d0.rows(); ++r) out(r, i) = a[i][n + r] / a[i][i];
  }
  return out;
}

TEST(Cli, PriorMatchesSmallSolveAndIsByteStable) {
  Workdir w("prior");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  ASSERT_EQ(w.run_cfg("build-prior"), 0);
  const auto first = w.read("run/prior.txt");
  ASSERT_EQ(w.run_cfg("build-prior"), 0);
  EXPECT_EQ(w.read("run/prior.txt"), first);
  EXPECT_NE(w.read("out.log").find("max|row_sum-1|"), std::string::npos);

  const auto ds = avr::load_annotations((w.root / "data/train.annotations").string());
  const auto emb = avr::load_embeddings((w.root / "data/embeddings.txt").string(), ds.vocab);
  const auto prior = avr::load_prior((w.root / "run/prior.txt").string());
  EXPECT_EQ(prior.lambda, 0.5);
  const auto expect = dense_fixed_point(avr::build_d0(ds).d0, avr::build_m(emb, ds.vocab, 20).m.to_dense(), 0.5);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    EXPECT_NEAR(prior.d_inf.values()[i], expect.values()[i], 1e-12);
  }
}

TEST(Cli, AttentionIgnoredForPredicateDetection) {
  Workdir w("predatt");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  ASSERT_EQ(w.run_cfg("train"), 0);
  ASSERT_EQ(w.run_cfg("eval", "--task predicate --mode baseline"), 0);
  const auto baseline = w.read("run/report.tsv");
  ASSERT_EQ(w.run_cfg("eval", "--task predicate --mode attention"), 0);
  EXPECT_NE(w.read("out.log").find("warning"), std::string::npos) << w.read("out.log");
  EXPECT_EQ(w.read("run/report.tsv"), baseline);
}

TEST(Cli, TrainingLossDecreases) {
  Workdir w("loss");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  ASSERT_EQ(w.run_cfg("train", "--epochs 10"), 0);
  std::istringstream log(w.read("out.log"));
  std::string line;
  std::vector<double> losses;
  while (std::getline(log, line)) {
    const auto at = line.rfind(" loss=");
    if (line.rfind("epoch ", 0) == 0 && at != std::string::npos) losses.push_back(std::stod(line.substr(at + 6)));
  }
  ASSERT_EQ(losses.size(), 10u);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Cli, ZeroEpochCheckpointLoads) {
  Workdir w("epochs0");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  ASSERT_EQ(w.run_cfg("train", "--epochs 0"), 0);
  const auto ckpt = avr::load_checkpoint((w.root / "run/model.ckpt").string());
  const auto model = avr::RelationshipModel::from_checkpoint(ckpt);
  EXPECT_EQ(model.params, ckpt.params);
  EXPECT_EQ(ckpt.metadata.at("epochs"), "0");
}

TEST(Cli, EchoedGroundTruthScoresFullRecall) {
  Workdir w("echo");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  const auto test = avr::load_annotations((w.root / "data/test.annotations").string());
  for (const char* task : {"predicate", "phrase", "relationship"}) {
    avr::PredictionFile file{task, avr::ScoringMode{}, 1, {}};
    for (const auto& img : test.images) file.images.push_back(avr::echo_ground_truth(img));
    const auto path = (w.root / "echo.tsv").string();
    avr::io::write_file(path, avr::format_predictions(file, test.vocab));
    ASSERT_EQ(w.run_cfg("eval", std::string("--task ") + task + " --predictions-in " + path), 0)
        << w.read("out.log");
    std::istringstream report(w.read("run/report.tsv"));
    std::string line;
    std::getline(report, line);
    EXPECT_EQ(line, "task\tK\tN\trecall\tmatched\ttotal");
    while (std::getline(report, line)) EXPECT_NE(line.find("\t1.0000\t"), std::string::npos) << line;
  }
}

TEST(Cli, FullPipelineAndAblations) {
  Workdir w("full", R"(, "inference": {"task": "relationship"})");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  ASSERT_EQ(w.run_cfg("build-prior"), 0);
  ASSERT_EQ(w.run_cfg("train"), 0) << w.read("out.log");
  EXPECT_NE(w.read("out.log").find("epoch 2"), std::string::npos);
  std::string reports;
  for (const char* mode : {"baseline", "prior", "attention", "prior+attention"}) {
    ASSERT_EQ(w.run_cfg("eval", std::string("--mode ") + mode), 0) << mode << w.read("out.log");
    const auto preds = w.read("run/predictions.tsv");
    EXPECT_FALSE(preds.empty());
    reports += w.read("run/report.tsv");
  }
  // the same commands again reproduce every byte
  ASSERT_EQ(w.run_cfg("eval", "--mode prior+attention"), 0);
  const auto once = w.read("run/predictions.tsv");
  ASSERT_EQ(w.run_cfg("train"), 0);
  ASSERT_EQ(w.run_cfg("eval", "--mode prior+attention"), 0);
  EXPECT_EQ(w.read("run/predictions.tsv"), once);
}

TEST(Cli, PriorFromDifferentVocabularyIsRejected) {
  Workdir w("vocab");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  ASSERT_EQ(w.run_cfg("build-prior"), 0);
  ASSERT_EQ(w.run_cfg("train", "--epochs 0"), 0);
  // regenerate data with a different vocabulary size, keep the old prior and model
  auto cfg = w.read("config.json");
  cfg.replace(cfg.find("\"n_images\": 8"), 13, "\"n_images\": 8, \"num_objects\": 7");
  avr::io::write_file(w.config().string(), cfg);
  ASSERT_EQ(w.run_cfg("synth"), 0);
  EXPECT_EQ(w.run_cfg("eval", "--mode prior"), 2);
}

TEST(Cli, GoldenReport) {
  Workdir w("golden");
  ASSERT_EQ(w.run_cfg("synth"), 0);
  ASSERT_EQ(w.run_cfg("build-prior"), 0);
  ASSERT_EQ(w.run_cfg("train"), 0);
  ASSERT_EQ(w.run_cfg("eval", "--mode prior"), 0);
  const auto report = w.read("run/report.tsv");
  const std::string golden_path = std::string(AVR_GOLDEN_DIR) + "/report.tsv";
  if (std::getenv("AVR_UPDATE_GOLDEN")) avr::io::write_file(golden_path, report);
  EXPECT_EQ(report, avr::io::read_file(golden_path));
}
