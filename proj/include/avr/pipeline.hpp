#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "avr/dataset.hpp"
#include "avr/evaluation.hpp"
#include "avr/inference.hpp"
#include "avr/model.hpp"
#include "avr/prior_graph.hpp"
#include "avr/training.hpp"

namespace avr {

/// Everything a run needs. Loaded from a JSON file; command-line flags
/// override individual fields afterwards.
struct RunConfig {
  std::uint64_t seed = 0;

  struct Paths {
    std::string annotations = "data/train.annotations";
    std::string features = "data/train.features";
    std::string test_annotations = "data/test.annotations";
    std::string test_features = "data/test.features";
    std::string embeddings = "data/embeddings.txt";
    std::string manifest = "data/manifest.json";
    std::string checkpoint = "run/model.ckpt";
    std::string prior = "run/prior.txt";
    std::string predictions = "run/predictions.tsv";
    std::string report = "run/report.tsv";
    /// Empty disables the per-image dump.
    std::string diagnostics;
  } paths;

  struct Synth {
    std::string rule = "spatial-only";
    std::size_t n_images = 200;
    std::size_t n_test_images = 50;
    std::size_t num_objects = 6;
    std::size_t num_predicates = 4;
    std::size_t visual_dim = 32;
    std::size_t global_dim = 16;
    std::size_t embedding_dim = 50;
    std::size_t min_objects = 4;
    std::size_t max_objects = 6;
    std::size_t max_relationships = 8;
    double annotated_fraction = 0.3;
    double label_noise = 0.1;
  } synth;

  struct Train {
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    std::size_t max_attention_pairs = 64;
    double negatives_per_positive = 1.0;
    double clip_norm = 5.0;
  } train;

  HeadSizes heads;

  struct Prior {
    /// Unset picks the vocabulary-size default.
    std::optional<double> lambda;
    std::size_t top_k = 20;
    std::string similarity = "product";
    double smoothing = 0.0;
  } prior;

  struct Inference {
    std::string task = "predicate";
    std::string mode = "baseline";
    std::size_t per_pair_k = 1;
    std::vector<std::size_t> n_values{50, 100};
    double iou_threshold = 0.5;
    std::size_t max_detections = 0;
    bool bypass_zero_prior_rows = false;
    std::string aggregation = "micro";
    /// "test" evaluates the held-out files, "train" the training files.
    std::string split = "test";
  } inference;

  /// Canonical JSON text (sorted keys).
  std::string to_json() const;
  std::string hash() const;
};

/// Unknown keys and ill-typed values throw std::invalid_argument.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
/// Range checks shared by every command.
void validate_config(const RunConfig& config);

SynthConfig synth_config(const RunConfig& config);
TrainOptions train_options(const RunConfig& config);
PriorOptions prior_options(const RunConfig& config, const Vocabulary& vocab);
InferenceOptions inference_options(const RunConfig& config);
EvalConfig eval_config(const RunConfig& config);

/// Writes the synthetic dataset files and the manifest.
void cmd_synth(const RunConfig& config, std::ostream& log);
PriorModel cmd_build_prior(const RunConfig& config, std::ostream& log);
std::vector<EpochStats> cmd_train(const RunConfig& config, std::ostream& log);
PredictionFile cmd_infer(const RunConfig& config, std::ostream& log);
/// Evaluates `predictions_in` when given, otherwise runs inference first.
EvalReport cmd_eval(const RunConfig& config, std::ostream& log,
                    const std::optional<std::string>& predictions_in = std::nullopt);

}  // namespace avr
