#include "avr/pipeline.hpp"

#include <filesystem>
#include <ostream>
#include <set>
#include <stdexcept>

#include "avr/error.hpp"
#include "avr/io_util.hpp"
#include "json.hpp"

namespace avr {

namespace {

using json = nlohmann::json;

/// Reads the keys of one JSON object section into fields, rejecting keys the
/// config does not know.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw std::invalid_argument("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  Section& field(const char* key, T& out) {
    known_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) {
      try {
        out = it->get<T>();
      } catch (const json::exception&) {
        throw std::invalid_argument("config key '" + name_ + "." + key + "' has the wrong type");
      }
    }
    return *this;
  }

  Section& optional_real(const char* key, std::optional<double>& out) {
    known_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) {
      if (it->is_null()) {
        out.reset();
      } else if (it->is_number()) {
        out = it->get<double>();
      } else {
        throw std::invalid_argument("config key '" + name_ + "." + key + "' must be a number");
      }
    }
    return *this;
  }

  Section& section(const char* key) {
    known_.insert(key);
    return *this;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!known_.count(key)) {
        throw std::invalid_argument("unknown config key '" + (name_.empty() ? "" : name_ + ".") +
                                    key + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> known_;
};

const json& sub(const json& j, const char* key) {
  static const json empty = json::object();
  auto it = j.find(key);
  return it == j.end() ? empty : *it;
}

void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  if (ec) {
    throw DataError("cannot create directory '" + parent.string() + "': " + ec.message());
  }
}

void write_output(const std::string& path, std::string_view contents) {
  ensure_parent(path);
  io::write_file(path, contents);
}

struct EvalData {
  Dataset dataset;
  FeatureBundle features;
  EmbeddingTable embeddings;
};

EvalData load_split(const RunConfig& config, bool test_split) {
  const auto& ann = test_split ? config.paths.test_annotations : config.paths.annotations;
  const auto& feat = test_split ? config.paths.test_features : config.paths.features;
  EvalData data{load_annotations(ann), {}, {}};
  data.features = load_features(feat);
  data.embeddings = load_embeddings(config.paths.embeddings, data.dataset.vocab);
  return data;
}

void check_vocab_hash(const Checkpoint& ckpt, const Vocabulary& vocab) {
  auto it = ckpt.metadata.find("vocab_hash");
  if (it == ckpt.metadata.end()) {
    throw DataError("checkpoint carries no vocabulary hash");
  }
  if (it->second != io::hex64(vocab.hash())) {
    throw DataError("checkpoint vocabulary hash " + it->second +
                    " does not match the dataset's " + io::hex64(vocab.hash()));
  }
}

}  // namespace

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["paths"] = {{"annotations", paths.annotations},
                {"features", paths.features},
                {"test_annotations", paths.test_annotations},
                {"test_features", paths.test_features},
                {"embeddings", paths.embeddings},
                {"manifest", paths.manifest},
                {"checkpoint", paths.checkpoint},
                {"prior", paths.prior},
                {"predictions", paths.predictions},
                {"report", paths.report},
                {"diagnostics", paths.diagnostics}};
  j["synth"] = {{"rule", synth.rule},
                {"n_images", synth.n_images},
                {"n_test_images", synth.n_test_images},
                {"num_objects", synth.num_objects},
                {"num_predicates", synth.num_predicates},
                {"visual_dim", synth.visual_dim},
                {"global_dim", synth.global_dim},
                {"embedding_dim", synth.embedding_dim},
                {"min_objects", synth.min_objects},
                {"max_objects", synth.max_objects},
                {"max_relationships", synth.max_relationships},
                {"annotated_fraction", synth.annotated_fraction},
                {"label_noise", synth.label_noise}};
  j["train"] = {{"learning_rate", train.learning_rate},
                {"momentum", train.momentum},
                {"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"max_attention_pairs", train.max_attention_pairs},
                {"negatives_per_positive", train.negatives_per_positive},
                {"clip_norm", train.clip_norm}};
  j["heads"] = {{"semantic_hidden", heads.semantic_hidden},
                {"semantic_dim", heads.semantic_dim},
                {"attention_hidden", heads.attention_hidden}};
  j["prior"] = {{"lambda", prior.lambda ? json(*prior.lambda) : json(nullptr)},
                {"top_k", prior.top_k},
                {"similarity", prior.similarity},
                {"smoothing", prior.smoothing}};
  j["inference"] = {{"task", inference.task},
                    {"mode", inference.mode},
                    {"per_pair_k", inference.per_pair_k},
                    {"n_values", inference.n_values},
                    {"iou_threshold", inference.iou_threshold},
                    {"max_detections", inference.max_detections},
                    {"bypass_zero_prior_rows", inference.bypass_zero_prior_rows},
                    {"aggregation", inference.aggregation},
                    {"split", inference.split}};
  return j.dump(2);
}

std::string RunConfig::hash() const { return io::hex64(io::fnv1a64(to_json())); }

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section(j, "")
      .field("seed", c.seed)
      .section("paths")
      .section("synth")
      .section("train")
      .section("heads")
      .section("prior")
      .section("inference")
      .finish();
  Section(sub(j, "paths"), "paths")
      .field("annotations", c.paths.annotations)
      .field("features", c.paths.features)
      .field("test_annotations", c.paths.test_annotations)
      .field("test_features", c.paths.test_features)
      .field("embeddings", c.paths.embeddings)
      .field("manifest", c.paths.manifest)
      .field("checkpoint", c.paths.checkpoint)
      .field("prior", c.paths.prior)
      .field("predictions", c.paths.predictions)
      .field("report", c.paths.report)
      .field("diagnostics", c.paths.diagnostics)
      .finish();
  Section(sub(j, "synth"), "synth")
      .field("rule", c.synth.rule)
      .field("n_images", c.synth.n_images)
      .field("n_test_images", c.synth.n_test_images)
      .field("num_objects", c.synth.num_objects)
      .field("num_predicates", c.synth.num_predicates)
      .field("visual_dim", c.synth.visual_dim)
      .field("global_dim", c.synth.global_dim)
      .field("embedding_dim", c.synth.embedding_dim)
      .field("min_objects", c.synth.min_objects)
      .field("max_objects", c.synth.max_objects)
      .field("max_relationships", c.synth.max_relationships)
      .field("annotated_fraction", c.synth.annotated_fraction)
      .field("label_noise", c.synth.label_noise)
      .finish();
  Section(sub(j, "train"), "train")
      .field("learning_rate", c.train.learning_rate)
      .field("momentum", c.train.momentum)
      .field("epochs", c.train.epochs)
      .field("batch_size", c.train.batch_size)
      .field("max_attention_pairs", c.train.max_attention_pairs)
      .field("negatives_per_positive", c.train.negatives_per_positive)
      .field("clip_norm", c.train.clip_norm)
      .finish();
  Section(sub(j, "heads"), "heads")
      .field("semantic_hidden", c.heads.semantic_hidden)
      .field("semantic_dim", c.heads.semantic_dim)
      .field("attention_hidden", c.heads.attention_hidden)
      .finish();
  Section(sub(j, "prior"), "prior")
      .optional_real("lambda", c.prior.lambda)
      .field("top_k", c.prior.top_k)
      .field("similarity", c.prior.similarity)
      .field("smoothing", c.prior.smoothing)
      .finish();
  Section(sub(j, "inference"), "inference")
      .field("task", c.inference.task)
      .field("mode", c.inference.mode)
      .field("per_pair_k", c.inference.per_pair_k)
      .field("n_values", c.inference.n_values)
      .field("iou_threshold", c.inference.iou_threshold)
      .field("max_detections", c.inference.max_detections)
      .field("bypass_zero_prior_rows", c.inference.bypass_zero_prior_rows)
      .field("aggregation", c.inference.aggregation)
      .field("split", c.inference.split)
      .finish();
  validate_config(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const DataError& e) {
    throw std::invalid_argument(e.what());
  }
  return parse_config(text);
}

void validate_config(const RunConfig& c) {
  parse_synth_rule(c.synth.rule);
  parse_task(c.inference.task);
  parse_mode(c.inference.mode);
  if (c.prior.lambda && !(*c.prior.lambda >= 0.0 && *c.prior.lambda < 1.0)) {
    throw std::invalid_argument("prior.lambda must lie in [0, 1)");
  }
  if (c.prior.similarity != "product" && c.prior.similarity != "mean") {
    throw std::invalid_argument("prior.similarity must be 'product' or 'mean'");
  }
  if (c.inference.per_pair_k < 1) throw std::invalid_argument("per_pair_k must be at least 1");
  if (c.inference.aggregation != "micro" && c.inference.aggregation != "macro") {
    throw std::invalid_argument("inference.aggregation must be 'micro' or 'macro'");
  }
  if (c.inference.split != "test" && c.inference.split != "train") {
    throw std::invalid_argument("inference.split must be 'test' or 'train'");
  }
  if (c.train.negatives_per_positive < 0.0) {
    throw std::invalid_argument("train.negatives_per_positive must be non-negative");
  }
  if (c.train.clip_norm < 0.0) throw std::invalid_argument("train.clip_norm must be non-negative");
  if (c.train.batch_size < 1) throw std::invalid_argument("train.batch_size must be at least 1");
  if (!(c.train.learning_rate > 0.0)) throw std::invalid_argument("train.learning_rate must be positive");
  if (c.train.momentum < 0.0 || c.train.momentum >= 1.0) {
    throw std::invalid_argument("train.momentum must lie in [0, 1)");
  }
  eval_config(c);
}

SynthConfig synth_config(const RunConfig& c) {
  SynthConfig s;
  s.seed = c.seed;
  s.n_images = c.synth.n_images + c.synth.n_test_images;
  s.num_objects = c.synth.num_objects;
  s.num_predicates = c.synth.num_predicates;
  s.rule = parse_synth_rule(c.synth.rule);
  s.visual_dim = c.synth.visual_dim;
  s.global_dim = c.synth.global_dim;
  s.embedding_dim = c.synth.embedding_dim;
  s.min_objects_per_image = c.synth.min_objects;
  s.max_objects_per_image = c.synth.max_objects;
  s.max_relationships = c.synth.max_relationships;
  s.annotated_fraction = c.synth.annotated_fraction;
  s.label_noise = c.synth.label_noise;
  return s;
}

TrainOptions train_options(const RunConfig& c) {
  TrainOptions t;
  t.learning_rate = c.train.learning_rate;
  t.momentum = c.train.momentum;
  t.epochs = c.train.epochs;
  t.batch_size = c.train.batch_size;
  t.max_attention_pairs = c.train.max_attention_pairs;
  t.negatives_per_positive = c.train.negatives_per_positive;
  t.clip_norm = c.train.clip_norm;
  t.seed = c.seed;
  return t;
}

PriorOptions prior_options(const RunConfig& c, const Vocabulary& vocab) {
  PriorOptions p;
  p.lambda = c.prior.lambda.value_or(default_lambda(vocab.num_objects(), vocab.num_predicates()));
  p.top_k = c.prior.top_k;
  p.similarity = c.prior.similarity == "mean" ? PairSimilarity::kMean : PairSimilarity::kProduct;
  p.smoothing = c.prior.smoothing;
  return p;
}

InferenceOptions inference_options(const RunConfig& c) {
  InferenceOptions o;
  o.mode = parse_mode(c.inference.mode);
  o.per_pair_k = c.inference.per_pair_k;
  o.max_detections = c.inference.max_detections;
  o.bypass_zero_prior_rows = c.inference.bypass_zero_prior_rows;
  return o;
}

EvalConfig eval_config(const RunConfig& c) {
  EvalConfig e;
  e.task = parse_task(c.inference.task);
  e.n_values = c.inference.n_values;
  e.per_pair_k = c.inference.per_pair_k;
  e.iou_threshold = c.inference.iou_threshold;
  e.aggregation = c.inference.aggregation == "macro" ? Aggregation::kMacro : Aggregation::kMicro;
  if (e.n_values.empty()) throw std::invalid_argument("inference.n_values must not be empty");
  for (std::size_t i = 0; i < e.n_values.size(); ++i) {
    if (e.n_values[i] < 1 || (i > 0 && e.n_values[i] <= e.n_values[i - 1])) {
      throw std::invalid_argument("inference.n_values must be positive and strictly ascending");
    }
  }
  if (!(e.iou_threshold > 0.0) || e.iou_threshold > 1.0) {
    throw std::invalid_argument("inference.iou_threshold must lie in (0, 1]");
  }
  return e;
}

void cmd_synth(const RunConfig& config, std::ostream& log) {
  const auto data = synth_dataset(synth_config(config));
  auto [train, test] = split_dataset(data, config.synth.n_test_images);

  write_output(config.paths.annotations, format_annotations(train.dataset));
  write_output(config.paths.features, serialize_features(train.features));
  write_output(config.paths.embeddings, format_embeddings(data.embeddings));
  if (config.synth.n_test_images > 0) {
    write_output(config.paths.test_annotations, format_annotations(test.dataset));
    write_output(config.paths.test_features, serialize_features(test.features));
  }

  auto count_rels = [](const Dataset& d) {
    std::size_t n = 0;
    for (const auto& img : d.images) n += img.relationships.size();
    return n;
  };
  json manifest = {{"seed", config.seed},
                   {"rule", config.synth.rule},
                   {"n_images", train.dataset.images.size()},
                   {"n_test_images", test.dataset.images.size()},
                   {"num_objects", data.dataset.vocab.num_objects()},
                   {"num_predicates", data.dataset.vocab.num_predicates()},
                   {"train_relationships", count_rels(train.dataset)},
                   {"test_relationships", count_rels(test.dataset)},
                   {"vocab_hash", io::hex64(data.dataset.vocab.hash())},
                   {"config_hash", config.hash()}};
  write_output(config.paths.manifest, manifest.dump(2) + "\n");
  log << "synth: rule=" << config.synth.rule << " train_images=" << train.dataset.images.size()
      << " test_images=" << test.dataset.images.size() << " N=" << data.dataset.vocab.num_objects()
      << " K=" << data.dataset.vocab.num_predicates() << '\n';
}

PriorModel cmd_build_prior(const RunConfig& config, std::ostream& log) {
  const auto dataset = load_annotations(config.paths.annotations);
  const auto embeddings = load_embeddings(config.paths.embeddings, dataset.vocab);
  const auto options = prior_options(config, dataset.vocab);
  auto model = build_prior(dataset, embeddings, options);
  model.config_hash = config.hash();
  write_output(config.paths.prior, format_prior(model));

  double worst = 0.0;
  std::size_t zero_rows = 0;
  for (std::size_t p = 0; p < model.d_inf.rows(); ++p) {
    if (model.zero_predicate_rows[p]) {
      ++zero_rows;
      continue;
    }
    double sum = 0.0;
    for (double v : model.d_inf.row(p)) sum += v;
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  std::size_t zero_pairs = 0;
  for (bool z : model.similarity.zero_rows) zero_pairs += z;
  log << "build-prior: lambda=" << io::format_double(options.lambda)
      << " top_k=" << options.top_k << " nnz(M)=" << model.similarity.m.nnz()
      << " zero_predicate_rows=" << zero_rows << " zero_pair_rows=" << zero_pairs
      << " max|row_sum-1|=" << io::format_double(worst) << '\n';
  if (worst > 1e-9) {
    throw NumericError("propagated prior rows drift from 1 by " + io::format_double(worst));
  }
  return model;
}

std::vector<EpochStats> cmd_train(const RunConfig& config, std::ostream& log) {
  const auto dataset = load_annotations(config.paths.annotations);
  const auto features = load_features(config.paths.features);
  const auto embeddings = load_embeddings(config.paths.embeddings, dataset.vocab);

  auto model = RelationshipModel::for_data(features, embeddings, dataset.vocab, config.heads);
  model.check_inputs(features, embeddings, dataset.vocab);
  Rng rng(config.seed);
  model.init_params(rng);

  const auto options = train_options(config);
  const auto samples =
      prepare_samples(dataset, features, embeddings, options.max_attention_pairs,
                      options.negatives_per_positive, config.seed);
  auto history = train(model, samples, options, [&](const EpochStats& s) {
    log << "epoch " << s.epoch << " loss_p=" << io::format_double(s.predicate_loss)
        << " loss_a=" << io::format_double(s.attention_loss)
        << " loss=" << io::format_double(s.total()) << '\n';
  });
  log << "train: predicate accuracy " << io::format_double(predicate_accuracy(model, samples))
      << '\n';

  std::map<std::string, std::string> meta{{"vocab_hash", io::hex64(dataset.vocab.hash())},
                                          {"config_hash", config.hash()},
                                          {"config", config.to_json()},
                                          {"epochs", std::to_string(history.size())}};
  if (!history.empty()) {
    meta["final_loss_p"] = io::format_double(history.back().predicate_loss);
    meta["final_loss_a"] = io::format_double(history.back().attention_loss);
  }
  const auto ckpt = model.to_checkpoint(config.seed, std::move(meta));
  write_output(config.paths.checkpoint, serialize_checkpoint(ckpt));
  return history;
}

PredictionFile cmd_infer(const RunConfig& config, std::ostream& log) {
  const auto data = load_split(config, config.inference.split == "test");
  const auto ckpt = load_checkpoint(config.paths.checkpoint);
  check_vocab_hash(ckpt, data.dataset.vocab);
  const auto model = RelationshipModel::from_checkpoint(ckpt);
  model.check_inputs(data.features, data.embeddings, data.dataset.vocab);

  auto options = inference_options(config);
  const Task task = parse_task(config.inference.task);
  if (task == Task::kPredicate && options.mode.attention) {
    log << "warning: attention is not used for predicate detection; factor disabled\n";
    options.mode.attention = false;
  }
  std::optional<PriorModel> prior;
  if (options.mode.prior) {
    prior = load_prior(config.paths.prior);
    if (prior->vocab_hash != data.dataset.vocab.hash()) {
      throw DataError("prior vocabulary hash " + io::hex64(prior->vocab_hash) +
                      " does not match the dataset's " + io::hex64(data.dataset.vocab.hash()));
    }
  }
  const Predictor predictor(model, data.embeddings, data.dataset.vocab,
                            prior ? &*prior : nullptr, options);
  PredictionFile file{task_name(task), options.mode, options.per_pair_k, {}};
  for (const auto& img : data.dataset.images) {
    file.images.push_back(task == Task::kPredicate
                              ? predictor.predicate_detection(img, data.features)
                              : predictor.relationship_detection(img, data.features));
  }
  write_output(config.paths.predictions, format_predictions(file, data.dataset.vocab));
  log << "infer: task=" << file.task << " mode=" << mode_name(file.mode)
      << " images=" << file.images.size() << '\n';
  return file;
}

EvalReport cmd_eval(const RunConfig& config, std::ostream& log,
                    const std::optional<std::string>& predictions_in) {
  const auto eval = eval_config(config);
  PredictionFile file;
  Dataset dataset;
  if (predictions_in) {
    dataset = load_annotations(config.inference.split == "test" ? config.paths.test_annotations
                                                                : config.paths.annotations);
    file = parse_predictions(io::read_file(*predictions_in), dataset.vocab);
    if (file.task != task_name(eval.task)) {
      log << "warning: predictions were made for task '" << file.task << "', evaluating as '"
          << task_name(eval.task) << "'\n";
    }
  } else {
    file = cmd_infer(config, log);
    dataset = load_annotations(config.inference.split == "test" ? config.paths.test_annotations
                                                                : config.paths.annotations);
  }
  const auto report = recall_at_n(file.images, dataset.images, eval);
  write_output(config.paths.report, format_report(report));
  if (!config.paths.diagnostics.empty()) {
    write_output(config.paths.diagnostics, format_diagnostics(report));
  }
  for (const auto& row : report.rows) {
    log << "eval: " << task_name(row.task) << " K=" << row.per_pair_k << " Rec@" << row.n << " = "
        << io::format_double(row.recall) << " (" << row.matched << "/" << row.total << ")\n";
  }
  return report;
}

}  // namespace avr
