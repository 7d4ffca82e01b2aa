// avr: command-line driver for the relationship pipeline.
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "avr/error.hpp"
#include "avr/pipeline.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<int> per_pair_k;
  std::optional<std::string> task;
  std::optional<std::string> mode;
  std::optional<int> epochs;
  std::optional<std::string> predictions_in;
};

avr::RunConfig resolve(const Overrides& o) {
  avr::RunConfig c = o.config_path.empty() ? avr::RunConfig{} : avr::load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.lambda) c.prior.lambda = *o.lambda;
  if (o.per_pair_k) {
    if (*o.per_pair_k < 1) throw std::invalid_argument("--per-pair-k must be at least 1");
    c.inference.per_pair_k = static_cast<std::size_t>(*o.per_pair_k);
  }
  if (o.task) c.inference.task = *o.task;
  if (o.mode) c.inference.mode = *o.mode;
  if (o.epochs) {
    if (*o.epochs < 0) throw std::invalid_argument("--epochs must be non-negative");
    c.train.epochs = static_cast<std::size_t>(*o.epochs);
  }
  avr::validate_config(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual relationship detection with attention and a random-walk prior"};
  app.require_subcommand(1);
  Overrides o;
  std::string command;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run config");
    sub->add_option("--seed", o.seed, "override seed");
    sub->add_option("--lambda", o.lambda, "override random-walk balance lambda");
    sub->add_option("--per-pair-k", o.per_pair_k, "override predicates kept per pair");
    sub->add_option("--task", o.task, "predicate | phrase | relationship");
    sub->add_option("--mode", o.mode, "baseline | prior | attention | prior+attention");
    sub->add_option("--epochs", o.epochs, "override training epochs");
    sub->callback([&command, sub] { command = sub->get_name(); });
  };
  add_common(app.add_subcommand("synth", "write a synthetic dataset"));
  add_common(app.add_subcommand("build-prior", "build the random-walk prior"));
  add_common(app.add_subcommand("train", "train both heads jointly"));
  add_common(app.add_subcommand("infer", "write ranked predictions"));
  auto* eval = app.add_subcommand("eval", "compute Rec@N");
  add_common(eval);
  eval->add_option("--predictions-in", o.predictions_in,
                   "score an existing predictions file instead of running inference");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const auto config = resolve(o);
    if (command == "synth") {
      avr::cmd_synth(config, std::cerr);
    } else if (command == "build-prior") {
      avr::cmd_build_prior(config, std::cerr);
    } else if (command == "train") {
      avr::cmd_train(config, std::cerr);
    } else if (command == "infer") {
      avr::cmd_infer(config, std::cerr);
    } else {
      avr::cmd_eval(config, std::cerr, o.predictions_in);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const avr::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
