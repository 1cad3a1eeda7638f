// eqtime: prepare data, train seed-replicated models, evaluate checkpoints.

#include <cstdint>
#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eqtime/error.hpp"
#include "eqtime/experiment.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size() || item.front() == '-') {
      throw eqtime::ConfigError("--seeds expects comma-separated non-negative integers, got '" + text + "'");
    }
    seeds.push_back(v);
  }
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Classifiers for partially ordered event sequences"};
  app.set_version_flag("--version", std::string("eqtime ") + eqtime::version());
  app.require_subcommand(1);

  std::string config_path;
  double tau = 0.0;
  long long nmax = -1, tmax = -1;
  bool emit_transition = false;
  auto* prepare = app.add_subcommand("prepare", "Bin or generate data, split it and write histogram reports");
  prepare->add_option("--config", config_path, "Experiment config (JSON)")->required();
  prepare->add_option("--tau", tau, "Binning threshold in seconds");
  prepare->add_option("--nmax", nmax, "Maximum events per step (0: no limit)");
  prepare->add_option("--tmax", tmax, "Maximum steps per sequence (0: no limit)");
  prepare->add_flag("--emit-transition-matrix", emit_transition, "Estimate and write the type transition matrix");

  std::string model_name, seeds_text;
  auto* train = app.add_subcommand("train", "Train one model per seed");
  train->add_option("--config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--model", model_name, "avg-lstm|ds-lstm|lstm-lstm|trans-lstm|trans-trans|trans-trans-T");
  train->add_option("--seeds", seeds_text, "Comma-separated seeds, e.g. 1,2,3,4,5");

  std::string checkpoints;
  bool ensemble = false;
  std::vector<std::string> compare;
  auto* eval = app.add_subcommand("eval", "Score checkpoints; optionally ensemble or compare two models");
  eval->add_option("--config", config_path, "Experiment config (JSON)")->required();
  eval->add_option("--checkpoints", checkpoints, "Directory searched recursively for .ckpt files")->required();
  eval->add_flag("--ensemble", ensemble, "Add a row for the probability-averaged ensemble");
  eval->add_option("--compare", compare, "Two model names to compare with Welch's t-test")->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(eqtime::ErrorCategory::kConfiguration);
  }

  try {
    eqtime::ExperimentConfig config = eqtime::ExperimentConfig::load(config_path);
    if (prepare->parsed()) {
      if (prepare->count("--tau")) config.pipeline.tau = tau;
      if (prepare->count("--nmax")) {
        if (nmax < 0) throw eqtime::ConfigError("--nmax must be >= 0");
        config.pipeline.max_events = static_cast<std::size_t>(nmax);
      }
      if (prepare->count("--tmax")) {
        if (tmax < 0) throw eqtime::ConfigError("--tmax must be >= 0");
        config.pipeline.max_steps = static_cast<std::size_t>(tmax);
      }
      const auto summary = eqtime::prepare(config, emit_transition);
      std::cout << summary.report.text;
    } else if (train->parsed()) {
      if (!model_name.empty()) config.model.with_name(model_name);
      if (!seeds_text.empty()) config.seeds = parse_seeds(seeds_text);
      const auto summary = eqtime::train_experiment(config, std::cerr);
      std::cout << summary.report.text;
    } else if (eval->parsed()) {
      eqtime::EvalOptions options;
      options.ensemble = ensemble;
      if (!compare.empty()) options.compare = std::make_pair(compare[0], compare[1]);
      const auto summary = eqtime::evaluate(config, checkpoints, options);
      std::cout << summary.report.text;
    }
  } catch (const eqtime::Error& e) {
    std::cerr << "eqtime: " << eqtime::to_string(e.category()) << " error: " << e.what() << "\n";
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "eqtime: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
