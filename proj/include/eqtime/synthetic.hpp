#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eqtime/data.hpp"

namespace eqtime {

/// Seeded generator of partially ordered data. Events follow a Markov chain
/// over types, arrive in bursts, and carry type-conditioned Gaussian features.
struct SyntheticConfig {
  TaskKind task = TaskKind::kMultilabel;
  std::size_t types = 6;        // K
  std::size_t features = 8;     // M
  std::size_t sequences = 5000;
  std::size_t min_events = 6;   // events per sequence, inclusive range
  std::size_t max_events = 30;
  double tau = 1.0;             // binning threshold; 0 yields the ordered twin
  std::size_t max_steps = 30;   // T_max of the binned twin, 0 for no limit
  std::size_t max_set = 6;      // N_max of the binned twin, 0 for no limit
  double burst = 0.6;           // chance that the next gap is below one time unit
  double chain_concentration = 0.5;  // Dirichlet concentration of each chain row
  double mean_scale = 1.0;
  double noise = 0.5;
  // Multilabel targets: adjacent-pair rewards plus a linear feature term.
  std::size_t classes = 4;
  std::size_t pairs_per_class = 2;
  double pair_weight = 1.0;
  double linear_weight = 0.25;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 1;

  void validate() const;
};

struct SyntheticData {
  DatasetSplit ordered;
  DatasetSplit binned;
  std::vector<std::string> type_labels;  // generator index -> label
  std::vector<double> chain;             // true K x K transition probabilities, row-major
  std::vector<std::vector<double>> type_means;
  /// Adjacent-pair rewards per class, K x K row-major (multilabel only).
  std::vector<std::vector<double>> pair_rewards;

  double chain_prob(std::size_t from, std::size_t to) const { return chain.at(from * type_labels.size() + to); }
};

/// Emits each sequence as an ordered twin (one event per step) and a binned
/// twin, split identically and with identical targets. Multilabel labels come
/// from the training-split threshold rule; next-token targets are the type of
/// the first event after each step.
SyntheticData generate_synthetic(const SyntheticConfig& config);

}  // namespace eqtime
