#include "eqtime/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "eqtime/error.hpp"

namespace eqtime {

void SyntheticConfig::validate() const {
  if (types < 1) throw ConfigError("synthetic: types must be >= 1");
  if (features < 1) throw ConfigError("synthetic: features must be >= 1");
  if (sequences < 3) throw ConfigError("synthetic: need at least 3 sequences to split");
  if (min_events < 2 || max_events < min_events) throw ConfigError("synthetic: need 2 <= min_events <= max_events");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("synthetic: tau must be finite and >= 0");
  if (!(burst >= 0.0 && burst < 1.0)) throw ConfigError("synthetic: burst must lie in [0, 1)");
  if (!(chain_concentration > 0.0)) throw ConfigError("synthetic: chain_concentration must be > 0");
  if (!(noise >= 0.0) || !(mean_scale >= 0.0)) throw ConfigError("synthetic: noise and mean_scale must be >= 0");
  if (task == TaskKind::kMultilabel && (classes < 1 || pairs_per_class < 1)) {
    throw ConfigError("synthetic: classes and pairs_per_class must be >= 1");
  }
}

namespace {

struct Generator {
  const SyntheticConfig& cfg;
  Rng rng;
  SyntheticData out;
  std::vector<std::vector<double>> class_weights;  // classes x M

  explicit Generator(const SyntheticConfig& c) : cfg(c), rng(c.seed) {}

  void build_chain() {
    const std::size_t k = cfg.types;
    for (std::size_t i = 0; i < k; ++i) out.type_labels.push_back("e" + std::to_string(i));
    std::gamma_distribution<double> gamma(cfg.chain_concentration, 1.0);
    out.chain.assign(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      double sum = 0.0;
      while (sum <= 0.0) {
        sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += (out.chain[i * k + j] = gamma(rng));
      }
      for (std::size_t j = 0; j < k; ++j) out.chain[i * k + j] /= sum;
    }
  }

  // Types 2p and 2p+1 get opposite means, so their average is uninformative.
  void build_means() {
    std::normal_distribution<double> g(0.0, 1.0);
    out.type_means.assign(cfg.types, std::vector<double>(cfg.features));
    for (std::size_t t = 0; t < cfg.types; t += 2) {
      for (std::size_t d = 0; d < cfg.features; ++d) out.type_means[t][d] = cfg.mean_scale * g(rng);
      if (t + 1 < cfg.types)
        for (std::size_t d = 0; d < cfg.features; ++d) out.type_means[t + 1][d] = -out.type_means[t][d];
    }
  }

  void build_targets() {
    if (cfg.task != TaskKind::kMultilabel) return;
    const std::size_t k = cfg.types;
    std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.features)));
    std::uniform_int_distribution<std::size_t> type(0, k - 1);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      std::vector<double> w(cfg.features);
      for (double& v : w) v = g(rng);
      class_weights.push_back(std::move(w));
      std::vector<double> rewards(k * k, 0.0);
      for (std::size_t p = 0; p < cfg.pairs_per_class; ++p) {
        const std::size_t a = type(rng), b = type(rng);
        rewards[a * k + b] = rewards[b * k + a] = 1.0;
      }
      out.pair_rewards.push_back(std::move(rewards));
    }
  }

  std::size_t next_type(std::size_t from) {
    std::discrete_distribution<std::size_t> pick(out.chain.begin() + static_cast<std::ptrdiff_t>(from * cfg.types),
                                                 out.chain.begin() + static_cast<std::ptrdiff_t>((from + 1) * cfg.types));
    return pick(rng);
  }

  struct Stream {
    std::vector<EventRecord> records;
    std::vector<std::size_t> types;
  };

  Stream stream(std::size_t length) {
    std::uniform_int_distribution<std::size_t> first(0, cfg.types - 1);
    std::bernoulli_distribution burst(cfg.burst);
    std::uniform_real_distribution<double> short_gap(0.05, 0.95);
    std::exponential_distribution<double> long_gap(1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    Stream s;
    double time = 0.0;
    std::size_t type = first(rng);
    for (std::size_t i = 0; i < length; ++i) {
      if (i > 0) {
        type = next_type(type);
        time += burst(rng) ? short_gap(rng) : 1.0 + long_gap(rng);
      }
      EventRecord e{time, out.type_labels[type], std::vector<double>(cfg.features)};
      for (std::size_t d = 0; d < cfg.features; ++d) e.features[d] = out.type_means[type][d] + cfg.noise * g(rng);
      s.records.push_back(std::move(e));
      s.types.push_back(type);
    }
    return s;
  }

  std::vector<double> target_values(const Stream& s) const {
    const std::size_t k = cfg.types;
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.records.size()));
    std::vector<double> values(cfg.classes, 0.0);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      double pairs = 0.0, linear = 0.0;
      for (std::size_t i = 0; i + 1 < s.types.size(); ++i) pairs += out.pair_rewards[c][s.types[i] * k + s.types[i + 1]];
      for (const auto& e : s.records)
        for (std::size_t d = 0; d < cfg.features; ++d) linear += class_weights[c][d] * e.features[d];
      values[c] = cfg.pair_weight * pairs + cfg.linear_weight * scale * linear;
    }
    return values;
  }

  int type_index(const EventRecord& e) const { return std::stoi(e.type.substr(1)); }

  // Steps up to the last one, each targeted with the type of the first event that follows it.
  PartiallyOrderedSequence next_token(std::string id, std::vector<TimeStep> steps, std::size_t max_steps) const {
    PartiallyOrderedSequence seq;
    seq.id = std::move(id);
    for (std::size_t t = 0; t + 1 < steps.size(); ++t) seq.tokens.push_back(type_index(steps[t + 1].events.front()));
    steps.pop_back();
    if (max_steps > 0 && steps.size() > max_steps) {
      const auto drop = static_cast<std::ptrdiff_t>(steps.size() - max_steps);
      steps.erase(steps.begin(), steps.begin() + drop);
      seq.tokens.erase(seq.tokens.begin(), seq.tokens.begin() + drop);
    }
    seq.steps = std::move(steps);
    return seq;
  }

  void run() {
    build_chain();
    build_means();
    build_targets();

    Dataset ordered, binned;
    ordered.schema.features = binned.schema.features = cfg.features;
    if (cfg.task == TaskKind::kMultilabel) {
      ordered.schema.classes = binned.schema.classes = cfg.classes;
    } else {
      ordered.schema.vocab = binned.schema.vocab = cfg.types;
    }
    std::uniform_int_distribution<std::size_t> length(cfg.min_events, cfg.max_events);
    for (std::size_t n = 0; n < cfg.sequences; ++n) {
      char id[32];
      std::snprintf(id, sizeof id, "syn%06zu", n);
      const Stream s = stream(length(rng));
      auto singles = bin_event_stream(s.records, 0.0, 0, 0);
      if (cfg.task == TaskKind::kMultilabel) {
        PartiallyOrderedSequence o{id, std::move(singles), {}, {}, target_values(s)};
        PartiallyOrderedSequence b = o;
        b.steps = bin_event_stream(s.records, cfg.tau, cfg.max_steps, cfg.max_set);
        ordered.sequences.push_back(std::move(o));
        binned.sequences.push_back(std::move(b));
      } else {
        auto bins = bin_event_stream(s.records, cfg.tau, 0, cfg.max_set);
        if (bins.size() < 2) {
          // A single burst has nothing to predict; split it after its first event.
          TimeStep tail{bins[0].events[1].timestamp, {bins[0].events.begin() + 1, bins[0].events.end()}};
          bins[0].events.resize(1);
          bins.push_back(std::move(tail));
        }
        ordered.sequences.push_back(next_token(id, std::move(singles), 0));
        binned.sequences.push_back(next_token(id, std::move(bins), cfg.max_steps));
      }
    }

    out.ordered = split_dataset(ordered, cfg.split_seed);
    out.binned = split_dataset(binned, cfg.split_seed);
    if (cfg.task != TaskKind::kMultilabel) return;

    std::vector<std::vector<double>> train_values;
    for (const auto& s : out.ordered.train) train_values.push_back(s.targets);
    const ThresholdRule rule = ThresholdRule::fit(train_values, SplitRole::kTrain);
    for (DatasetSplit* split : {&out.ordered, &out.binned})
      for (auto* part : {&split->train, &split->validation, &split->test})
        for (auto& s : *part) {
          s.labels = rule.apply(s.targets);
          s.targets.clear();
        }
  }
};

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  Generator g(config);
  g.run();
  return std::move(g.out);
}

}  // namespace eqtime
