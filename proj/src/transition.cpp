#include "eqtime/transition.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "eqtime/error.hpp"
#include "json.hpp"

namespace eqtime {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

TransitionMatrix::TransitionMatrix(TypeVocab vocab, std::vector<std::uint64_t> counts, double alpha)
    : vocab_(std::move(vocab)), counts_(std::move(counts)), alpha_(alpha) {
  const std::size_t k = vocab_.size();
  if (k == 0) throw EstimationError("transition matrix needs at least one type");
  if (counts_.size() != k * k) {
    throw EstimationError("transition counts hold " + std::to_string(counts_.size()) + " entries for " +
                          std::to_string(k) + " types");
  }
  if (!(alpha_ >= 0.0) || !std::isfinite(alpha_)) throw EstimationError("smoothing alpha must be finite and >= 0");
  probs_ = Tensor({k, k}, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uint64_t total = 0;
    for (std::size_t j = 0; j < k; ++j) total += counts_[i * k + j];
    const double denom = static_cast<double>(total) + alpha_ * static_cast<double>(k);
    for (std::size_t j = 0; j < k; ++j) {
      probs_[i * k + j] = denom > 0.0 ? (static_cast<double>(counts_[i * k + j]) + alpha_) / denom
                                      : 1.0 / static_cast<double>(k);
    }
  }
}

TransitionMatrix estimate_transition_matrix(std::span<const PartiallyOrderedSequence> train, const TypeVocab& vocab,
                                            double alpha) {
  if (train.empty()) throw EstimationError("cannot estimate transitions from an empty training set");
  const std::size_t k = vocab.size();
  std::vector<std::uint64_t> counts(k * k, 0);
  for (const auto& seq : train) {
    for (std::size_t t = 0; t + 1 < seq.steps.size(); ++t) {
      const auto& a = seq.steps[t].events;
      const auto& b = seq.steps[t + 1].events;
      if (a.size() != 1 || b.size() != 1) continue;
      const auto from = static_cast<std::size_t>(vocab.id(a[0].type));
      const auto to = static_cast<std::size_t>(vocab.id(b[0].type));
      ++counts[from * k + to];
    }
  }
  return TransitionMatrix(vocab, std::move(counts), alpha);
}

TransitionMatrix estimate_transition_matrix(std::span<const PartiallyOrderedSequence> train, double alpha) {
  if (train.empty()) throw EstimationError("cannot estimate transitions from an empty training set");
  TypeVocab vocab = TypeVocab::from_sequences(train);
  if (vocab.size() <= 1) throw EstimationError("training set holds no event types (K = 0)");
  return estimate_transition_matrix(train, vocab, alpha);
}

namespace {

constexpr const char* kFormatTag = "eqtime-transition-matrix";

json payload_json(const TransitionMatrix& m) {
  json p;
  p["K"] = m.size();
  p["vocab"] = m.vocab().known_labels();
  p["alpha"] = m.alpha();
  p["counts"] = m.counts();
  return p;
}

}  // namespace

std::string TransitionMatrix::serialize() const {
  json doc;
  doc["format"] = kFormatTag;
  doc["version"] = kFormatVersion;
  doc["payload"] = payload_json(*this);
  doc["checksum"] = hex64(fnv1a64(doc["payload"].dump()));
  return doc.dump(1) + "\n";
}

TransitionMatrix TransitionMatrix::deserialize(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw PersistenceError(std::string("transition matrix file is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format") != kFormatTag) throw PersistenceError("not a transition matrix file");
    const int version = doc.at("version").get<int>();
    if (version != kFormatVersion) {
      throw PersistenceError("unsupported transition matrix version " + std::to_string(version));
    }
    const json& payload = doc.at("payload");
    if (hex64(fnv1a64(payload.dump())) != doc.at("checksum").get<std::string>()) {
      throw PersistenceError("transition matrix checksum mismatch");
    }
    TypeVocab vocab(payload.at("vocab").get<std::vector<std::string>>());
    if (payload.at("K").get<std::size_t>() != vocab.size()) throw PersistenceError("transition matrix K disagrees with vocab");
    TransitionMatrix m(std::move(vocab), payload.at("counts").get<std::vector<std::uint64_t>>(),
                       payload.at("alpha").get<double>());
    for (std::size_t i = 0; i < m.size(); ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < m.size(); ++j) row += m.prob(i, j);
      if (std::abs(row - 1.0) > 1e-12) throw PersistenceError("transition matrix row " + std::to_string(i) + " is not stochastic");
    }
    return m;
  } catch (const json::exception& e) {
    throw PersistenceError(std::string("malformed transition matrix file: ") + e.what());
  } catch (const EstimationError& e) {
    throw PersistenceError(std::string("inconsistent transition matrix file: ") + e.what());
  } catch (const ConfigError& e) {
    throw PersistenceError(std::string("inconsistent transition matrix file: ") + e.what());
  }
}

void save_matrix(const std::filesystem::path& path, const TransitionMatrix& matrix) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PersistenceError("cannot write " + path.string());
  out << matrix.serialize();
}

TransitionMatrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistenceError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return TransitionMatrix::deserialize(ss.str());
}

}  // namespace eqtime
