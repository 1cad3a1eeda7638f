#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eqtime/data.hpp"
#include "eqtime/tensor.hpp"

namespace eqtime {

/// Row-stochastic K×K matrix of event-type transition probabilities, indexed
/// [from, to]. Probabilities are always derived from the integer counts:
///   p[i,j] = (c[i,j] + alpha) / (sum_j c[i,j] + alpha*K)
/// and a row with no counts at alpha = 0 is uniform.
class TransitionMatrix {
 public:
  static constexpr int kFormatVersion = 1;

  TransitionMatrix(TypeVocab vocab, std::vector<std::uint64_t> counts, double alpha);

  std::size_t size() const { return vocab_.size(); }
  const TypeVocab& vocab() const { return vocab_; }
  double alpha() const { return alpha_; }
  std::uint64_t count(std::size_t from, std::size_t to) const { return counts_[from * size() + to]; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  double prob(std::size_t from, std::size_t to) const { return probs_[from * size() + to]; }
  const Tensor& probs() const { return probs_; }

  std::string serialize() const;
  static TransitionMatrix deserialize(const std::string& text);

  bool operator==(const TransitionMatrix& other) const {
    return vocab_ == other.vocab_ && counts_ == other.counts_ && alpha_ == other.alpha_ && probs_ == other.probs_;
  }

 private:
  TypeVocab vocab_;
  std::vector<std::uint64_t> counts_;
  double alpha_ = 0.0;
  Tensor probs_;
};

/// Counts transitions between adjacent steps that are both singletons; any
/// adjacency touching a multi-event step is skipped because its internal
/// order is unknown.
TransitionMatrix estimate_transition_matrix(std::span<const PartiallyOrderedSequence> train, const TypeVocab& vocab,
                                            double alpha);
/// As above with the vocabulary built from `train`.
TransitionMatrix estimate_transition_matrix(std::span<const PartiallyOrderedSequence> train, double alpha);

void save_matrix(const std::filesystem::path& path, const TransitionMatrix& matrix);
TransitionMatrix load_matrix(const std::filesystem::path& path);

/// 64-bit FNV-1a, used for file checksums and config fingerprints.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace eqtime
