#pragma once

#include <span>
#include <vector>

#include "eqtime/tensor.hpp"

namespace eqtime {

struct F1Report {
  std::vector<double> per_class;
  double macro = 0.0;
};

/// Per-class F1 of thresholded probabilities [B, C] against 0/1 labels, and
/// their unweighted mean. A class with no predicted and no actual positives
/// scores 0.
F1Report f1_multilabel(const Tensor& probs, const Tensor& labels, double threshold = 0.5);

struct PerplexityReport {
  double value = 1.0;
  std::size_t steps = 0;
  std::size_t clamped = 0;  // targets whose probability was raised to kMinProbability
};

inline constexpr double kMinProbability = 1e-12;

/// exp of the mean negative log-probability of the targets over live rows of
/// normalised distributions [.., V].
PerplexityReport perplexity(const Tensor& probs, std::span<const int> targets, const Mask& row_mask);

struct RunComparison {
  double mean_a = 0.0;
  double std_a = 0.0;
  double mean_b = 0.0;
  double std_b = 0.0;
  double t_statistic = 0.0;
  double degrees_of_freedom = 0.0;
  double p_value = 1.0;
};

/// Sample means/standard deviations and the two-sided Welch t-test.
RunComparison compare_runs(std::span<const double> a, std::span<const double> b);

}  // namespace eqtime
