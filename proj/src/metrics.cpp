#include "eqtime/metrics.hpp"

#include <cmath>
#include <limits>

#include <boost/math/distributions/students_t.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include "eqtime/error.hpp"

namespace eqtime {

F1Report f1_multilabel(const Tensor& probs, const Tensor& labels, double threshold) {
  if (probs.shape() != labels.shape() || probs.rank() != 2) {
    throw DimensionError("f1_multilabel: predictions " + shape_string(probs.shape()) + " vs labels " +
                         shape_string(labels.shape()));
  }
  const std::size_t n = probs.dim(0);
  const std::size_t c = probs.dim(1);
  F1Report report;
  report.per_class.assign(c, 0.0);
  boost::multiprecision::cpp_rational sum = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pred = probs[i * c + k] >= threshold;
      const bool truth = labels[i * c + k] > 0.5;
      tp += pred && truth;
      fp += pred && !truth;
      fn += !pred && truth;
    }
    const std::size_t denom = 2 * tp + fp + fn;
    if (denom == 0) continue;
    const boost::multiprecision::cpp_rational f(boost::multiprecision::cpp_int(2 * tp), boost::multiprecision::cpp_int(denom));
    report.per_class[k] = f.convert_to<double>();
    sum += f;
  }
  if (c) report.macro = (sum / boost::multiprecision::cpp_rational(static_cast<long long>(c))).convert_to<double>();
  return report;
}

PerplexityReport perplexity(const Tensor& probs, std::span<const int> targets, const Mask& row_mask) {
  if (probs.rank() == 0) throw DimensionError("perplexity: scalar input");
  const std::size_t v = probs.dim(probs.rank() - 1);
  const std::size_t rows = probs.size() / v;
  if (targets.size() != rows || row_mask.size() != rows) {
    throw DimensionError("perplexity: " + std::to_string(rows) + " rows, " + std::to_string(targets.size()) +
                         " targets, mask of " + std::to_string(row_mask.size()));
  }
  PerplexityReport report;
  double nll = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!row_mask[r]) continue;
    const int y = targets[r];
    if (y < 0 || static_cast<std::size_t>(y) >= v) throw DimensionError("perplexity: target " + std::to_string(y) + " out of range");
    double p = probs[r * v + static_cast<std::size_t>(y)];
    if (p < kMinProbability) {
      p = kMinProbability;
      ++report.clamped;
    }
    nll -= std::log(p);
    ++report.steps;
  }
  if (report.steps == 0) throw DegenerateRowError("perplexity: no live steps");
  report.value = std::exp(nll / static_cast<double>(report.steps));
  return report;
}

namespace {

void mean_std(std::span<const double> x, double& mean, double& sd) {
  mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  sd = std::sqrt(ss / static_cast<double>(x.size() - 1));
}

}  // namespace

RunComparison compare_runs(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw StatisticsError("comparison needs at least 2 runs per side, got " + std::to_string(a.size()) + " and " +
                          std::to_string(b.size()));
  }
  RunComparison r;
  mean_std(a, r.mean_a, r.std_a);
  mean_std(b, r.mean_b, r.std_b);
  const double va = r.std_a * r.std_a / static_cast<double>(a.size());
  const double vb = r.std_b * r.std_b / static_cast<double>(b.size());
  const double diff = r.mean_a - r.mean_b;
  const double se2 = va + vb;
  if (se2 == 0.0) {
    // Both samples constant: identical means give no evidence, distinct means are certain.
    r.t_statistic = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.degrees_of_freedom = static_cast<double>(a.size() + b.size() - 2);
    r.p_value = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t_statistic = diff / std::sqrt(se2);
  r.degrees_of_freedom =
      se2 * se2 / (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  boost::math::students_t dist(r.degrees_of_freedom);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t_statistic)));
  r.p_value = std::min(1.0, r.p_value);
  return r;
}

}  // namespace eqtime
