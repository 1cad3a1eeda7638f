#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/rational.hpp>

#include "eqtime/data.hpp"

namespace eqtime::testing {

/// `count` streams sharing at most 6 types, each at most 50 steps long;
/// about 30% of steps hold 1 to 3 events.
inline std::vector<PartiallyOrderedSequence> random_streams(std::mt19937_64& rng, std::size_t count) {
  std::uniform_int_distribution<int> types(1, 6), len(1, 50), width(1, 3);
  std::bernoulli_distribution multi(0.3);
  std::vector<PartiallyOrderedSequence> out;
  const int k = types(rng);
  std::uniform_int_distribution<int> type(0, k - 1);
  for (std::size_t i = 0; i < count; ++i) {
    PartiallyOrderedSequence s;
    const int steps = len(rng);
    for (int t = 0; t < steps; ++t) {
      TimeStep ts{static_cast<double>(t), {}};
      const int n = multi(rng) ? width(rng) : 1;
      for (int j = 0; j < n; ++j) ts.events.push_back({static_cast<double>(t), std::string(1, char('A' + type(rng))), {}});
      s.steps.push_back(ts);
    }
    out.push_back(s);
  }
  return out;
}

/// Pair counts keyed by type label, from scratch: walk every sequence and
/// count (a, b) when step t is exactly {a} and step t+1 is exactly {b}.
inline std::map<std::pair<std::string, std::string>, std::uint64_t> brute_pair_counts(
    const std::vector<PartiallyOrderedSequence>& seqs) {
  std::map<std::pair<std::string, std::string>, std::uint64_t> out;
  for (const auto& s : seqs)
    for (std::size_t t = 0; t + 1 < s.steps.size(); ++t)
      if (s.steps[t].events.size() == 1 && s.steps[t + 1].events.size() == 1)
        ++out[{s.steps[t].events[0].type, s.steps[t + 1].events[0].type}];
  return out;
}

/// Macro F1 from per-entry counts in exact rational arithmetic, via
/// precision and recall; the result is the double nearest the exact mean.
inline double brute_macro_f1(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& truth) {
  using Q = boost::rational<long long>;
  const std::size_t c = pred.empty() ? 0 : pred[0].size();
  Q total(0);
  for (std::size_t k = 0; k < c; ++k) {
    long long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i][k] == 1 && truth[i][k] == 1) ++tp;
      if (pred[i][k] == 1 && truth[i][k] == 0) ++fp;
      if (pred[i][k] == 0 && truth[i][k] == 1) ++fn;
    }
    const Q precision = tp + fp > 0 ? Q(tp, tp + fp) : Q(0);
    const Q recall = tp + fn > 0 ? Q(tp, tp + fn) : Q(0);
    if (precision + recall > Q(0)) total += Q(2) * precision * recall / (precision + recall);
  }
  if (c == 0) return 0.0;
  total /= Q(static_cast<long long>(c));
  // Numerator and denominator stay below 2^53, so one division rounds correctly.
  return static_cast<double>(total.numerator()) / static_cast<double>(total.denominator());
}

/// Geometric mean of inverse target probabilities, multiplied out directly.
inline double brute_perplexity(const std::vector<double>& target_probs) {
  long double log_sum = 0.0L;
  for (double p : target_probs) log_sum += std::log(static_cast<long double>(p));
  return static_cast<double>(std::exp(-log_sum / static_cast<long double>(target_probs.size())));
}

/// Two-sided tail of Student's t by numerical integration of its density.
inline double t_two_sided_tail(double t, double df) {
  const double norm = 1.0 / (std::sqrt(df) * boost::math::beta(0.5, df / 2.0));
  auto density = [&](double x) { return norm * std::pow(1.0 + x * x / df, -(df + 1.0) / 2.0); };
  const double central = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(density, 0.0, std::abs(t), 15, 1e-14);
  return 1.0 - 2.0 * central;
}

/// Exact two-sided permutation p-value for the difference of means.
inline double permutation_p_value(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> all = a;
  all.insert(all.end(), b.begin(), b.end());
  const std::size_t n = all.size(), na = a.size();
  auto mean_diff = [&](unsigned mask) {
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < n; ++i) ((mask >> i) & 1u ? sa : sb) += all[i];
    return sa / static_cast<double>(na) - sb / static_cast<double>(n - na);
  };
  unsigned observed_mask = (1u << na) - 1u;
  const double observed = std::abs(mean_diff(observed_mask));
  std::size_t extreme = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != na) continue;
    ++total;
    if (std::abs(mean_diff(mask)) >= observed - 1e-12) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

}  // namespace eqtime::testing
