#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "mag/error.hpp"

namespace mag {

struct SamplingConfig {
  std::size_t top_k = 50;
  double top_p = 0.95;
  double temperature = 1.0;
};

/// Keeps the k most probable entries, then the smallest descending-probability
/// prefix of those (renormalised) whose mass reaches p, and renormalises.
/// Equal probabilities are ordered by lower index first.
inline std::vector<double> filter_top_k_top_p(const std::vector<double>& probs, std::size_t k = 50, double p = 0.95) {
  if (k < 1) throw UsageError("top-k filter: k must be >= 1");
  if (!(p > 0.0 && p <= 1.0)) throw UsageError("top-p filter: p must lie in (0, 1]");
  if (probs.empty()) throw UsageError("top-k/top-p filter: empty distribution");
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  const std::size_t kept = std::min(k, probs.size());
  double mass = 0.0;
  for (std::size_t i = 0; i < kept; ++i) mass += probs[order[i]];
  if (!(mass > 0.0)) throw NumericError("top-k/top-p filter: no probability mass among the top-k entries");
  std::size_t nucleus = 0;
  double cum = 0.0;
  while (nucleus < kept) {
    cum += probs[order[nucleus]] / mass;
    ++nucleus;
    if (cum >= p) break;
  }
  double z = 0.0;
  for (std::size_t i = 0; i < nucleus; ++i) z += probs[order[i]];
  std::vector<double> out(probs.size(), 0.0);
  for (std::size_t i = 0; i < nucleus; ++i) out[order[i]] = probs[order[i]] / z;
  return out;
}

/// Softmax of `logits / temperature`.
inline std::vector<double> softmax_probs(const double* logits, std::size_t n, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw UsageError("sampling: temperature must be positive");
  const double m = *std::max_element(logits, logits + n);
  std::vector<double> p(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += (p[i] = std::exp((logits[i] - m) / temperature));
  for (auto& v : p) v /= z;
  return p;
}

/// Inverse-CDF draw from a normalised distribution.
inline std::size_t sample_categorical(const std::vector<double>& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double target = u(rng);
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last = i;
    if (target < cum) return i;
  }
  return last;
}

inline std::size_t sample_logits(const double* logits, std::size_t n, const SamplingConfig& cfg, std::mt19937_64& rng) {
  return sample_categorical(filter_top_k_top_p(softmax_probs(logits, n, cfg.temperature), cfg.top_k, cfg.top_p), rng);
}

}  // namespace mag
