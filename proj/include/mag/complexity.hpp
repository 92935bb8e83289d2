#pragma once

// Attention pair counts for token-by-token versus scale-by-scale decoding.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mag/error.hpp"
#include "mag/schedule.hpp"

namespace mag {

enum class Regime { kNodeWise, kScaleWise };

/// Node-wise: step i attends over i positions, for sum i^2 pairs.
/// Scale-wise: the n_k new tokens of scale k attend over the S_k tokens of
/// scales 1..k.
inline std::uint64_t count_attention_pairs(Regime regime, std::size_t n, const ScaleSchedule* schedule = nullptr) {
  if (regime == Regime::kNodeWise) {
    std::uint64_t s = 0;
    for (std::uint64_t i = 1; i <= n; ++i) s += i * i;
    return s;
  }
  if (!schedule) throw UsageError("scale-wise pair count needs a schedule");
  std::uint64_t total = 0, prefix = 0;
  for (std::size_t k = 0; k < schedule->scales(); ++k) {
    prefix += schedule->length(k);
    total += schedule->length(k) * prefix;
  }
  return total;
}

struct CostPoint {
  std::size_t n = 0;
  std::uint64_t node_wise = 0;
  std::uint64_t scale_wise = 0;
  std::size_t scales = 0;
};

struct CostCurve {
  std::size_t growth = 2;
  std::vector<CostPoint> points;
};

/// Scale-wise counts use the geometric schedule 1, a, a^2, ..., N.
inline CostCurve cost_curve(const std::vector<std::size_t>& sizes, std::size_t growth = 2) {
  CostCurve c;
  c.growth = growth;
  for (auto n : sizes) {
    const auto s = build_scale_schedule(n, {1}, growth);
    c.points.push_back({n, count_attention_pairs(Regime::kNodeWise, n), count_attention_pairs(Regime::kScaleWise, n, &s),
                        s.scales()});
  }
  return c;
}

/// Least-squares slope of log(count) against log(N).
inline double fit_scaling_exponent(const std::vector<double>& ns, const std::vector<double>& counts) {
  if (ns.size() != counts.size()) throw DimensionError("scaling fit: size mismatch");
  if (ns.size() < 4) throw UsageError("scaling fit: need at least 4 points");
  double lo = ns.front(), hi = ns.front();
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (!(ns[i] > 0.0) || !(counts[i] > 0.0)) throw ValidationError("scaling fit: counts and sizes must be positive");
    lo = std::min(lo, ns[i]);
    hi = std::max(hi, ns[i]);
  }
  if (hi < 10.0 * lo) throw UsageError("scaling fit: sizes must span at least one decade");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    mx += std::log(ns[i]);
    my += std::log(counts[i]);
  }
  mx /= static_cast<double>(ns.size());
  my /= static_cast<double>(ns.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const double dx = std::log(ns[i]) - mx;
    sxy += dx * (std::log(counts[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

inline std::pair<double, double> fit_scaling_exponents(const CostCurve& c) {
  std::vector<double> ns, node, scale;
  for (const auto& p : c.points) {
    ns.push_back(static_cast<double>(p.n));
    node.push_back(static_cast<double>(p.node_wise));
    scale.push_back(static_cast<double>(p.scale_wise));
  }
  return {fit_scaling_exponent(ns, node), fit_scaling_exponent(ns, scale)};
}

}  // namespace mag
