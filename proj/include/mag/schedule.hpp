#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "mag/error.hpp"

namespace mag {

inline const std::vector<std::size_t>& default_scale_base() {
  static const std::vector<std::size_t> base{1, 2, 4, 6, 9};
  return base;
}

/// Ordered token-map lengths n_1 < ... < n_K with n_1 = 1 and n_K = N. The
/// single-scale schedule {N} is also accepted (plain full-resolution quantization).
class ScaleSchedule {
 public:
  ScaleSchedule() = default;
  explicit ScaleSchedule(std::vector<std::size_t> lengths) : lengths_(std::move(lengths)) {
    if (lengths_.empty()) throw ValidationError("scale schedule: empty");
    if (lengths_.size() > 1 && lengths_.front() != 1) throw ValidationError("scale schedule: first scale must be 1");
    if (lengths_.front() == 0) throw ValidationError("scale schedule: zero-length scale");
    for (std::size_t k = 1; k < lengths_.size(); ++k)
      if (lengths_[k] <= lengths_[k - 1]) throw ValidationError("scale schedule: lengths must strictly increase");
  }

  std::size_t scales() const { return lengths_.size(); }
  std::size_t n_nodes() const { return lengths_.back(); }
  std::size_t length(std::size_t k) const { return lengths_.at(k); }
  const std::vector<std::size_t>& lengths() const { return lengths_; }

  /// Total tokens across all scales.
  std::size_t total() const { return std::accumulate(lengths_.begin(), lengths_.end(), std::size_t{0}); }
  /// Index of the first token of scale k in the concatenated sequence.
  std::size_t offset(std::size_t k) const {
    return std::accumulate(lengths_.begin(), lengths_.begin() + static_cast<std::ptrdiff_t>(k), std::size_t{0});
  }

  friend bool operator==(const ScaleSchedule&, const ScaleSchedule&) = default;

 private:
  std::vector<std::size_t> lengths_;
};

/// Truncates the base set to entries below N, extends it geometrically by
/// `growth` when the base runs out before N, then appends N.
inline ScaleSchedule build_scale_schedule(std::size_t n, const std::vector<std::size_t>& base = default_scale_base(),
                                          std::size_t growth = 2) {
  if (base.empty()) throw UsageError("build_scale_schedule: empty base set");
  if (n == 0) throw UsageError("build_scale_schedule: N must be >= 1");
  if (growth < 2) throw UsageError("build_scale_schedule: growth must be >= 2");
  std::vector<std::size_t> sorted(base);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  sorted.erase(std::remove(sorted.begin(), sorted.end(), std::size_t{0}), sorted.end());

  std::vector<std::size_t> out{1};
  for (auto b : sorted)
    if (b > out.back() && b < n) out.push_back(b);
  if (sorted.empty() || sorted.back() < n) {
    for (std::size_t next = out.back() * growth; next < n; next *= growth) out.push_back(next);
  }
  if (out.back() != n) out.push_back(n);
  return ScaleSchedule(std::move(out));
}

/// Scale index of every position in a concatenated sequence.
inline std::vector<std::size_t> position_levels(const ScaleSchedule& s, bool with_start_token) {
  std::vector<std::size_t> levels;
  if (with_start_token) levels.push_back(0);
  for (std::size_t k = 0; k < s.scales(); ++k) levels.insert(levels.end(), s.length(k), with_start_token ? k + 1 : k);
  return levels;
}

/// mask[p][q] is true when position p may attend to position q, i.e. q lies
/// in the same or an earlier scale.
inline std::vector<std::vector<bool>> block_causal_mask(const std::vector<std::size_t>& levels) {
  std::vector<std::vector<bool>> m(levels.size(), std::vector<bool>(levels.size(), false));
  for (std::size_t p = 0; p < levels.size(); ++p)
    for (std::size_t q = 0; q < levels.size(); ++q) m[p][q] = levels[q] <= levels[p];
  return m;
}

/// Mask over 1 + sum(n_k) positions, the start token forming scale 0.
inline std::vector<std::vector<bool>> build_block_causal_mask(const ScaleSchedule& s) {
  return block_causal_mask(position_levels(s, true));
}

}  // namespace mag
