#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "mag/graph.hpp"

namespace mag {

namespace detail {

struct Fnv64 {
  std::uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) {
    if (v == 0.0) v = 0.0;  // fold -0.0
    bytes(&v, sizeof v);
  }
};

inline std::uint64_t edge_label(const Graph& g, std::size_t i, std::size_t j) {
  return g.edge_dim() == 1 ? 1 : g.edge_class(i, j);
}

/// Colour history of 1-WL refinement; colours[r][v] is v's colour after r rounds.
inline std::vector<std::vector<std::uint64_t>> wl_colours(const Graph& g, std::size_t iterations) {
  const std::size_t N = g.n();
  std::vector<std::vector<std::uint64_t>> hist;
  std::vector<std::uint64_t> c(N);
  for (std::size_t v = 0; v < N; ++v) {
    Fnv64 f;
    for (double x : g.node_features().row(v)) f.f64(x);
    c[v] = f.h;
  }
  hist.push_back(c);
  const auto adj = g.adjacency_lists();
  for (std::size_t r = 0; r < iterations; ++r) {
    std::vector<std::uint64_t> next(N);
    for (std::size_t v = 0; v < N; ++v) {
      std::vector<std::pair<std::uint64_t, std::uint64_t>> sig;
      for (auto u : adj[v]) sig.emplace_back(edge_label(g, v, u), c[u]);
      if (!g.undirected())
        for (std::size_t u = 0; u < N; ++u)
          if (g.has_edge(u, v)) sig.emplace_back(edge_label(g, u, v) + (1ULL << 32), c[u]);
      std::sort(sig.begin(), sig.end());
      Fnv64 f;
      f.u64(c[v]);
      for (auto [l, col] : sig) {
        f.u64(l);
        f.u64(col);
      }
      next[v] = f.h;
    }
    c = std::move(next);
    hist.push_back(c);
  }
  return hist;
}

inline bool iso_extend(const Graph& a, const Graph& b, const std::vector<std::uint64_t>& ca,
                       const std::vector<std::uint64_t>& cb, std::vector<std::size_t>& map, std::vector<bool>& used,
                       std::size_t v) {
  const std::size_t N = a.n();
  if (v == N) return true;
  for (std::size_t w = 0; w < N; ++w) {
    if (used[w] || ca[v] != cb[w]) continue;
    bool ok = true;
    for (std::size_t d = 0; ok && d < a.node_dim(); ++d) ok = a.node_features()(v, d) == b.node_features()(w, d);
    for (std::size_t u = 0; ok && u < v; ++u)
      for (std::size_t c = 0; ok && c < a.edge_dim(); ++c)
        ok = a.edge_attrs().at(v, u, c) == b.edge_attrs().at(w, map[u], c) &&
             a.edge_attrs().at(u, v, c) == b.edge_attrs().at(map[u], w, c);
    if (!ok) continue;
    map[v] = w;
    used[w] = true;
    if (iso_extend(a, b, ca, cb, map, used, v + 1)) return true;
    used[w] = false;
  }
  return false;
}

}  // namespace detail

/// 1-WL colour-refinement hash over node features and edge labels.
/// Isomorphic graphs always receive the same hash.
inline std::string wl_canonical_hash(const Graph& g, std::size_t iterations = 3) {
  if (iterations < 1) throw UsageError("wl_canonical_hash: iterations must be >= 1");
  const auto hist = detail::wl_colours(g, iterations);
  detail::Fnv64 f;
  f.u64(g.n());
  f.u64(g.node_dim());
  f.u64(g.edge_dim());
  f.u64(g.edge_count());
  for (auto round : hist) {
    std::sort(round.begin(), round.end());
    for (auto c : round) f.u64(c);
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(f.h));
  return hex;
}

/// Exact isomorphism test by backtracking over WL-compatible assignments.
inline bool isomorphic(const Graph& a, const Graph& b, std::size_t iterations = 3) {
  if (a.n() != b.n() || a.node_dim() != b.node_dim() || a.edge_dim() != b.edge_dim() ||
      a.undirected() != b.undirected() || a.edge_count() != b.edge_count())
    return false;
  const auto ha = detail::wl_colours(a, iterations);
  const auto hb = detail::wl_colours(b, iterations);
  auto sa = ha.back(), sb = hb.back();
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  if (sa != sb) return false;
  std::vector<std::size_t> map(a.n());
  std::vector<bool> used(a.n(), false);
  return detail::iso_extend(a, b, ha.back(), hb.back(), map, used, 0);
}

/// Set of graphs up to isomorphism: WL hash buckets, split by an exact
/// isomorphism check when graphs have at most `exact_limit` nodes.
class CanonicalSet {
 public:
  explicit CanonicalSet(std::size_t iterations = 3, std::size_t exact_limit = 12)
      : iterations_(iterations), exact_limit_(exact_limit) {}

  /// Returns true when `g` was not already represented.
  bool insert(const Graph& g) {
    auto& bucket = buckets_[wl_canonical_hash(g, iterations_)];
    if (find_in(bucket, g)) return false;
    bucket.push_back(g);
    ++classes_;
    return true;
  }

  bool contains(const Graph& g) const {
    auto it = buckets_.find(wl_canonical_hash(g, iterations_));
    return it != buckets_.end() && find_in(it->second, g);
  }

  std::size_t size() const { return classes_; }

 private:
  std::size_t iterations_;
  std::size_t exact_limit_;
  std::size_t classes_ = 0;
  std::map<std::string, std::vector<Graph>> buckets_;

  bool find_in(const std::vector<Graph>& bucket, const Graph& g) const {
    if (bucket.empty()) return false;
    if (g.n() > exact_limit_) return true;
    return std::any_of(bucket.begin(), bucket.end(), [&](const Graph& h) { return isomorphic(g, h, iterations_); });
  }
};

}  // namespace mag
