#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner. Written without the library's own helpers.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "mag/graph.hpp"

namespace oracle {

struct Template {
  std::size_t k;
  std::vector<std::pair<int, int>> edges;
  std::vector<int> orbit;  // per template node
};

inline const std::vector<Template>& graphlets() {
  static const std::vector<Template> t = {
      {2, {{0, 1}}, {0, 0}},
      {3, {{0, 1}, {1, 2}}, {1, 2, 1}},
      {3, {{0, 1}, {1, 2}, {0, 2}}, {3, 3, 3}},
      {4, {{0, 1}, {1, 2}, {2, 3}}, {4, 5, 5, 4}},
      {4, {{0, 1}, {0, 2}, {0, 3}}, {7, 6, 6, 6}},
      {4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}}, {8, 8, 8, 8}},
      {4, {{0, 1}, {1, 2}, {0, 2}, {2, 3}}, {10, 10, 11, 9}},
      {4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 2}}, {13, 12, 13, 12}},
      {4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}, {14, 14, 14, 14}},
  };
  return t;
}

/// Orbit counts by embedding every graphlet template with every injective
/// map and dividing by the template's automorphism count.
inline std::vector<std::array<double, 15>> orbit_counts(const std::vector<std::vector<bool>>& adj) {
  const std::size_t n = adj.size();
  std::vector<std::array<double, 15>> out(n);
  for (auto& o : out) o.fill(0.0);
  for (const auto& t : graphlets()) {
    std::vector<std::vector<bool>> ta(t.k, std::vector<bool>(t.k, false));
    for (auto [a, b] : t.edges) ta[a][b] = ta[b][a] = true;
    std::vector<int> perm(t.k);
    std::iota(perm.begin(), perm.end(), 0);
    std::size_t aut = 0;
    do {
      bool ok = true;
      for (std::size_t a = 0; a < t.k && ok; ++a)
        for (std::size_t b = 0; b < t.k && ok; ++b) ok = ta[a][b] == ta[perm[a]][perm[b]];
      aut += ok;
    } while (std::next_permutation(perm.begin(), perm.end()));
    std::vector<std::array<double, 15>> raw(n);
    for (auto& o : raw) o.fill(0.0);
    std::vector<std::size_t> map(t.k);
    std::vector<bool> used(n, false);
    auto rec = [&](auto&& self, std::size_t depth) -> void {
      if (depth == t.k) {
        for (std::size_t a = 0; a < t.k; ++a)
          for (std::size_t b = a + 1; b < t.k; ++b)
            if (ta[a][b] != adj[map[a]][map[b]]) return;
        for (std::size_t a = 0; a < t.k; ++a) raw[map[a]][t.orbit[a]] += 1.0;
        return;
      }
      for (std::size_t v = 0; v < n; ++v) {
        if (used[v]) continue;
        used[v] = true;
        map[depth] = v;
        self(self, depth + 1);
        used[v] = false;
      }
    };
    rec(rec, 0);
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t o = 0; o < 15; ++o) out[v][o] += raw[v][o] / static_cast<double>(aut);
  }
  return out;
}

/// Adjacency of the labelled graph on n nodes whose upper-triangle pairs
/// (row-major) are the bits of `mask`.
inline std::vector<std::vector<bool>> graph_from_bits(std::size_t n, unsigned long long mask) {
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  std::size_t bit = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j, ++bit)
      if (mask >> bit & 1ULL) adj[i][j] = adj[j][i] = true;
  return adj;
}

inline mag::Graph to_graph(const std::vector<std::vector<bool>>& adj) {
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 0; i < adj.size(); ++i)
    for (std::size_t j = i + 1; j < adj.size(); ++j)
      if (adj[i][j]) e.emplace_back(i, j);
  return mag::Graph::from_edges(adj.size(), e);
}

/// MMD^2 with Gaussian-over-TV kernel, written as three literal loops.
inline double mmd_tv(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y, double sigma) {
  auto k = [&](const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t len = std::max(a.size(), b.size());
    double tv = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double ai = i < a.size() ? a[i] : 0.0, bi = i < b.size() ? b[i] : 0.0;
      tv += std::fabs(ai - bi);
    }
    tv /= 2.0;
    return std::exp(-(tv * tv) / (2.0 * sigma * sigma));
  };
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) xx += k(x[i], x[j]);
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) yy += k(y[i], y[j]);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) xy += k(x[i], y[j]);
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  return xx / (nx * nx) + yy / (ny * ny) - 2.0 * xy / (nx * ny);
}

/// Valence rule on raw arrays: atoms[i] in 0..3 (C, N, O, F), bonds[i][j]
/// bond order 0..3.
inline bool valence_ok(const std::vector<int>& atoms, const std::vector<std::vector<int>>& bonds) {
  static const int cap[4] = {4, 3, 2, 1};
  const std::size_t n = atoms.size();
  for (std::size_t i = 0; i < n; ++i) {
    int s = 0;
    for (std::size_t j = 0; j < n; ++j) s += bonds[i][j];
    if (s > cap[atoms[i]]) return false;
  }
  // union-find connectivity
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (bonds[i][j] > 0) parent[find(i)] = find(j);
  for (std::size_t i = 1; i < n; ++i)
    if (find(i) != find(0)) return false;
  return true;
}

inline mag::Graph molecule(const std::vector<int>& atoms, const std::vector<std::vector<int>>& bonds) {
  const std::size_t n = atoms.size();
  mag::Tensor x({n, 4});
  mag::Tensor b({n, n, 4});
  for (std::size_t i = 0; i < n; ++i) {
    x(i, static_cast<std::size_t>(atoms[i])) = 1.0;
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) b.at(i, j, static_cast<std::size_t>(bonds[i][j])) = 1.0;
  }
  return mag::Graph(std::move(x), std::move(b));
}

/// Calls fn(atoms, bonds) for every molecule with 1..max_atoms atoms.
template <typename Fn>
void for_each_small_molecule(std::size_t max_atoms, Fn fn) {
  for (std::size_t n = 1; n <= max_atoms; ++n) {
    const std::size_t pairs = n * (n - 1) / 2;
    std::size_t atom_codes = 1, bond_codes = 1;
    for (std::size_t i = 0; i < n; ++i) atom_codes *= 4;
    for (std::size_t i = 0; i < pairs; ++i) bond_codes *= 4;
    for (std::size_t ac = 0; ac < atom_codes; ++ac)
      for (std::size_t bc = 0; bc < bond_codes; ++bc) {
        std::vector<int> atoms(n);
        for (std::size_t i = 0, c = ac; i < n; ++i, c /= 4) atoms[i] = static_cast<int>(c % 4);
        std::vector<std::vector<int>> bonds(n, std::vector<int>(n, 0));
        std::size_t c = bc;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = i + 1; j < n; ++j, c /= 4) bonds[i][j] = bonds[j][i] = static_cast<int>(c % 4);
        fn(atoms, bonds);
      }
  }
}

}  // namespace oracle
