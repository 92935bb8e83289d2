#pragma once

// Molecular validity, uniqueness and novelty. Atoms are one-hot over
// {C, N, O, F}; bonds are edge classes {none, single, double, triple}.

#include <array>
#include <numeric>
#include <vector>

#include "mag/canonical.hpp"
#include "mag/graph_io.hpp"

namespace mag {

inline constexpr std::array<int, kAtomTypes> kMaxValence = {4, 3, 2, 1};
inline constexpr std::array<char, kAtomTypes> kAtomSymbols = {'C', 'N', 'O', 'F'};

inline void require_molecular(const Graph& g) {
  if (g.node_dim() != kAtomTypes)
    throw ValidationError("molecule: expected " + std::to_string(kAtomTypes) + " atom channels, got " +
                          std::to_string(g.node_dim()));
  if (g.edge_dim() != kBondTypes)
    throw ValidationError("molecule: expected " + std::to_string(kBondTypes) + " bond channels, got " +
                          std::to_string(g.edge_dim()));
  g.require_one_hot_nodes();
}

inline bool is_connected(const Graph& g) {
  const auto adj = g.adjacency_lists();
  std::vector<char> seen(g.n(), 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (auto u : adj[v])
      if (!seen[u]) {
        seen[u] = 1;
        ++reached;
        stack.push_back(u);
      }
  }
  return reached == g.n();
}

/// Every atom's bond-order sum within its maximum valence, and the heavy-atom
/// graph connected. Hydrogens are implicit.
inline bool molecule_validity(const Graph& g) {
  require_molecular(g);
  for (std::size_t i = 0; i < g.n(); ++i) {
    int order = 0;
    for (std::size_t j = 0; j < g.n(); ++j)
      if (j != i) order += static_cast<int>(g.edge_class(i, j));
    if (order > kMaxValence[g.node_class(i)]) return false;
  }
  return is_connected(g);
}

struct MoleculeReport {
  double validity = 0.0;
  double uniqueness = 0.0;
  double novelty = 0.0;
  std::size_t samples = 0;
  std::size_t valid = 0;
  bool no_valid_samples = false;
};

/// Percentages: valid / samples, distinct valid / valid, and distinct valid
/// absent from `training` / distinct valid. Identity is isomorphism up to
/// atom and bond types.
inline MoleculeReport molecule_report(const std::vector<Graph>& samples, const std::vector<Graph>& training) {
  MoleculeReport r;
  r.samples = samples.size();
  CanonicalSet train_set, seen;
  for (const auto& g : training) train_set.insert(g);
  std::size_t novel = 0;
  for (const auto& g : samples) {
    if (!molecule_validity(g)) continue;
    ++r.valid;
    if (seen.insert(g) && !train_set.contains(g)) ++novel;
  }
  if (r.valid == 0) {
    r.no_valid_samples = true;
    return r;
  }
  r.validity = 100.0 * static_cast<double>(r.valid) / static_cast<double>(r.samples);
  r.uniqueness = 100.0 * static_cast<double>(seen.size()) / static_cast<double>(r.valid);
  r.novelty = 100.0 * static_cast<double>(novel) / static_cast<double>(seen.size());
  return r;
}

}  // namespace mag
