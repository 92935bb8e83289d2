#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mag/schedule.hpp"
#include "mag/tensor.hpp"

namespace mag {

/// Graph with dense node features (N x D) and edge attributes (N x N x F).
///
/// With F == 1 channel 0 marks edge presence. With F > 1 the channels are a
/// categorical edge type whose channel 0 means "no edge"; off-diagonal
/// absent pairs carry a one-hot on channel 0. The diagonal is always zero.
class Graph {
 public:
  Graph() = default;
  Graph(Tensor node_features, Tensor edge_attrs, bool undirected = true)
      : x_(std::move(node_features)), b_(std::move(edge_attrs)), undirected_(undirected) {
    validate();
  }

  /// Unattributed graph with constant scalar node features.
  static Graph from_edges(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    Tensor x({n, 1}, 1.0);
    Tensor b({n, n, 1});
    for (auto [i, j] : edges) {
      if (i >= n || j >= n) throw ValidationError("graph: edge endpoint out of range");
      b.at(i, j, 0) = 1.0;
      b.at(j, i, 0) = 1.0;
    }
    return Graph(std::move(x), std::move(b));
  }

  std::size_t n() const { return x_.empty() ? 0 : x_.dim(0); }
  std::size_t node_dim() const { return x_.cols(); }
  std::size_t edge_dim() const { return b_.rank() == 3 ? b_.dim(2) : 0; }
  bool undirected() const { return undirected_; }
  const Tensor& node_features() const { return x_; }
  const Tensor& edge_attrs() const { return b_; }

  /// Number of categories the decoder predicts per node pair.
  std::size_t edge_classes() const { return edge_dim() == 1 ? 2 : edge_dim(); }

  std::size_t edge_class(std::size_t i, std::size_t j) const {
    const std::size_t F = edge_dim();
    if (F == 1) return b_.at(i, j, 0) != 0.0 ? 1 : 0;
    std::size_t best = 0;
    for (std::size_t c = 1; c < F; ++c)
      if (b_.at(i, j, c) > b_.at(i, j, best)) best = c;
    return b_.at(i, j, best) > 0.0 ? best : 0;
  }
  bool has_edge(std::size_t i, std::size_t j) const { return i != j && edge_class(i, j) != 0; }

  std::size_t node_class(std::size_t i) const {
    const auto row = x_.row(i);
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }

  std::size_t edge_count() const {
    std::size_t m = 0;
    for (std::size_t i = 0; i < n(); ++i)
      for (std::size_t j = i + 1; j < n(); ++j) m += has_edge(i, j) ? 1 : 0;
    return m;
  }

  std::vector<std::vector<std::size_t>> adjacency_lists() const {
    std::vector<std::vector<std::size_t>> adj(n());
    for (std::size_t i = 0; i < n(); ++i)
      for (std::size_t j = 0; j < n(); ++j)
        if (has_edge(i, j)) adj[i].push_back(j);
    return adj;
  }

  /// Relabelled copy: node p of the result is node perm[p] of this graph.
  Graph permuted(const std::vector<std::size_t>& perm) const {
    const std::size_t N = n(), D = node_dim(), F = edge_dim();
    if (perm.size() != N) throw DimensionError("graph permute: permutation length mismatch");
    Tensor x({N, D});
    Tensor b({N, N, F});
    for (std::size_t p = 0; p < N; ++p) {
      for (std::size_t d = 0; d < D; ++d) x(p, d) = x_(perm[p], d);
      for (std::size_t q = 0; q < N; ++q)
        for (std::size_t c = 0; c < F; ++c) b.at(p, q, c) = b_.at(perm[p], perm[q], c);
    }
    return Graph(std::move(x), std::move(b), undirected_);
  }

  /// Requires each node row to be a one-hot vector.
  void require_one_hot_nodes() const {
    for (std::size_t i = 0; i < n(); ++i) {
      double s = 0.0;
      for (double v : x_.row(i)) {
        if (v != 0.0 && v != 1.0) throw ValidationError("graph: node " + std::to_string(i) + " is not one-hot");
        s += v;
      }
      if (s != 1.0) throw ValidationError("graph: node " + std::to_string(i) + " is not one-hot");
    }
  }

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.undirected_ == b.undirected_ && a.x_ == b.x_ && a.b_ == b.b_;
  }

 private:
  Tensor x_;
  Tensor b_;
  bool undirected_ = true;

  void validate() const {
    if (x_.rank() != 2 || x_.dim(0) == 0 || x_.dim(1) == 0)
      throw ValidationError("graph: node features must be N x D with N, D >= 1, got " + shape_str(x_.shape()));
    const std::size_t N = x_.dim(0);
    if (b_.rank() != 3 || b_.dim(0) != N || b_.dim(1) != N || b_.dim(2) == 0)
      throw ValidationError("graph: edge attributes must be N x N x F, got " + shape_str(b_.shape()) + " for N=" +
                            std::to_string(N));
    if (!x_.all_finite() || !b_.all_finite()) throw ValidationError("graph: non-finite feature");
    const std::size_t F = b_.dim(2);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t c = 0; c < F; ++c)
        if (b_.at(i, i, c) != 0.0) throw ValidationError("graph: self-loop at node " + std::to_string(i));
      if (!undirected_) continue;
      for (std::size_t j = i + 1; j < N; ++j)
        for (std::size_t c = 0; c < F; ++c)
          if (b_.at(i, j, c) != b_.at(j, i, c))
            throw ValidationError("graph: asymmetric edge (" + std::to_string(i) + "," + std::to_string(j) +
                                  ") on undirected graph");
    }
  }
};

struct LabeledGraph {
  Graph graph;
  int label = 0;
};

// ---------------------------------------------------------------------------
// Community-small

struct CommunityParams {
  double p_intra = 0.7;
  double p_inter = 0.05;
  bool bridge = true;
};

/// Two equal communities of n/2 nodes. Nodes [0, n/2) form the first block.
/// With `bridge` one uniformly chosen cross pair is forced present.
inline Graph generate_community_small(std::size_t n, std::mt19937_64& rng, const CommunityParams& params = {}) {
  if (n < 2 || n % 2 != 0) throw UsageError("community graph: node count must be even, got " + std::to_string(n));
  const std::size_t half = n / 2;
  std::bernoulli_distribution intra(params.p_intra), inter(params.p_inter);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool same = (i < half) == (j < half);
      if (same ? intra(rng) : inter(rng)) edges.emplace_back(i, j);
    }
  if (params.bridge) {
    std::uniform_int_distribution<std::size_t> pick(0, half - 1);
    const std::size_t i = pick(rng);
    const std::size_t j = half + pick(rng);
    edges.emplace_back(i, j);
  }
  return Graph::from_edges(n, edges);
}

/// `count` graphs with sizes uniform over the even values in [min_n, max_n].
inline std::vector<LabeledGraph> community_small_dataset(std::uint64_t seed, std::size_t count = 100,
                                                         std::size_t min_n = 12, std::size_t max_n = 20,
                                                         const CommunityParams& params = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> half(min_n / 2, max_n / 2);
  std::vector<LabeledGraph> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back({generate_community_small(2 * half(rng), rng, params), 0});
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct DatasetSpec {
  std::string name = "community_small";
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::size_t class_count = 1;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Deterministic shuffled partition of [0, count).
inline Split split_indices(std::size_t count, const DatasetSpec& spec) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(spec.seed);
  for (std::size_t i = count; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(count)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return s;
}

// ---------------------------------------------------------------------------
// Batching

struct GraphBatch {
  std::size_t n_max = 0;
  std::vector<std::size_t> sizes;
  std::vector<Tensor> node_features;  // n_max x D, zero padded
  std::vector<Tensor> edge_attrs;     // n_max x n_max x F, zero padded
  std::vector<std::vector<bool>> node_mask;
  std::vector<ScaleSchedule> schedules;
  std::vector<bool> undirected;
  static constexpr double kPadValue = 0.0;

  std::size_t size() const { return sizes.size(); }
};

inline GraphBatch batch_and_pad(const std::vector<Graph>& graphs,
                                const std::vector<std::size_t>& scale_base = default_scale_base()) {
  if (graphs.empty()) throw UsageError("batch_and_pad: empty graph list");
  const std::size_t D = graphs[0].node_dim(), F = graphs[0].edge_dim();
  GraphBatch batch;
  for (const auto& g : graphs) {
    if (g.n() == 0) throw ValidationError("batch_and_pad: empty graph");
    if (g.node_dim() != D || g.edge_dim() != F) throw DimensionError("batch_and_pad: feature widths differ");
    batch.n_max = std::max(batch.n_max, g.n());
  }
  const std::size_t M = batch.n_max;
  for (const auto& g : graphs) {
    const std::size_t N = g.n();
    Tensor x({M, D}, GraphBatch::kPadValue);
    Tensor b({M, M, F}, GraphBatch::kPadValue);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t d = 0; d < D; ++d) x(i, d) = g.node_features()(i, d);
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t c = 0; c < F; ++c) b.at(i, j, c) = g.edge_attrs().at(i, j, c);
    }
    std::vector<bool> mask(M, false);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(N), true);
    batch.sizes.push_back(N);
    batch.node_features.push_back(std::move(x));
    batch.edge_attrs.push_back(std::move(b));
    batch.node_mask.push_back(std::move(mask));
    batch.schedules.push_back(build_scale_schedule(N, scale_base));
    batch.undirected.push_back(g.undirected());
  }
  return batch;
}

/// Drops padding, recovering the original graphs.
inline std::vector<Graph> unpad(const GraphBatch& batch) {
  std::vector<Graph> out;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const std::size_t N = batch.sizes[k];
    const std::size_t D = batch.node_features[k].cols(), F = batch.edge_attrs[k].dim(2);
    Tensor x({N, D});
    Tensor b({N, N, F});
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t d = 0; d < D; ++d) x(i, d) = batch.node_features[k](i, d);
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t c = 0; c < F; ++c) b.at(i, j, c) = batch.edge_attrs[k].at(i, j, c);
    }
    out.emplace_back(std::move(x), std::move(b), batch.undirected[k]);
  }
  return out;
}

}  // namespace mag
