#pragma once

// Graph statistics and MMD between sets of graphs.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "mag/error.hpp"
#include "mag/graph.hpp"

namespace mag {

inline constexpr std::size_t kOrbitCount = 15;

/// Degree histogram normalised to sum 1; length = max degree + 1.
inline std::vector<double> degree_stats(const Graph& g) {
  const auto adj = g.adjacency_lists();
  std::size_t max_deg = 0;
  for (const auto& a : adj) max_deg = std::max(max_deg, a.size());
  std::vector<double> h(max_deg + 1, 0.0);
  for (const auto& a : adj) h[a.size()] += 1.0;
  for (auto& v : h) v /= static_cast<double>(g.n());
  return h;
}

/// Local clustering coefficient of every node; 0 below degree 2.
inline std::vector<double> clustering_stats(const Graph& g) {
  const auto adj = g.adjacency_lists();
  std::vector<double> c(g.n(), 0.0);
  for (std::size_t v = 0; v < g.n(); ++v) {
    const auto& a = adj[v];
    if (a.size() < 2) continue;
    std::size_t closed = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = i + 1; j < a.size(); ++j) closed += g.has_edge(a[i], a[j]) ? 1 : 0;
    c[v] = static_cast<double>(closed) / (static_cast<double>(a.size() * (a.size() - 1)) / 2.0);
  }
  return c;
}

/// Clustering coefficients binned into `bins` equal bins over [0, 1],
/// normalised to sum 1.
inline std::vector<double> clustering_histogram(const Graph& g, std::size_t bins = 100) {
  if (bins < 1) throw UsageError("clustering histogram: bins must be >= 1");
  std::vector<double> h(bins, 0.0);
  const auto c = clustering_stats(g);
  for (double v : c) h[std::min(bins - 1, static_cast<std::size_t>(v * static_cast<double>(bins)))] += 1.0;
  for (auto& v : h) v /= static_cast<double>(c.size());
  return h;
}

/// Per-node counts of the 15 orbits of connected graphlets on 2-4 nodes.
///
/// Orbits, with nodes inside a graphlet ordered by ascending degree:
///   0 edge; 1-2 path P3 (end, middle); 3 triangle;
///   4-5 path P4 (end, inner); 6-7 star (leaf, centre); 8 cycle C4;
///   9-11 paw (tail, triangle degree-2, degree-3); 12-13 diamond (degree 2, degree 3); 14 K4.
/// Counts are over induced occurrences, found by enumerating every node
/// pair, triple and quadruple.
inline std::vector<std::array<double, kOrbitCount>> orbit_stats(const Graph& g, std::size_t max_nodes = 200) {
  const std::size_t N = g.n();
  if (N > max_nodes)
    throw UsageError("orbit counting refused for N=" + std::to_string(N) + " (limit " + std::to_string(max_nodes) +
                     "; enumeration is quartic in N)");
  std::vector<std::vector<char>> a(N, std::vector<char>(N, 0));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) a[i][j] = g.has_edge(i, j) ? 1 : 0;
  std::vector<std::array<double, kOrbitCount>> out(N);
  for (auto& o : out) o.fill(0.0);

  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i + 1; j < N; ++j)
      if (a[i][j]) {
        out[i][0] += 1;
        out[j][0] += 1;
      }

  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i + 1; j < N; ++j)
      for (std::size_t k = j + 1; k < N; ++k) {
        const std::size_t v[3] = {i, j, k};
        int deg[3] = {a[i][j] + a[i][k], a[i][j] + a[j][k], a[i][k] + a[j][k]};
        const int edges = (deg[0] + deg[1] + deg[2]) / 2;
        if (edges < 2) continue;
        for (int t = 0; t < 3; ++t) out[v[t]][edges == 3 ? 3 : (deg[t] == 1 ? 1 : 2)] += 1;
      }

  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i + 1; j < N; ++j)
      for (std::size_t k = j + 1; k < N; ++k)
        for (std::size_t l = k + 1; l < N; ++l) {
          const std::size_t v[4] = {i, j, k, l};
          int deg[4] = {0, 0, 0, 0};
          for (int s = 0; s < 4; ++s)
            for (int t = 0; t < 4; ++t) deg[s] += a[v[s]][v[t]];
          const int edges = (deg[0] + deg[1] + deg[2] + deg[3]) / 2;
          const int min_deg = *std::min_element(deg, deg + 4), max_deg = *std::max_element(deg, deg + 4);
          if (edges < 3 || min_deg == 0) continue;
          for (int t = 0; t < 4; ++t) {
            std::size_t orbit = 0;
            switch (edges) {
              case 3: orbit = max_deg == 3 ? (deg[t] == 3 ? 7 : 6) : (deg[t] == 1 ? 4 : 5); break;
              case 4: orbit = max_deg == 2 ? 8 : (deg[t] == 1 ? 9 : deg[t] == 2 ? 10 : 11); break;
              case 5: orbit = deg[t] == 2 ? 12 : 13; break;
              default: orbit = 14; break;
            }
            out[v[t]][orbit] += 1;
          }
        }
  return out;
}

/// Orbit counts summed over nodes and normalised to sum 1 (all zeros for a
/// graph without edges).
inline std::vector<double> orbit_signature(const Graph& g, std::size_t max_nodes = 200) {
  std::vector<double> s(kOrbitCount, 0.0);
  for (const auto& row : orbit_stats(g, max_nodes))
    for (std::size_t o = 0; o < kOrbitCount; ++o) s[o] += row[o];
  double z = 0.0;
  for (double v : s) z += v;
  if (z > 0.0)
    for (auto& v : s) v /= z;
  return s;
}

// ---------------------------------------------------------------------------
// MMD

using Kernel = std::function<double(const std::vector<double>&, const std::vector<double>&)>;

/// Total-variation distance between two histograms, the shorter one
/// zero-padded.
inline double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i)
    s += std::abs((i < a.size() ? a[i] : 0.0) - (i < b.size() ? b[i] : 0.0));
  return 0.5 * s;
}

inline Kernel gaussian_tv_kernel(double sigma = 1.0) {
  return [sigma](const std::vector<double>& a, const std::vector<double>& b) {
    const double d = total_variation(a, b);
    return std::exp(-d * d / (2.0 * sigma * sigma));
  };
}

inline Kernel gaussian_l2_kernel(double sigma = 1.0) {
  return [sigma](const std::vector<double>& a, const std::vector<double>& b) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
      const double d = (i < a.size() ? a[i] : 0.0) - (i < b.size() ? b[i] : 0.0);
      d2 += d * d;
    }
    return std::exp(-d2 / (2.0 * sigma * sigma));
  };
}

/// Biased estimator: mean k(a,a') + mean k(b,b') - 2 mean k(a,b).
inline double mmd_squared(const std::vector<std::vector<double>>& xs, const std::vector<std::vector<double>>& ys,
                          const Kernel& k) {
  if (xs.empty() || ys.empty()) throw UsageError("mmd: both sample sets must be nonempty");
  auto mean_k = [&](const auto& p, const auto& q) {
    double s = 0.0;
    for (const auto& a : p)
      for (const auto& b : q) s += k(a, b);
    return s / static_cast<double>(p.size() * q.size());
  };
  return std::max(0.0, mean_k(xs, xs) + mean_k(ys, ys) - 2.0 * mean_k(xs, ys));
}

struct MmdConfig {
  double sigma = 1.0;
  std::size_t clustering_bins = 100;
  std::size_t orbit_max_nodes = 200;
};

struct MmdReport {
  double degree_mmd = 0.0;
  double clustering_mmd = 0.0;
  double orbit_mmd = 0.0;
  double sigma = 1.0;
  std::size_t clustering_bins = 100;
  std::size_t generated = 0;
  std::size_t reference = 0;
};

inline MmdReport graph_mmd(const std::vector<Graph>& generated, const std::vector<Graph>& reference,
                           const MmdConfig& cfg = {}) {
  if (generated.empty() || reference.empty()) throw UsageError("mmd: both graph sets must be nonempty");
  auto stats = [](const std::vector<Graph>& gs, auto fn) {
    std::vector<std::vector<double>> out;
    out.reserve(gs.size());
    for (const auto& g : gs) out.push_back(fn(g));
    return out;
  };
  MmdReport r;
  r.sigma = cfg.sigma;
  r.clustering_bins = cfg.clustering_bins;
  r.generated = generated.size();
  r.reference = reference.size();
  const auto tv = gaussian_tv_kernel(cfg.sigma);
  r.degree_mmd = mmd_squared(stats(generated, degree_stats), stats(reference, degree_stats), tv);
  auto clus = [&](const Graph& g) { return clustering_histogram(g, cfg.clustering_bins); };
  r.clustering_mmd = mmd_squared(stats(generated, clus), stats(reference, clus), tv);
  auto orb = [&](const Graph& g) { return orbit_signature(g, cfg.orbit_max_nodes); };
  r.orbit_mmd = mmd_squared(stats(generated, orb), stats(reference, orb), gaussian_l2_kernel(cfg.sigma));
  return r;
}

// ---------------------------------------------------------------------------
// Community structure

struct CommunitySplit {
  std::vector<int> side;  // +1 / -1 per node
  double modularity = 0.0;
};

/// Two-way split by the sign of the leading eigenvector of the modularity
/// matrix B = A - k k^T / 2m, scored by Q = s^T B s / 4m.
inline CommunitySplit spectral_bisection(const Graph& g) {
  const std::size_t N = g.n();
  CommunitySplit out;
  out.side.assign(N, 1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j)
      if (g.has_edge(i, j)) A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
  const Eigen::VectorXd k = A.rowwise().sum();
  const double two_m = k.sum();
  if (two_m == 0.0) return out;
  const Eigen::MatrixXd B = A - k * k.transpose() / two_m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  const Eigen::VectorXd lead = es.eigenvectors().col(static_cast<Eigen::Index>(N) - 1);
  Eigen::VectorXd s(static_cast<Eigen::Index>(N));
  for (std::size_t i = 0; i < N; ++i) {
    out.side[i] = lead(static_cast<Eigen::Index>(i)) >= 0.0 ? 1 : -1;
    s(static_cast<Eigen::Index>(i)) = out.side[i];
  }
  out.modularity = s.dot(B * s) / (2.0 * two_m);
  return out;
}

inline bool has_two_communities(const Graph& g, double threshold = 0.2) {
  return spectral_bisection(g).modularity > threshold;
}

}  // namespace mag
