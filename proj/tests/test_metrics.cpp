#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mag/complexity.hpp"
#include "mag/metrics.hpp"
#include "mag/molecule.hpp"
#include "oracles.hpp"

using namespace mag;

namespace {
Graph star4() { return Graph::from_edges(4, {{0, 1}, {0, 2}, {0, 3}}); }
}  // namespace

TEST(GraphStats, Triangle) {
  Graph g = Graph::from_edges(3, {{0, 1}, {1, 2}, {0, 2}});
  EXPECT_EQ(degree_stats(g), (std::vector<double>{0, 0, 1}));
  EXPECT_EQ(clustering_stats(g), (std::vector<double>{1, 1, 1}));
  auto h = clustering_histogram(g);
  EXPECT_EQ(h.size(), 100u);
  EXPECT_EQ(h[99], 1.0);
}

TEST(GraphStats, PathHasNoClustering) {
  Graph g = Graph::from_edges(4, {{0, 1}, {1, 2}, {2, 3}});
  EXPECT_EQ(clustering_stats(g), (std::vector<double>{0, 0, 0, 0}));
  EXPECT_EQ(degree_stats(g), (std::vector<double>{0, 0.5, 0.5}));
}

TEST(GraphStats, StarOrbitsByHand) {
  Graph g = star4();
  EXPECT_EQ(clustering_stats(g)[0], 0.0);
  auto o = orbit_stats(g);
  std::array<double, 15> centre{}, leaf{};
  centre[0] = 3;  // edges
  centre[2] = 3;  // middle of each leaf-centre-leaf path
  centre[7] = 1;  // star centre
  leaf[0] = 1;
  leaf[1] = 2;  // end of two paths
  leaf[6] = 1;
  EXPECT_EQ(o[0], centre);
  for (int v = 1; v < 4; ++v) EXPECT_EQ(o[v], leaf);
}

TEST(GraphStats, OrbitsMatchEmbeddingOracleOnAllSmallGraphs) {
  for (std::size_t n = 1; n <= 5; ++n) {
    const unsigned long long total = 1ULL << (n * (n - 1) / 2);
    for (unsigned long long m = 0; m < total; ++m) {
      auto adj = oracle::graph_from_bits(n, m);
      ASSERT_EQ(orbit_stats(oracle::to_graph(adj)), oracle::orbit_counts(adj)) << "n=" << n << " mask=" << m;
    }
  }
}

TEST(GraphStats, OrbitSizeGuard) {
  Graph g = Graph::from_edges(12, {{0, 1}});
  EXPECT_THROW(orbit_stats(g, 10), UsageError);
  EXPECT_NO_THROW(orbit_stats(g, 12));
}

TEST(Mmd, IdenticalSetsAndSymmetry) {
  std::mt19937_64 rng(3);
  std::vector<Graph> a, b;
  for (int i = 0; i < 6; ++i) a.push_back(generate_community_small(12 + 2 * (i % 3), rng));
  for (int i = 0; i < 5; ++i) b.push_back(generate_community_small(14, rng));
  auto same = graph_mmd(a, a);
  EXPECT_LT(same.degree_mmd, 1e-12);
  EXPECT_LT(same.clustering_mmd, 1e-12);
  EXPECT_LT(same.orbit_mmd, 1e-12);
  auto ab = graph_mmd(a, b), ba = graph_mmd(b, a);
  EXPECT_NEAR(ab.degree_mmd, ba.degree_mmd, 1e-14);
  EXPECT_NEAR(ab.orbit_mmd, ba.orbit_mmd, 1e-14);
  EXPECT_THROW(graph_mmd({}, a), UsageError);
}

TEST(Mmd, SingletonClosedForm) {
  const std::vector<double> x{0.5, 0.5}, y{0.0, 0.25, 0.75};
  // TV = 0.5 * (0.5 + 0.25 + 0.75) = 0.75
  const double k = std::exp(-0.75 * 0.75 / 2.0);
  EXPECT_NEAR(mmd_squared({x}, {y}, gaussian_tv_kernel(1.0)), 2.0 - 2.0 * k, 1e-15);
}

TEST(Mmd, MatchesLiteralLoops) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&] {
    std::vector<double> h(1 + rng() % 8);
    double z = 0.0;
    for (auto& v : h) z += (v = u(rng));
    for (auto& v : h) v /= z;
    return h;
  };
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> x, y;
    for (int i = 0; i < 10; ++i) x.push_back(draw()), y.push_back(draw());
    EXPECT_NEAR(mmd_squared(x, y, gaussian_tv_kernel(1.0)), oracle::mmd_tv(x, y, 1.0), 1e-10);
  }
  EXPECT_THROW(mmd_squared({}, {{1.0}}, gaussian_tv_kernel()), UsageError);
}

TEST(Modularity, TwoCliquesSplitCleanly) {
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) e.push_back({i, j}), e.push_back({i + 5, j + 5});
  e.push_back({0, 5});
  auto split = spectral_bisection(Graph::from_edges(10, e));
  for (std::size_t i = 1; i < 5; ++i) EXPECT_EQ(split.side[i], split.side[0]);
  for (std::size_t i = 5; i < 10; ++i) EXPECT_NE(split.side[i], split.side[0]);
  // each side: 10 internal edges, degree sum 21; m = 21
  EXPECT_NEAR(split.modularity, 2 * (10.0 / 21.0 - std::pow(21.0 / 42.0, 2)), 1e-12);
  EXPECT_TRUE(has_two_communities(Graph::from_edges(10, e)));
}

TEST(Modularity, CompleteGraphHasNoCommunities) {
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j) e.push_back({i, j});
  EXPECT_FALSE(has_two_communities(Graph::from_edges(6, e)));
  EXPECT_EQ(spectral_bisection(Graph::from_edges(3, {})).modularity, 0.0);
}

TEST(Molecule, HandCases) {
  EXPECT_TRUE(molecule_validity(oracle::molecule({0}, {{0}})));
  // carbon with five single bonds to fluorines
  std::vector<int> atoms{0, 3, 3, 3, 3, 3};
  std::vector<std::vector<int>> bonds(6, std::vector<int>(6, 0));
  for (int i = 1; i < 6; ++i) bonds[0][i] = bonds[i][0] = 1;
  EXPECT_FALSE(molecule_validity(oracle::molecule(atoms, bonds)));
  // C(=O)(-O)(-F)(-F): bond orders 2+1+1+1 = 5 on carbon
  atoms = {0, 2, 2, 3, 3};
  bonds.assign(5, std::vector<int>(5, 0));
  bonds[0][1] = bonds[1][0] = 2;
  for (int i = 2; i < 5; ++i) bonds[0][i] = bonds[i][0] = 1;
  EXPECT_FALSE(molecule_validity(oracle::molecule(atoms, bonds)));
  // dropping one fluorine leaves 4
  atoms.pop_back();
  bonds.pop_back();
  for (auto& r : bonds) r.pop_back();
  EXPECT_TRUE(molecule_validity(oracle::molecule(atoms, bonds)));
  // disconnected pair of carbons
  EXPECT_FALSE(molecule_validity(oracle::molecule({0, 0}, {{0, 0}, {0, 0}})));
}

TEST(Molecule, MatchesValenceOracleExhaustively) {
  std::size_t checked = 0;
  oracle::for_each_small_molecule(3, [&](const auto& atoms, const auto& bonds) {
    ASSERT_EQ(molecule_validity(oracle::molecule(atoms, bonds)), oracle::valence_ok(atoms, bonds));
    ++checked;
  });
  EXPECT_EQ(checked, 4u + 16u * 4u + 64u * 64u);
}

TEST(Molecule, UnknownAtomTypeRejected) {
  EXPECT_THROW(molecule_validity(Graph::from_edges(2, {{0, 1}})), ValidationError);
}

TEST(Molecule, UniquenessAndNovelty) {
  Graph co = oracle::molecule({0, 2}, {{0, 2}, {2, 0}});
  Graph cc = oracle::molecule({0, 0}, {{0, 1}, {1, 0}});
  Graph cn = oracle::molecule({0, 1}, {{0, 3}, {3, 0}});
  Graph bad = oracle::molecule({3, 3, 3}, {{0, 1, 0}, {1, 0, 1}, {0, 1, 0}});
  auto r = molecule_report({co, co, co, co}, {cc});
  EXPECT_DOUBLE_EQ(r.uniqueness, 25.0);
  EXPECT_DOUBLE_EQ(r.novelty, 100.0);
  EXPECT_DOUBLE_EQ(r.validity, 100.0);
  auto same = molecule_report({co, cc}, {co, cc});
  EXPECT_DOUBLE_EQ(same.novelty, 0.0);
  auto mixed = molecule_report({co, cn, bad, cn}, {co});
  EXPECT_DOUBLE_EQ(mixed.validity, 75.0);
  EXPECT_NEAR(mixed.uniqueness, 200.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(mixed.novelty, 50.0);
  auto none = molecule_report({bad}, {co});
  EXPECT_TRUE(none.no_valid_samples);
  EXPECT_EQ(none.uniqueness, 0.0);
}

TEST(Complexity, PairCounts) {
  EXPECT_EQ(count_attention_pairs(Regime::kNodeWise, 4), 30u);
  for (std::uint64_t n = 1; n <= 256; ++n) EXPECT_EQ(count_attention_pairs(Regime::kNodeWise, n), n * (n + 1) * (2 * n + 1) / 6);
  ScaleSchedule one({1}), geo({1, 2, 4, 8});
  EXPECT_EQ(count_attention_pairs(Regime::kScaleWise, 1, &one), 1u);
  EXPECT_EQ(count_attention_pairs(Regime::kScaleWise, 8, &geo), 155u);
  EXPECT_THROW(count_attention_pairs(Regime::kScaleWise, 8), UsageError);
}

TEST(Complexity, SlopeFits) {
  std::vector<double> ns{10, 20, 40, 80, 160}, cubic, quad;
  for (double n : ns) cubic.push_back(2.5 * n * n * n), quad.push_back(0.1 * n * n);
  EXPECT_NEAR(fit_scaling_exponent(ns, cubic), 3.0, 1e-6);
  EXPECT_NEAR(fit_scaling_exponent(ns, quad), 2.0, 1e-6);
  auto curve = cost_curve({16, 32, 64, 128, 256});
  auto [node, scale] = fit_scaling_exponents(curve);
  EXPECT_GE(node, 2.8);
  EXPECT_LE(node, 3.2);
  EXPECT_GE(scale, 1.8);
  EXPECT_LE(scale, 2.3);
  EXPECT_GE(node - scale, 0.6);
  EXPECT_THROW(fit_scaling_exponent({1, 2, 3}, {1, 2, 3}), UsageError);
  EXPECT_THROW(fit_scaling_exponent({1, 2, 3, 5}, {1, 2, 3, 4}), UsageError);
  EXPECT_THROW(fit_scaling_exponent({1, 2, 3, 50}, {1, 0, 3, 4}), ValidationError);
}
