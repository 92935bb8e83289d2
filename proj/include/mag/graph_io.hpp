#pragma once

// JSON Lines graph files. One graph per line:
//
//   {"n": 3, "nodes": [[1.0],[1.0],[1.0]], "edges": [[0,1,0],[1,2,0]], "class": 0}
//
// Undirected edges are normally listed once with i < j and mirrored on load.
// A record that lists any edge with i > j is read as a full listing and must
// then contain both directions of every edge. Optional keys: "f" (edge
// channel count, default 1 + max channel in the file) and "directed".
// A line of the form {"meta": {...}} carries file metadata.

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mag/graph.hpp"

namespace mag {

using ordered_json = nlohmann::ordered_json;

struct GraphFile {
  std::optional<ordered_json> meta;
  std::vector<LabeledGraph> graphs;
};

struct LoadOptions {
  std::size_t edge_channels = 0;  // 0 = infer
  bool molecular = false;         // enforce one-hot atoms and F == 4
};

inline constexpr std::size_t kAtomTypes = 4;  // C, N, O, F
inline constexpr std::size_t kBondTypes = 4;  // none, single, double, triple

namespace detail {

struct RawRecord {
  std::size_t line = 0;
  std::size_t n = 0;
  std::vector<std::vector<double>> nodes;
  std::vector<std::array<std::size_t, 3>> edges;
  int label = 0;
  std::size_t f = 0;
  bool directed = false;
};

inline RawRecord parse_record(const ordered_json& j, std::size_t line) {
  auto fail = [line](const std::string& what) {
    return ValidationError("line " + std::to_string(line) + ": " + what);
  };
  if (!j.is_object()) throw fail("record is not a JSON object");
  for (const char* key : {"n", "nodes", "edges"})
    if (!j.contains(key)) throw fail(std::string("missing key '") + key + "'");
  RawRecord r;
  r.line = line;
  if (!j["n"].is_number_integer() || j["n"].get<long long>() < 1) throw fail("'n' must be a positive integer");
  r.n = j["n"].get<std::size_t>();
  if (!j["nodes"].is_array() || j["nodes"].size() != r.n) throw fail("'nodes' must hold n rows");
  std::size_t width = 0;
  for (const auto& row : j["nodes"]) {
    if (!row.is_array() || row.empty()) throw fail("node rows must be non-empty arrays");
    if (width == 0) width = row.size();
    if (row.size() != width) throw fail("node rows differ in width");
    std::vector<double> vals;
    for (const auto& v : row) {
      if (!v.is_number()) throw fail("node features must be numbers");
      vals.push_back(v.get<double>());
    }
    r.nodes.push_back(std::move(vals));
  }
  if (!j["edges"].is_array()) throw fail("'edges' must be an array");
  for (const auto& e : j["edges"]) {
    if (!e.is_array() || e.size() != 3) throw fail("edges must be [i, j, channel] triples");
    for (const auto& v : e)
      if (!v.is_number_integer() || v.get<long long>() < 0) throw fail("edge entries must be non-negative integers");
    std::array<std::size_t, 3> t{e[0].get<std::size_t>(), e[1].get<std::size_t>(), e[2].get<std::size_t>()};
    if (t[0] >= r.n || t[1] >= r.n) throw fail("edge endpoint out of range");
    if (t[0] == t[1]) throw fail("self-loop on node " + std::to_string(t[0]));
    r.edges.push_back(t);
  }
  if (j.contains("class")) {
    if (!j["class"].is_number_integer()) throw fail("'class' must be an integer");
    r.label = j["class"].get<int>();
  }
  if (j.contains("f")) {
    if (!j["f"].is_number_integer() || j["f"].get<long long>() < 1) throw fail("'f' must be a positive integer");
    r.f = j["f"].get<std::size_t>();
  }
  if (j.contains("directed")) r.directed = j["directed"].get<bool>();
  return r;
}

inline Graph build_graph(const RawRecord& r, std::size_t F) {
  auto fail = [&r](const std::string& what) {
    return ValidationError("line " + std::to_string(r.line) + ": " + what);
  };
  const std::size_t N = r.n, D = r.nodes[0].size();
  Tensor x({N, D});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d) x(i, d) = r.nodes[i][d];
  Tensor b({N, N, F});
  if (F > 1)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j)
        if (i != j) b.at(i, j, 0) = 1.0;
  const bool full_listing = std::any_of(r.edges.begin(), r.edges.end(), [](const auto& e) { return e[0] > e[1]; });
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> listed;
  for (const auto& e : r.edges) {
    if (e[2] >= F) throw fail("edge channel " + std::to_string(e[2]) + " out of range for F=" + std::to_string(F));
    if (F > 1 && e[2] == 0) throw fail("channel 0 denotes 'no edge' on categorical edges");
    listed[{e[0], e[1]}] = e[2];
  }
  if (!r.directed && full_listing) {
    for (const auto& [ij, c] : listed) {
      auto it = listed.find({ij.second, ij.first});
      if (it == listed.end() || it->second != c)
        throw fail("asymmetric edge (" + std::to_string(ij.first) + "," + std::to_string(ij.second) +
                   ") on undirected data");
    }
  }
  auto set = [&](std::size_t i, std::size_t j, std::size_t c) {
    if (F > 1) b.at(i, j, 0) = 0.0;
    b.at(i, j, c) = 1.0;
  };
  for (const auto& [ij, c] : listed) {
    set(ij.first, ij.second, c);
    if (!r.directed) set(ij.second, ij.first, c);
  }
  try {
    return Graph(std::move(x), std::move(b), !r.directed);
  } catch (const ValidationError& e) {
    throw fail(e.what());
  }
}

}  // namespace detail

inline GraphFile parse_graph_stream(std::istream& is, const LoadOptions& opts = {}) {
  GraphFile out;
  std::vector<detail::RawRecord> raw;
  std::string text;
  std::size_t line = 0;
  while (std::getline(is, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("line " + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
    }
    if (j.is_object() && j.contains("meta")) {
      out.meta = j["meta"];
      continue;
    }
    raw.push_back(detail::parse_record(j, line));
  }
  std::size_t F = opts.edge_channels;
  if (opts.molecular) F = kBondTypes;
  if (F == 0) {
    F = 1;
    for (const auto& r : raw) {
      if (r.f) F = std::max(F, r.f);
      for (const auto& e : r.edges) F = std::max(F, e[2] + 1);
    }
  }
  for (const auto& r : raw) {
    if (r.f && r.f != F)
      throw ValidationError("line " + std::to_string(r.line) + ": 'f'=" + std::to_string(r.f) +
                            " disagrees with file edge width " + std::to_string(F));
    Graph g = detail::build_graph(r, F);
    if (opts.molecular) {
      if (g.node_dim() != kAtomTypes)
        throw ValidationError("line " + std::to_string(r.line) + ": molecular nodes need " +
                              std::to_string(kAtomTypes) + " atom channels");
      try {
        g.require_one_hot_nodes();
      } catch (const ValidationError& e) {
        throw ValidationError("line " + std::to_string(r.line) + ": " + e.what());
      }
    }
    out.graphs.push_back({std::move(g), r.label});
  }
  return out;
}

inline GraphFile load_graph_file(const std::string& path, const LoadOptions& opts = {}) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open graph file '" + path + "'");
  return parse_graph_stream(is, opts);
}

inline ordered_json graph_record(const Graph& g, int label) {
  ordered_json j;
  j["n"] = g.n();
  ordered_json nodes = ordered_json::array();
  for (std::size_t i = 0; i < g.n(); ++i) {
    ordered_json row = ordered_json::array();
    for (double v : g.node_features().row(i)) row.push_back(v);
    nodes.push_back(std::move(row));
  }
  j["nodes"] = std::move(nodes);
  ordered_json edges = ordered_json::array();
  for (std::size_t i = 0; i < g.n(); ++i)
    for (std::size_t k = g.undirected() ? i + 1 : 0; k < g.n(); ++k) {
      if (!g.has_edge(i, k)) continue;
      edges.push_back({i, k, g.edge_dim() == 1 ? std::size_t{0} : g.edge_class(i, k)});
    }
  j["edges"] = std::move(edges);
  j["class"] = label;
  if (g.edge_dim() != 1) j["f"] = g.edge_dim();
  if (!g.undirected()) j["directed"] = true;
  return j;
}

inline void write_graph_stream(std::ostream& os, const std::vector<LabeledGraph>& graphs,
                               const std::optional<ordered_json>& meta = std::nullopt) {
  if (meta) os << ordered_json{{"meta", *meta}}.dump() << '\n';
  for (const auto& lg : graphs) os << graph_record(lg.graph, lg.label).dump() << '\n';
}

inline void save_graph_file(const std::string& path, const std::vector<LabeledGraph>& graphs,
                            const std::optional<ordered_json>& meta = std::nullopt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open '" + path + "' for writing");
  write_graph_stream(os, graphs, meta);
  if (!os) throw ValidationError("write failed for '" + path + "'");
}

}  // namespace mag
