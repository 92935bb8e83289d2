#pragma once

// End-to-end stages behind the command-line tool.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mag/checkpoint.hpp"
#include "mag/complexity.hpp"
#include "mag/config.hpp"
#include "mag/graph_io.hpp"
#include "mag/metrics.hpp"
#include "mag/molecule.hpp"
#include "mag/tokenizer.hpp"
#include "mag/transformer.hpp"

namespace mag {

inline const char* kMetricsHeader = "epoch,loss,accuracy,wall_seconds";

/// Default directory for dataset files: $MAG_DATA_DIR, else "data".
inline std::string default_data_dir() {
  const char* d = std::getenv("MAG_DATA_DIR");
  return d && *d ? d : "data";
}

inline std::vector<LabeledGraph> build_dataset(const RunConfig& cfg, std::uint64_t seed, const std::string& input = {}) {
  if (cfg.dataset == "community_small" && input.empty()) {
    if (cfg.min_nodes % 2 || cfg.max_nodes % 2)
      throw ValidationError("community_small needs even node bounds (two equal communities)");
    return community_small_dataset(seed, cfg.dataset_count, cfg.min_nodes, cfg.max_nodes);
  }
  const std::string path = input.empty() ? cfg.dataset_path : input;
  if (path.empty()) throw UsageError("from_file dataset needs an input path");
  return load_graph_file(path).graphs;
}

/// Training graphs: an explicit file when given, otherwise the configured
/// dataset rebuilt from the run seed.
inline std::vector<LabeledGraph> load_training_graphs(const RunConfig& cfg, const std::string& data_path) {
  if (!data_path.empty()) return load_graph_file(data_path).graphs;
  return build_dataset(cfg, cfg.seed);
}

struct DataSplit {
  std::vector<LabeledGraph> train;
  std::vector<LabeledGraph> test;
};

inline DataSplit split_dataset(const std::vector<LabeledGraph>& graphs, const RunConfig& cfg) {
  DatasetSpec spec;
  spec.train_fraction = cfg.train_fraction;
  spec.seed = cfg.seed;
  const auto s = split_indices(graphs.size(), spec);
  DataSplit out;
  for (auto i : s.train) out.train.push_back(graphs[i]);
  for (auto i : s.test) out.test.push_back(graphs[i]);
  if (out.train.empty()) throw ValidationError("dataset too small: empty training split");
  return out;
}

inline std::vector<Graph> graphs_of(const std::vector<LabeledGraph>& lg) {
  std::vector<Graph> out;
  out.reserve(lg.size());
  for (const auto& g : lg) out.push_back(g.graph);
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct StageOptions {
  std::string data_path;
  std::string checkpoint;           // output (and resume source)
  std::string metrics_log;          // CSV; empty = checkpoint + ".metrics.csv"
  std::string tokenizer_checkpoint; // transformer stage prerequisite
  bool resume = false;
  std::ostream* progress = nullptr;
};

struct StageSummary {
  std::size_t epochs_done = 0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  double test_edge_accuracy = 0.0;
  double test_node_accuracy = 0.0;
  double test_token_accuracy = 0.0;
};

namespace detail {

inline std::ofstream open_metrics_log(const std::string& path, bool append) {
  const bool fresh = !append || !std::filesystem::exists(path);
  std::ofstream os(path, fresh ? std::ios::trunc : std::ios::app);
  if (!os) throw ValidationError("cannot open metrics log '" + path + "'");
  if (fresh) os << kMetricsHeader << '\n';
  return os;
}

inline void log_epoch(std::ostream& os, const EpochRecord& r) {
  os << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.accuracy) << ','
     << std::setprecision(6) << r.wall_seconds << '\n';
  os.flush();
}

inline std::string join_sizes(const std::vector<LabeledGraph>& gs) {
  std::string s;
  for (const auto& g : gs) s += (s.empty() ? "" : ",") + std::to_string(g.graph.n());
  return s;
}

inline std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string t; std::getline(ss, t, ',');) out.push_back(std::stoull(t));
  return out;
}

}  // namespace detail

inline StageSummary train_tokenizer_stage(const RunConfig& cfg, const StageOptions& opt) {
  const auto split = split_dataset(load_training_graphs(cfg, opt.data_path), cfg);
  const auto& first = split.train.front().graph;
  TokenizerConfig tcfg = cfg.tokenizer;
  tcfg.node_dim = first.node_dim();
  tcfg.edge_dim = first.edge_dim();

  Checkpoint resume_ck;
  const bool resuming = opt.resume && std::filesystem::exists(opt.checkpoint);
  if (resuming) resume_ck = Checkpoint::load(opt.checkpoint);
  Tokenizer tok = resuming ? Tokenizer::load(resume_ck, tcfg) : Tokenizer(tcfg, cfg.seed);
  TokenizerTrainer trainer(tok, cfg.tokenizer_train());
  if (resuming) trainer.load_state(resume_ck);

  const std::string log_path = opt.metrics_log.empty() ? opt.checkpoint + ".metrics.csv" : opt.metrics_log;
  auto log = detail::open_metrics_log(log_path, resuming);
  const auto tensors = to_tensors(graphs_of(split.train));
  StageSummary sum;
  while (trainer.epochs_done() < cfg.tokenizer_epochs) {
    const auto rec = trainer.train_epoch(tensors);
    detail::log_epoch(log, rec);
    if (opt.progress) *opt.progress << "tokenizer epoch " << rec.epoch << " loss " << rec.loss << " edge_acc " << rec.accuracy << '\n';
    sum.final_loss = rec.loss;
    sum.final_accuracy = rec.accuracy;
  }
  sum.epochs_done = trainer.epochs_done();
  if (!split.test.empty()) {
    const auto acc = tok.evaluate(graphs_of(split.test));
    sum.test_edge_accuracy = acc.edge();
    sum.test_node_accuracy = acc.node();
  }
  Checkpoint ck;
  trainer.save(ck);
  ck.meta["data.sizes"] = detail::join_sizes(split.train);
  ck.save(opt.checkpoint);
  return sum;
}

inline StageSummary train_transformer_stage(const RunConfig& cfg, const StageOptions& opt) {
  if (opt.tokenizer_checkpoint.empty() || !std::filesystem::exists(opt.tokenizer_checkpoint))
    throw ValidationError("transformer stage needs a trained tokenizer checkpoint (missing '" + opt.tokenizer_checkpoint +
                          "')");
  const Checkpoint tok_ck = Checkpoint::load(opt.tokenizer_checkpoint);
  const Tokenizer tok = Tokenizer::load(tok_ck, cfg.tokenizer);
  const auto split = split_dataset(load_training_graphs(cfg, opt.data_path), cfg);

  TransformerConfig tc = cfg.transformer;
  tc.vocab = tok.config().codebook_size;
  tc.code_dim = tok.config().latent;
  tc.class_count = cfg.class_count;
  for (const auto& g : split.train) {
    if (g.label < 0) throw ValidationError("negative class label in training data");
    tc.class_count = std::max(tc.class_count, static_cast<std::size_t>(g.label) + 1);
  }

  Checkpoint resume_ck;
  const bool resuming = opt.resume && std::filesystem::exists(opt.checkpoint);
  if (resuming) resume_ck = Checkpoint::load(opt.checkpoint);
  ScaleTransformer model = resuming ? ScaleTransformer::load(resume_ck, tc) : ScaleTransformer(tc, cfg.seed + 2);
  const Tensor& book = tok.codebook().vectors().value();
  TransformerTrainer trainer(model, book, cfg.transformer_train());
  if (resuming) trainer.load_state(resume_ck);

  const auto train = teacher_examples(tok, split.train);
  const std::string log_path = opt.metrics_log.empty() ? opt.checkpoint + ".metrics.csv" : opt.metrics_log;
  auto log = detail::open_metrics_log(log_path, resuming);
  StageSummary sum;
  while (trainer.epochs_done() < cfg.transformer_epochs) {
    const auto rec = trainer.train_epoch(train);
    detail::log_epoch(log, rec);
    if (opt.progress) *opt.progress << "transformer epoch " << rec.epoch << " loss " << rec.loss << " token_acc " << rec.accuracy << '\n';
    sum.final_loss = rec.loss;
    sum.final_accuracy = rec.accuracy;
  }
  sum.epochs_done = trainer.epochs_done();
  if (!split.test.empty()) sum.test_token_accuracy = trainer.evaluate(teacher_examples(tok, split.test));
  Checkpoint ck;
  trainer.save(ck);
  ck.meta["data.sizes"] = detail::join_sizes(split.train);
  ck.meta["tokenizer.fingerprint"] = file_fingerprint(opt.tokenizer_checkpoint);
  ck.meta["tokenizer.codebook_fingerprint"] = tensor_fingerprint(book);
  ck.save(opt.checkpoint);
  return sum;
}

// ---------------------------------------------------------------------------
// Generation

struct GenerateOptions {
  std::string tokenizer_checkpoint;
  std::string transformer_checkpoint;
  std::size_t count = 50;
  int class_label = 0;
  std::uint64_t seed = 0;
  std::size_t nodes = 0;  // 0 = draw from the training size histogram
};

struct GeneratedSet {
  std::vector<LabeledGraph> graphs;
  ordered_json meta;
};

/// Loads both checkpoints and samples `count` graphs. The metadata records
/// seconds from the start of the call to the last sample.
inline GeneratedSet generate_samples(const RunConfig& cfg, const GenerateOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto* p : {&opt.tokenizer_checkpoint, &opt.transformer_checkpoint})
    if (!std::filesystem::exists(*p)) throw ValidationError("missing checkpoint '" + *p + "'");
  const Checkpoint tok_ck = Checkpoint::load(opt.tokenizer_checkpoint);
  const Checkpoint tf_ck = Checkpoint::load(opt.transformer_checkpoint);
  const Tokenizer tok = Tokenizer::load(tok_ck, cfg.tokenizer);
  TransformerConfig tc = cfg.transformer;
  const ScaleTransformer model = ScaleTransformer::load(tf_ck, tc);
  const Tensor& book = tok.codebook().vectors().value();
  model.check_codebook(book);
  if (auto it = tf_ck.meta.find("tokenizer.codebook_fingerprint");
      it != tf_ck.meta.end() && it->second != tensor_fingerprint(book))
    throw ValidationError("transformer checkpoint was trained against a different codebook");
  if (opt.class_label < 0 || static_cast<std::size_t>(opt.class_label) >= model.config().class_count)
    throw UsageError("class label " + std::to_string(opt.class_label) + " outside [0, " +
                     std::to_string(model.config().class_count) + ")");
  SizeDistribution sizes;
  if (opt.nodes == 0) {
    auto it = tf_ck.meta.find("data.sizes");
    if (it == tf_ck.meta.end()) throw ValidationError("transformer checkpoint has no size histogram; pass a node count");
    sizes = SizeDistribution(detail::split_sizes(it->second));
  }

  std::mt19937_64 rng(opt.seed);
  GeneratedSet out;
  std::map<std::size_t, std::vector<std::size_t>> schedules;
  for (std::size_t i = 0; i < opt.count; ++i) {
    const std::size_t n = opt.nodes ? opt.nodes : sizes.sample(rng);
    auto res = generate_graph(model, tok, opt.class_label, n, rng, cfg.sampling);
    schedules[n] = res.tokens.schedule.lengths();
    out.graphs.push_back({std::move(res.graph), opt.class_label});
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  out.meta["seed"] = opt.seed;
  out.meta["count"] = opt.count;
  out.meta["class"] = opt.class_label;
  out.meta["tokenizer_checkpoint_hash"] = file_fingerprint(opt.tokenizer_checkpoint);
  out.meta["transformer_checkpoint_hash"] = file_fingerprint(opt.transformer_checkpoint);
  ordered_json sched = ordered_json::object();
  for (const auto& [n, s] : schedules) sched[std::to_string(n)] = s;
  out.meta["schedules"] = std::move(sched);
  out.meta["top_k"] = cfg.sampling.top_k;
  out.meta["top_p"] = cfg.sampling.top_p;
  out.meta["temperature"] = cfg.sampling.temperature;
  out.meta["wall_seconds"] = secs;
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvaluationReport {
  std::vector<std::pair<std::string, std::string>> values;
  std::string per_graph_csv;

  std::string text() const {
    std::string s;
    for (const auto& [k, v] : values) s += k + " = " + v + "\n";
    return s;
  }
  const std::string& get(const std::string& key) const {
    for (const auto& kv : values)
      if (kv.first == key) return kv.second;
    throw UsageError("report has no key '" + key + "'");
  }
};

inline bool looks_molecular(const std::vector<LabeledGraph>& gs) {
  if (gs.empty()) return false;
  auto mol = [](const Graph& g) { return g.node_dim() == kAtomTypes && g.edge_dim() == kBondTypes; };
  const bool first = mol(gs.front().graph);
  for (const auto& g : gs)
    if (mol(g.graph) != first) throw ValidationError("graph file mixes molecular and generic graphs");
  return first;
}

inline EvaluationReport evaluate_sets(const std::vector<LabeledGraph>& generated, const std::vector<LabeledGraph>& reference,
                                      const RunConfig& cfg) {
  const bool mol_gen = looks_molecular(generated), mol_ref = looks_molecular(reference);
  if (mol_gen != mol_ref)
    throw ValidationError(std::string("schema mismatch: generated graphs are ") + (mol_gen ? "molecular" : "generic") +
                          ", reference graphs are " + (mol_ref ? "molecular" : "generic"));
  const auto gen = graphs_of(generated), ref = graphs_of(reference);
  EvaluationReport r;
  auto put = [&](const std::string& k, double v) { r.values.emplace_back(k, detail::format_double(v)); };
  const auto mmd = graph_mmd(gen, ref, cfg.mmd);
  r.values.emplace_back("generated_count", std::to_string(gen.size()));
  r.values.emplace_back("reference_count", std::to_string(ref.size()));
  put("degree_mmd", mmd.degree_mmd);
  put("clustering_mmd", mmd.clustering_mmd);
  put("orbit_mmd", mmd.orbit_mmd);
  put("mmd_sigma", mmd.sigma);
  r.values.emplace_back("clustering_bins", std::to_string(mmd.clustering_bins));
  std::size_t two = 0;
  std::ostringstream csv;
  csv << "index,n,edges,mean_degree,mean_clustering,modularity\n";
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const auto split = spectral_bisection(gen[i]);
    two += split.modularity > 0.2;
    const auto c = clustering_stats(gen[i]);
    double mc = 0.0;
    for (double v : c) mc += v;
    csv << i << ',' << gen[i].n() << ',' << gen[i].edge_count() << ','
        << detail::format_double(2.0 * static_cast<double>(gen[i].edge_count()) / static_cast<double>(gen[i].n())) << ','
        << detail::format_double(mc / static_cast<double>(c.size())) << ',' << detail::format_double(split.modularity)
        << '\n';
  }
  r.per_graph_csv = csv.str();
  put("two_community_fraction", static_cast<double>(two) / static_cast<double>(gen.size()));
  if (mol_gen) {
    const auto m = molecule_report(gen, ref);
    put("validity", m.validity);
    put("uniqueness", m.uniqueness);
    put("novelty", m.novelty);
    r.values.emplace_back("no_valid_samples", m.no_valid_samples ? "true" : "false");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Complexity benchmark

/// CSV rows for N = 1..max_n plus slopes over N = 16, 32, ... <= max_n.
inline std::string bench_csv(std::size_t max_n, std::size_t growth = 2) {
  if (max_n < 1) throw UsageError("bench: max N must be >= 1");
  std::vector<std::size_t> ns(max_n);
  std::iota(ns.begin(), ns.end(), 1);
  const auto curve = cost_curve(ns, growth);
  std::ostringstream os;
  os << "n,node_wise,scale_wise,scales\n";
  for (const auto& p : curve.points) os << p.n << ',' << p.node_wise << ',' << p.scale_wise << ',' << p.scales << '\n';
  return os.str();
}

inline std::vector<std::size_t> bench_fit_sizes(std::size_t max_n) {
  std::vector<std::size_t> ns;
  for (std::size_t n = 16; n <= max_n; n *= 2) ns.push_back(n);
  return ns;
}

}  // namespace mag
