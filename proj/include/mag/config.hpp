#pragma once

// Run configuration: sectioned `key = value` text. Every key has a default,
// so an empty file gives the reference hyperparameters.

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mag/graph.hpp"
#include "mag/metrics.hpp"
#include "mag/sampling.hpp"
#include "mag/tokenizer.hpp"
#include "mag/transformer.hpp"

namespace mag {

struct RunConfig {
  TokenizerConfig tokenizer;
  double tokenizer_lr = 3e-5;
  std::size_t tokenizer_epochs = 100;

  TransformerConfig transformer;
  double transformer_lr = 3e-5;
  std::size_t transformer_epochs = 100;

  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  std::size_t batch_size = 12;

  SamplingConfig sampling;

  std::string dataset = "community_small";
  std::string dataset_path;
  std::size_t dataset_count = 100;
  std::size_t min_nodes = 12;
  std::size_t max_nodes = 20;
  double train_fraction = 0.8;
  std::size_t class_count = 1;

  MmdConfig mmd;

  std::uint64_t seed = 0;
  std::string tokenizer_checkpoint = "tokenizer.ckpt";
  std::string transformer_checkpoint = "transformer.ckpt";

  AdamConfig adam(double lr) const {
    AdamConfig a;
    a.lr = lr;
    a.beta1 = beta1;
    a.beta2 = beta2;
    a.weight_decay = weight_decay;
    a.eps = adam_eps;
    return a;
  }

  TrainConfig tokenizer_train() const {
    TrainConfig t;
    t.epochs = tokenizer_epochs;
    t.batch_size = batch_size;
    t.adam = adam(tokenizer_lr);
    t.seed = seed;
    return t;
  }

  TrainConfig transformer_train() const {
    TrainConfig t;
    t.epochs = transformer_epochs;
    t.batch_size = batch_size;
    t.adam = adam(transformer_lr);
    t.seed = seed + 1;
    return t;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Field number_field(T& ref) {
  return {[&ref](const std::string& v) {
            std::size_t used = 0;
            if constexpr (std::is_floating_point_v<T>) {
              ref = std::stod(v, &used);
            } else {
              if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
              ref = static_cast<T>(std::stoull(v, &used));
            }
            if (used != v.size()) throw std::invalid_argument("trailing characters");
          },
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) return format_double(ref);
            else return std::to_string(ref);
          }};
}

inline Field string_field(std::string& ref) {
  return {[&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

inline Field bool_field(bool& ref) {
  return {[&ref](const std::string& v) {
            if (v == "true") ref = true;
            else if (v == "false") ref = false;
            else throw std::invalid_argument("expected true or false");
          },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

inline Field list_field(std::vector<std::size_t>& ref) {
  return {[&ref](const std::string& v) {
            std::vector<std::size_t> out;
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) {
              item = trim(item);
              std::size_t used = 0;
              if (item.empty() || item[0] == '-') throw std::invalid_argument("bad list entry");
              out.push_back(std::stoull(item, &used));
              if (used != item.size()) throw std::invalid_argument("bad list entry");
            }
            if (out.empty()) throw std::invalid_argument("empty list");
            ref = std::move(out);
          },
          [&ref] {
            std::string s;
            for (auto v : ref) s += (s.empty() ? "" : ",") + std::to_string(v);
            return s;
          }};
}

/// Ordered (section, key) -> field table over a config instance.
inline std::vector<std::pair<std::string, std::vector<std::pair<std::string, Field>>>> fields(RunConfig& c) {
  return {
      {"tokenizer",
       {{"encoder_layers", number_field(c.tokenizer.encoder_layers)},
        {"decoder_layers", number_field(c.tokenizer.decoder_layers)},
        {"hidden", number_field(c.tokenizer.hidden)},
        {"latent", number_field(c.tokenizer.latent)},
        {"codebook_size", number_field(c.tokenizer.codebook_size)},
        {"edge_hidden", number_field(c.tokenizer.edge_hidden)},
        {"commitment", number_field(c.tokenizer.commitment)},
        {"gamma", number_field(c.tokenizer.gamma)},
        {"node_weight", number_field(c.tokenizer.node_weight)},
        {"edge_weight", number_field(c.tokenizer.edge_weight)},
        {"independent_scales", bool_field(c.tokenizer.independent_scales)},
        {"scale_base", list_field(c.tokenizer.scale_base)},
        {"lr", number_field(c.tokenizer_lr)},
        {"epochs", number_field(c.tokenizer_epochs)}}},
      {"transformer",
       {{"blocks", number_field(c.transformer.blocks)},
        {"hidden", number_field(c.transformer.hidden)},
        {"heads", number_field(c.transformer.heads)},
        {"level_embedding_dim", number_field(c.transformer.level_dim)},
        {"mlp_ratio", number_field(c.transformer.mlp_ratio)},
        {"layer_dropout", number_field(c.transformer.layer_dropout)},
        {"conditional_dropout", number_field(c.transformer.cond_dropout)},
        {"token_dropout", number_field(c.transformer.token_dropout)},
        {"max_levels", number_field(c.transformer.max_levels)},
        {"temperature_init", number_field(c.transformer.temperature_init)},
        {"lr", number_field(c.transformer_lr)},
        {"epochs", number_field(c.transformer_epochs)}}},
      {"optim",
       {{"weight_decay", number_field(c.weight_decay)},
        {"beta1", number_field(c.beta1)},
        {"beta2", number_field(c.beta2)},
        {"eps", number_field(c.adam_eps)},
        {"batch_size", number_field(c.batch_size)}}},
      {"sampling",
       {{"top_k", number_field(c.sampling.top_k)},
        {"top_p", number_field(c.sampling.top_p)},
        {"temperature", number_field(c.sampling.temperature)}}},
      {"data",
       {{"dataset", string_field(c.dataset)},
        {"path", string_field(c.dataset_path)},
        {"count", number_field(c.dataset_count)},
        {"min_nodes", number_field(c.min_nodes)},
        {"max_nodes", number_field(c.max_nodes)},
        {"train_fraction", number_field(c.train_fraction)},
        {"class_count", number_field(c.class_count)}}},
      {"eval",
       {{"mmd_sigma", number_field(c.mmd.sigma)},
        {"clustering_bins", number_field(c.mmd.clustering_bins)},
        {"orbit_max_nodes", number_field(c.mmd.orbit_max_nodes)}}},
      {"run",
       {{"seed", number_field(c.seed)},
        {"tokenizer_checkpoint", string_field(c.tokenizer_checkpoint)},
        {"transformer_checkpoint", string_field(c.transformer_checkpoint)}}},
  };
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  try {
    c.tokenizer.validate();
    c.transformer.validate();
  } catch (const UsageError& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (c.batch_size < 1) throw ValidationError("config: optim.batch_size must be >= 1");
  if (c.sampling.top_k < 1) throw ValidationError("config: sampling.top_k must be >= 1");
  if (!(c.sampling.top_p > 0.0 && c.sampling.top_p <= 1.0)) throw ValidationError("config: sampling.top_p must lie in (0, 1]");
  if (!(c.sampling.temperature > 0.0)) throw ValidationError("config: sampling.temperature must be positive");
  if (c.dataset != "community_small" && c.dataset != "from_file")
    throw ValidationError("config: data.dataset must be community_small or from_file, got '" + c.dataset + "'");
  if (c.min_nodes < 2 || c.min_nodes > c.max_nodes) throw ValidationError("config: need 2 <= min_nodes <= max_nodes");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ValidationError("config: train_fraction must lie in (0, 1)");
  if (c.class_count < 1) throw ValidationError("config: class_count must be >= 1");
  if (!(c.mmd.sigma > 0.0)) throw ValidationError("config: eval.mmd_sigma must be positive");
}

inline RunConfig parse_config(std::istream& is, const std::string& source = "<config>") {
  RunConfig c;
  auto table = detail::fields(c);
  std::string section, line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    return ValidationError(source + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    line = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail("malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (std::none_of(table.begin(), table.end(), [&](const auto& s) { return s.first == section; }))
        throw fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("expected key = value");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (section.empty()) throw fail("key '" + key + "' outside any section");
    auto sec = std::find_if(table.begin(), table.end(), [&](const auto& s) { return s.first == section; });
    auto field = std::find_if(sec->second.begin(), sec->second.end(), [&](const auto& f) { return f.first == key; });
    if (field == sec->second.end()) throw fail("unknown key '" + key + "' in [" + section + "]");
    try {
      field->second.set(value);
    } catch (const std::exception&) {
      throw fail("bad value '" + value + "' for " + section + "." + key);
    }
  }
  validate(c);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

inline std::string serialize_config(const RunConfig& config) {
  RunConfig c = config;
  std::ostringstream os;
  bool first = true;
  for (const auto& [section, entries] : detail::fields(c)) {
    os << (first ? "" : "\n") << "[" << section << "]\n";
    first = false;
    for (const auto& [key, f] : entries) os << key << " = " << f.get() << "\n";
  }
  return os.str();
}

}  // namespace mag
