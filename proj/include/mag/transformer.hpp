#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mag/autograd.hpp"
#include "mag/checkpoint.hpp"
#include "mag/nn.hpp"
#include "mag/optim.hpp"
#include "mag/sampling.hpp"
#include "mag/schedule.hpp"
#include "mag/tokenizer.hpp"

namespace mag {

struct TransformerConfig {
  std::size_t blocks = 8;
  std::size_t hidden = 256;
  std::size_t heads = 8;
  std::size_t level_dim = 256;
  std::size_t mlp_ratio = 4;
  double layer_dropout = 0.1;
  double cond_dropout = 0.1;
  double token_dropout = 0.05;
  std::size_t vocab = 1024;
  std::size_t code_dim = 16;
  std::size_t class_count = 1;
  std::size_t max_levels = 32;
  double temperature_init = 10.0;

  void validate() const {
    if (blocks < 1) throw UsageError("transformer: blocks must be >= 1");
    if (heads < 1 || hidden % heads != 0)
      throw UsageError("transformer: hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                       std::to_string(heads) + ")");
    if (vocab < 1 || code_dim < 1 || class_count < 1 || max_levels < 1 || level_dim < 1 || mlp_ratio < 1)
      throw UsageError("transformer: sizes must be >= 1");
    for (double r : {layer_dropout, cond_dropout, token_dropout})
      if (r < 0.0 || r >= 1.0) throw UsageError("transformer: dropout rates must lie in [0, 1)");
  }
};

/// Cached keys and values for one block.
struct LayerCache {
  Tensor keys;
  Tensor values;
};

struct KVCache {
  std::vector<LayerCache> layers;
  std::size_t filled = 0;
};

/// Elementwise exponential.
inline Var exp(const Var& t) {
  Tensor out = t.value();
  for (auto& e : out.values()) e = std::exp(e);
  Tensor saved = out;
  return detail::make_result(std::move(out), {t}, [saved](Node& self) {
    auto* g = detail::grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < saved.size(); ++i) (*g)[i] += self.grad[i] * saved[i];
  });
}

/// Additive attention mask: 0 where allowed, -1e30 where blocked.
inline Tensor additive_mask(const std::vector<std::vector<bool>>& allowed) {
  const std::size_t L = allowed.size();
  Tensor m({L, L});
  for (std::size_t p = 0; p < L; ++p)
    for (std::size_t q = 0; q < L; ++q) m(p, q) = allowed[p][q] ? 0.0 : -1e30;
  return m;
}

/// Pre-norm block with AdaLN modulation and cosine multi-head attention.
struct TransformerBlock {
  std::size_t heads = 0;
  Linear q, k, v, o;
  Var log_temperature;  // 1 x heads; temperature = exp(.)
  Linear fc1, fc2;
  Linear ada;  // cond -> [shift1 | scale1 | shift2 | scale2]

  TransformerBlock() = default;
  TransformerBlock(ParameterStore& store, const std::string& name, const TransformerConfig& cfg, std::mt19937_64& rng)
      : heads(cfg.heads) {
    const std::size_t H = cfg.hidden;
    q = Linear(store, name + ".attn.q", H, H, rng);
    k = Linear(store, name + ".attn.k", H, H, rng);
    v = Linear(store, name + ".attn.v", H, H, rng);
    o = Linear(store, name + ".attn.o", H, H, rng);
    log_temperature = store.add(name + ".attn.log_temperature", Tensor({1, cfg.heads}, std::log(cfg.temperature_init)));
    fc1 = Linear(store, name + ".mlp.fc1", H, H * cfg.mlp_ratio, rng);
    fc2 = Linear(store, name + ".mlp.fc2", H * cfg.mlp_ratio, H, rng);
    ada = Linear(store, name + ".adaln", H, 4 * H, rng);
    for (auto& w : ada.weight.mutable_value().values()) w *= 0.1;
  }

  static Var modulate(const Var& x, const Var& shift, const Var& scl) {
    return add(mul(layer_norm(x), add(scl, Var::constant(Tensor({1, scl.cols()}, 1.0)))), shift);
  }

  /// `mask` is L x (cached + L) additive, or empty for no mask. With a cache,
  /// keys and values of earlier positions are read from and appended to it.
  Var attention(const Var& a, const Tensor& mask, LayerCache* cache) const {
    const std::size_t H = a.cols(), dh = H / heads;
    Var qs = q(a), ks = k(a), vs = v(a);
    if (cache && cache->keys.size() > 0) {
      ks = concat({Var::constant(cache->keys), ks}, 0);
      vs = concat({Var::constant(cache->values), vs}, 0);
    }
    if (cache) {
      cache->keys = ks.value();
      cache->values = vs.value();
    }
    if (!mask.empty() && (mask.rows() != a.rows() || mask.cols() != ks.rows()))
      throw DimensionError("attention: mask " + shape_str(mask.shape()) + " for " + std::to_string(a.rows()) +
                           " queries over " + std::to_string(ks.rows()) + " keys");
    Var temps = exp(log_temperature);
    std::vector<Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = l2_normalize_rows(slice_cols(qs, h * dh, dh));
      Var kh = l2_normalize_rows(slice_cols(ks, h * dh, dh));
      Var scores = mul(matmul(qh, transpose(kh)), slice_cols(temps, h, 1));
      if (!mask.empty()) scores = add(scores, Var::constant(mask));
      outs.push_back(matmul(softmax(scores, 1), slice_cols(vs, h * dh, dh)));
    }
    return o(heads == 1 ? outs[0] : concat(outs, 1));
  }

  Var operator()(const Var& x, const Var& cond, const Tensor& mask, LayerCache* cache, double drop,
                 std::mt19937_64* rng) const {
    const std::size_t H = x.cols();
    Var mod = ada(cond);
    Var shift1 = slice_cols(mod, 0, H), scale1 = slice_cols(mod, H, H);
    Var shift2 = slice_cols(mod, 2 * H, H), scale2 = slice_cols(mod, 3 * H, H);
    const bool training = rng != nullptr && drop > 0.0;
    Var y = add(x, training ? dropout(attention(modulate(x, shift1, scale1), mask, cache), drop, *rng, true)
                            : attention(modulate(x, shift1, scale1), mask, cache));
    Var m = fc2(relu(fc1(modulate(y, shift2, scale2))));
    return add(y, training ? dropout(m, drop, *rng, true) : m);
  }

};

/// Teacher-forcing inputs for one graph.
struct ScaleSequence {
  ScaleSchedule schedule;
  std::vector<std::size_t> targets;  // flattened r_1..r_K
  int label = 0;
};

struct TransformerForward {
  Var logits;  // sum(n_k) x V
  Var loss;
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// Mean cross-entropy over positions with nonzero weight.
inline Var next_scale_loss(const Var& logits, const std::vector<std::size_t>& targets, std::vector<double> weights = {}) {
  if (targets.size() != logits.rows())
    throw DimensionError("next_scale_loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.rows()) + " logit rows");
  if (weights.empty()) weights.assign(targets.size(), 1.0);
  const double w = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(w > 0.0)) throw DimensionError("next_scale_loss: no unmasked positions");
  return scale(cross_entropy_sum(logits, targets, weights), 1.0 / w);
}

class ScaleTransformer {
 public:
  ScaleTransformer() = default;
  ScaleTransformer(const TransformerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t H = cfg_.hidden;
    class_embedding_ = store_.add("class_embedding", normal_tensor({cfg_.class_count, H}, 0.02, rng));
    null_embedding_ = store_.add("null_embedding", normal_tensor({1, H}, 0.02, rng));
    mask_token_ = store_.add("mask_token", normal_tensor({1, H}, 0.02, rng));
    level_embedding_ = store_.add("level_embedding", normal_tensor({cfg_.max_levels, cfg_.level_dim}, 0.02, rng));
    if (cfg_.level_dim != H) level_proj_ = Linear(store_, "level_proj", cfg_.level_dim, H, rng, false);
    input_proj_ = Linear(store_, "input_proj", cfg_.code_dim, H, rng);
    for (std::size_t b = 0; b < cfg_.blocks; ++b) blocks_.emplace_back(store_, "block" + std::to_string(b), cfg_, rng);
    final_ada_ = Linear(store_, "final.adaln", H, 2 * H, rng);
    for (auto& w : final_ada_.weight.mutable_value().values()) w *= 0.1;
    head_ = Linear(store_, "head", H, cfg_.vocab, rng);
  }

  const TransformerConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  /// Conditioning vector: the class embedding, or the null embedding when
  /// conditional dropout fires.
  Var condition(int label, std::mt19937_64* rng = nullptr) const {
    if (label < 0 || static_cast<std::size_t>(label) >= cfg_.class_count)
      throw UsageError("class label " + std::to_string(label) + " outside [0, " + std::to_string(cfg_.class_count) + ")");
    if (rng && cfg_.cond_dropout > 0.0) {
      std::bernoulli_distribution drop(cfg_.cond_dropout);
      if (drop(*rng)) return null_embedding_;
    }
    return gather_rows(class_embedding_, {static_cast<std::size_t>(label)});
  }

  Var level(std::size_t k) const {
    if (k >= cfg_.max_levels)
      throw ValidationError("schedule has more than " + std::to_string(cfg_.max_levels) + " scales");
    Var e = gather_rows(level_embedding_, {k});
    return level_proj_.weight.defined() ? level_proj_(e) : e;
  }

  /// Input rows for scale k >= 1 (0-based) built from the previous scale's
  /// tokens: codes upsampled to n_k, projected, plus level embedding.
  Var scale_input(const Tensor& codebook, const std::vector<std::size_t>& prev_tokens, std::size_t n_k, std::size_t k,
                  std::mt19937_64* rng = nullptr) const {
    Tensor codes = upsample(select_codes(codebook, prev_tokens), n_k);
    Var x = input_proj_(Var::constant(std::move(codes)));
    if (rng && cfg_.token_dropout > 0.0) {
      std::bernoulli_distribution drop(cfg_.token_dropout);
      Tensor keep({n_k, 1}, 1.0), masked({n_k, 1});
      bool any = false;
      for (std::size_t i = 0; i < n_k; ++i)
        if (drop(*rng)) {
          keep(i, 0) = 0.0;
          masked(i, 0) = 1.0;
          any = true;
        }
      if (any) x = add(mul(x, Var::constant(keep)), matmul(Var::constant(masked), mask_token_));
    }
    return add(x, level(k));
  }

  /// Full teacher-forced input sequence of sum(n_k) rows.
  Var assemble_inputs(const Tensor& codebook, const MultiScaleTokens& tokens, const Var& cond,
                      std::mt19937_64* rng = nullptr) const {
    check_codebook(codebook);
    std::vector<Var> parts{add(cond, level(0))};
    for (std::size_t k = 1; k < tokens.schedule.scales(); ++k)
      parts.push_back(scale_input(codebook, tokens.maps[k - 1], tokens.schedule.length(k), k, rng));
    return parts.size() == 1 ? parts[0] : concat(parts, 0);
  }

  /// Runs the blocks and head. `mask` is additive (empty = none).
  Var run(const Var& x, const Var& cond, const Tensor& mask, KVCache* cache, std::mt19937_64* rng = nullptr) const {
    if (cache && cache->layers.size() != blocks_.size()) cache->layers.resize(blocks_.size());
    Var h = x;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      h = blocks_[b](h, cond, mask, cache ? &cache->layers[b] : nullptr, cfg_.layer_dropout, rng);
      if (!h.value().all_finite())
        throw NumericError("transformer: non-finite activations in block " + std::to_string(b));
    }
    if (cache) cache->filled += x.rows();
    Var mod = final_ada_(cond);
    const std::size_t H = cfg_.hidden;
    return head_(TransformerBlock::modulate(h, slice_cols(mod, 0, H), slice_cols(mod, H, H)));
  }

  /// Masked full-sequence forward over teacher-forced token maps.
  Var forward(const Tensor& codebook, const MultiScaleTokens& tokens, int label, std::mt19937_64* rng = nullptr) const {
    Var cond = condition(label, rng);
    Var x = assemble_inputs(codebook, tokens, cond, rng);
    return run(x, cond, additive_mask(block_causal_mask(position_levels(tokens.schedule, false))), nullptr, rng);
  }

  TransformerForward teacher_forced(const Tensor& codebook, const MultiScaleTokens& tokens, int label,
                                    std::mt19937_64* rng = nullptr) const {
    TransformerForward out;
    out.logits = forward(codebook, tokens, label, rng);
    const auto targets = tokens.flat();
    out.loss = next_scale_loss(out.logits, targets);
    for (std::size_t r = 0; r < targets.size(); ++r) out.correct += argmax_row(out.logits.value(), r) == targets[r];
    out.total = targets.size();
    return out;
  }

  void check_codebook(const Tensor& codebook) const {
    if (codebook.rows() != cfg_.vocab || codebook.cols() != cfg_.code_dim)
      throw ValidationError("codebook " + shape_str(codebook.shape()) + " does not match transformer vocab " +
                            std::to_string(cfg_.vocab) + " x " + std::to_string(cfg_.code_dim));
  }

  void save(Checkpoint& ck) const {
    const std::pair<const char*, std::size_t> sizes[] = {
        {"blocks", cfg_.blocks},       {"hidden", cfg_.hidden},       {"heads", cfg_.heads},
        {"level_dim", cfg_.level_dim}, {"mlp_ratio", cfg_.mlp_ratio}, {"vocab", cfg_.vocab},
        {"code_dim", cfg_.code_dim},   {"class_count", cfg_.class_count}, {"max_levels", cfg_.max_levels}};
    for (const auto& [k, v] : sizes) ck.meta[std::string("transformer.") + k] = std::to_string(v);
    ck.put_parameters(store_, "transformer.");
  }

  static ScaleTransformer load(const Checkpoint& ck, TransformerConfig cfg = {}) {
    auto num = [&](const char* k) {
      auto it = ck.meta.find(std::string("transformer.") + k);
      if (it == ck.meta.end()) throw ValidationError("checkpoint has no transformer section");
      return static_cast<std::size_t>(std::stoull(it->second));
    };
    cfg.blocks = num("blocks");
    cfg.hidden = num("hidden");
    cfg.heads = num("heads");
    cfg.level_dim = num("level_dim");
    cfg.mlp_ratio = num("mlp_ratio");
    cfg.vocab = num("vocab");
    cfg.code_dim = num("code_dim");
    cfg.class_count = num("class_count");
    cfg.max_levels = num("max_levels");
    ScaleTransformer t(cfg, 0);
    ck.load_parameters(t.store_, "transformer.");
    return t;
  }

 private:
  TransformerConfig cfg_;
  ParameterStore store_;
  Var class_embedding_, null_embedding_, mask_token_, level_embedding_;
  Linear level_proj_;
  Linear input_proj_;
  std::vector<TransformerBlock> blocks_;
  Linear final_ada_;
  Linear head_;
};

// ---------------------------------------------------------------------------
// Generation

/// Per-step logits from KV-cached stepwise decoding with teacher-supplied
/// token maps (used to compare against the masked full forward).
inline std::vector<Tensor> cached_step_logits(const ScaleTransformer& model, const Tensor& codebook,
                                              const MultiScaleTokens& tokens, int label) {
  NoGradGuard ng;
  model.check_codebook(codebook);
  KVCache cache;
  Var cond = model.condition(label);
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < tokens.schedule.scales(); ++k) {
    Var x = k == 0 ? add(cond, model.level(0))
                   : model.scale_input(codebook, tokens.maps[k - 1], tokens.schedule.length(k), k);
    out.push_back(model.run(x, cond, Tensor(), &cache).value());
  }
  return out;
}

struct GenerationResult {
  Graph graph;
  MultiScaleTokens tokens;
  std::size_t transformer_calls = 0;
};

/// Samples token maps scale by scale with a KV cache, then decodes them.
inline GenerationResult generate_graph(const ScaleTransformer& model, const Tokenizer& tokenizer, int label,
                                       std::size_t n_nodes, std::mt19937_64& rng, const SamplingConfig& sampling = {}) {
  NoGradGuard ng;
  const Tensor& codebook = tokenizer.codebook().vectors().value();
  model.check_codebook(codebook);
  if (n_nodes < 1) throw UsageError("generate: N must be >= 1");
  GenerationResult res;
  res.tokens.schedule = tokenizer.schedule_for(n_nodes);
  const auto& s = res.tokens.schedule;
  KVCache cache;
  Var cond = model.condition(label);
  const std::size_t V = model.config().vocab;
  for (std::size_t k = 0; k < s.scales(); ++k) {
    Var x = k == 0 ? add(cond, model.level(0)) : model.scale_input(codebook, res.tokens.maps[k - 1], s.length(k), k);
    Tensor logits = model.run(x, cond, Tensor(), &cache).value();
    ++res.transformer_calls;
    std::vector<std::size_t> r(s.length(k));
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = sample_logits(logits.data() + i * V, V, sampling, rng);
    res.tokens.maps.push_back(std::move(r));
  }
  res.graph = tokenizer.detokenize(res.tokens);
  return res;
}

/// Empirical distribution of training graph sizes.
class SizeDistribution {
 public:
  SizeDistribution() = default;
  explicit SizeDistribution(const std::vector<std::size_t>& sizes) {
    if (sizes.empty()) throw UsageError("size distribution: no sizes");
    for (auto n : sizes) ++counts_[n];
  }
  std::size_t sample(std::mt19937_64& rng) const {
    std::vector<std::size_t> values;
    std::vector<double> weights;
    for (const auto& [n, c] : counts_) {
      values.push_back(n);
      weights.push_back(static_cast<double>(c));
    }
    std::discrete_distribution<std::size_t> d(weights.begin(), weights.end());
    return values[d(rng)];
  }
  const std::map<std::size_t, std::size_t>& counts() const { return counts_; }

 private:
  std::map<std::size_t, std::size_t> counts_;
};

// ---------------------------------------------------------------------------
// Training

struct TeacherExample {
  MultiScaleTokens tokens;
  int label = 0;
};

class TransformerTrainer {
 public:
  TransformerTrainer(ScaleTransformer& model, const Tensor& codebook, const TrainConfig& cfg)
      : model_(model), codebook_(codebook), cfg_(cfg), opt_(cfg.adam), rng_(cfg.seed) {
    model_.check_codebook(codebook_);
    if (cfg.batch_size < 1) throw UsageError("batch size must be >= 1");
  }

  Adam& optimizer() { return opt_; }
  std::size_t epochs_done() const { return epoch_; }

  EpochRecord train_epoch(const std::vector<TeacherExample>& data) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    double loss_sum = 0.0;
    std::size_t correct = 0, total = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      model_.parameters().zero_grad();
      Var batch;
      for (std::size_t b = start; b < end; ++b) {
        const auto& ex = data[order[b]];
        auto fw = model_.teacher_forced(codebook_, ex.tokens, ex.label, &rng_);
        loss_sum += fw.loss.item();
        correct += fw.correct;
        total += fw.total;
        batch = batch.defined() ? add(batch, fw.loss) : fw.loss;
      }
      backward(scale(batch, 1.0 / static_cast<double>(end - start)));
      opt_.step(model_.parameters().all());
    }
    ++epoch_;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {epoch_, loss_sum / static_cast<double>(data.size()),
            total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0, secs};
  }

  /// Teacher-forced token accuracy with dropout off.
  double evaluate(const std::vector<TeacherExample>& data) const {
    NoGradGuard ng;
    std::size_t correct = 0, total = 0;
    for (const auto& ex : data) {
      auto fw = model_.teacher_forced(codebook_, ex.tokens, ex.label);
      correct += fw.correct;
      total += fw.total;
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  }

  void save(Checkpoint& ck) const {
    model_.save(ck);
    ck.put_optimizer(opt_, "transformer.adam.");
    ck.meta["transformer.epochs_done"] = std::to_string(epoch_);
    std::ostringstream rs;
    rs << rng_;
    ck.meta["transformer.rng"] = rs.str();
  }
  void load_state(const Checkpoint& ck) {
    ck.load_optimizer(opt_, "transformer.adam.");
    epoch_ = std::stoull(ck.meta.at("transformer.epochs_done"));
    if (auto it = ck.meta.find("transformer.rng"); it != ck.meta.end()) std::istringstream(it->second) >> rng_;
  }

 private:
  ScaleTransformer& model_;
  Tensor codebook_;
  TrainConfig cfg_;
  Adam opt_;
  std::mt19937_64 rng_;
  std::size_t epoch_ = 0;
};

inline std::vector<TeacherExample> teacher_examples(const Tokenizer& tokenizer, const std::vector<LabeledGraph>& graphs) {
  std::vector<TeacherExample> out;
  out.reserve(graphs.size());
  for (const auto& lg : graphs) out.push_back({tokenizer.tokenize(lg.graph), lg.label});
  return out;
}

}  // namespace mag
