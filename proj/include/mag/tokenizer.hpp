#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mag/autograd.hpp"
#include "mag/checkpoint.hpp"
#include "mag/graph.hpp"
#include "mag/nn.hpp"
#include "mag/optim.hpp"
#include "mag/schedule.hpp"

namespace mag {

struct TokenizerConfig {
  std::size_t node_dim = 1;
  std::size_t edge_dim = 1;
  std::size_t encoder_layers = 4;
  std::size_t decoder_layers = 4;
  std::size_t hidden = 32;
  std::size_t latent = 16;
  std::size_t codebook_size = 1024;
  std::size_t edge_hidden = 32;
  double commitment = 0.25;
  double gamma = 0.1;
  double node_weight = 1.0;
  double edge_weight = 1.0;
  bool independent_scales = false;
  std::vector<std::size_t> scale_base = default_scale_base();

  /// D == 1 is a binary feature, decoded as two classes (off/on).
  std::size_t node_classes() const { return node_dim == 1 ? 2 : node_dim; }
  std::size_t edge_classes() const { return edge_dim == 1 ? 2 : edge_dim; }

  void validate() const {
    if (encoder_layers < 1 || decoder_layers < 1) throw UsageError("tokenizer: layer counts must be >= 1");
    if (hidden < 1 || latent < 1 || edge_hidden < 1) throw UsageError("tokenizer: widths must be >= 1");
    if (codebook_size < 1) throw UsageError("tokenizer: empty codebook");
    if (node_dim < 1 || edge_dim < 1) throw UsageError("tokenizer: node_dim and edge_dim must be >= 1");
  }
};

/// Dense per-graph inputs and targets derived from a Graph.
struct GraphTensors {
  std::size_t n = 0;
  Tensor x;         // N x D
  Tensor adj;       // N x N, 1 where an edge is present
  Tensor edge_sum;  // N x F, sum of edge attributes over present edges
  std::vector<std::size_t> node_targets;
  std::vector<std::size_t> edge_targets;  // N*N, row-major pairs
  std::vector<bool> mask;                 // real nodes

  static GraphTensors from_graph(const Graph& g) {
    GraphTensors t;
    const std::size_t N = g.n(), F = g.edge_dim();
    t.n = N;
    t.x = g.node_features();
    t.adj = Tensor({N, N});
    t.edge_sum = Tensor({N, F});
    t.edge_targets.assign(N * N, 0);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        t.edge_targets[i * N + j] = g.edge_class(i, j);
        if (!g.has_edge(i, j)) continue;
        t.adj(i, j) = 1.0;
        for (std::size_t c = 0; c < F; ++c) t.edge_sum(i, c) += g.edge_attrs().at(i, j, c);
      }
    for (std::size_t i = 0; i < N; ++i)
      t.node_targets.push_back(g.node_dim() == 1 ? (g.node_features()(i, 0) > 0.5 ? 1 : 0) : g.node_class(i));
    t.mask.assign(N, true);
    return t;
  }

  /// Padded copy with `n_max` rows; padded nodes are masked out.
  GraphTensors padded(std::size_t n_max) const {
    if (n_max < n) throw DimensionError("GraphTensors::padded: n_max below graph size");
    GraphTensors p;
    p.n = n_max;
    p.x = Tensor({n_max, x.cols()});
    p.adj = Tensor({n_max, n_max});
    p.edge_sum = Tensor({n_max, edge_sum.cols()});
    p.edge_targets.assign(n_max * n_max, 0);
    p.node_targets.assign(n_max, 0);
    p.mask.assign(n_max, false);
    for (std::size_t i = 0; i < n; ++i) {
      p.mask[i] = mask[i];
      p.node_targets[i] = node_targets[i];
      for (std::size_t d = 0; d < x.cols(); ++d) p.x(i, d) = x(i, d);
      for (std::size_t c = 0; c < edge_sum.cols(); ++c) p.edge_sum(i, c) = edge_sum(i, c);
      for (std::size_t j = 0; j < n; ++j) {
        p.adj(i, j) = adj(i, j);
        p.edge_targets[i * n_max + j] = edge_targets[i * n + j];
      }
    }
    return p;
  }

  std::size_t real_nodes() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }
};

namespace detail {

inline Tensor mask_column(const std::vector<bool>& mask) {
  Tensor m({mask.size(), 1});
  for (std::size_t i = 0; i < mask.size(); ++i) m(i, 0) = mask[i] ? 1.0 : 0.0;
  return m;
}

inline bool all_true(const std::vector<bool>& m) { return std::all_of(m.begin(), m.end(), [](bool b) { return b; }); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Encoder

/// h' = LN(h + ReLU(sum_j a_ij (h_j W1 + b_ij W2) + b)), zeroed on masked rows.
struct MpnnLayer {
  Var w1, w2, bias;
  LayerNorm norm;

  MpnnLayer() = default;
  MpnnLayer(ParameterStore& store, const std::string& name, std::size_t hidden, std::size_t edge_dim,
            std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    w1 = store.add(name + ".w_node", uniform_tensor({hidden, hidden}, bound, rng));
    w2 = store.add(name + ".w_edge", uniform_tensor({edge_dim, hidden}, bound, rng));
    bias = store.add(name + ".bias", Tensor({1, hidden}));
    norm = LayerNorm(store, name + ".norm", hidden);
  }

  /// Summed messages before the nonlinearity.
  Var messages(const Var& h, const Tensor& adj, const Tensor& edge_sum) const {
    return add(matmul(Var::constant(adj), matmul(h, w1)), matmul(Var::constant(edge_sum), w2));
  }

  Var operator()(const Var& h, const Tensor& adj, const Tensor& edge_sum, const std::vector<bool>& mask) const {
    if (adj.rows() != h.rows() || adj.cols() != h.rows() || edge_sum.rows() != h.rows() || mask.size() != h.rows())
      throw DimensionError("mpnn_layer: states " + shape_str(h.shape()) + ", adjacency " + shape_str(adj.shape()) +
                           ", edge sums " + shape_str(edge_sum.shape()) + ", mask of " + std::to_string(mask.size()));
    Var out;
    if (detail::all_true(mask)) {
      out = norm(add(h, relu(add(messages(h, adj, edge_sum), bias))));
    } else {
      Tensor a = adj, e = edge_sum;
      for (std::size_t i = 0; i < mask.size(); ++i)
        for (std::size_t j = 0; j < mask.size(); ++j)
          if (!mask[i] || !mask[j]) a(i, j) = 0.0;
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (!mask[i]) std::fill(e.row(i).begin(), e.row(i).end(), 0.0);
      out = mul(norm(add(h, relu(add(messages(h, a, e), bias)))), Var::constant(detail::mask_column(mask)));
    }
    return out;
  }
};

struct Encoder {
  Linear input;
  std::vector<MpnnLayer> layers;
  Linear output;

  Encoder() = default;
  Encoder(ParameterStore& store, const TokenizerConfig& cfg, std::mt19937_64& rng) {
    input = Linear(store, "encoder.input", cfg.node_dim, cfg.hidden, rng);
    for (std::size_t l = 0; l < cfg.encoder_layers; ++l)
      layers.emplace_back(store, "encoder.mpnn" + std::to_string(l), cfg.hidden, cfg.edge_dim, rng);
    output = Linear(store, "encoder.output", cfg.hidden, cfg.latent, rng);
  }

  Var operator()(const GraphTensors& g) const {
    if (g.n == 0) throw ValidationError("encode: empty graph");
    const bool full = detail::all_true(g.mask);
    Var h = input(Var::constant(g.x));
    if (!full) h = mul(h, Var::constant(detail::mask_column(g.mask)));
    for (const auto& layer : layers) h = layer(h, g.adj, g.edge_sum, g.mask);
    Var f = output(h);
    return full ? f : mul(f, Var::constant(detail::mask_column(g.mask)));
  }
};

// ---------------------------------------------------------------------------
// Downsampling and quantization

/// Area resampling of a latent map to n_k rows; identity when n_k == N.
inline Tensor downsample(const Tensor& f, std::size_t n_k) {
  if (n_k < 1 || n_k > f.rows())
    throw DimensionError("downsample: target length " + std::to_string(n_k) + " outside [1, " +
                         std::to_string(f.rows()) + "]");
  if (n_k == f.rows()) return f;
  Tensor out({n_k, f.cols()});
  out.mat().noalias() = interpolation_matrix(f.rows(), n_k, InterpMode::kArea).mat() * f.mat();
  return out;
}

/// Linear resampling of quantized vectors back to n rows.
inline Tensor upsample(const Tensor& q, std::size_t n) {
  if (q.rows() == n) return q;
  Tensor out({n, q.cols()});
  out.mat().noalias() = interpolation_matrix(q.rows(), n, InterpMode::kLinear).mat() * q.mat();
  return out;
}

/// Index of the nearest code by squared Euclidean distance; ties go to the
/// lowest index.
inline std::vector<std::size_t> nearest_codes(const Tensor& rows, const Tensor& codes) {
  if (codes.rows() == 0) throw ValidationError("quantize: empty codebook");
  if (rows.cols() != codes.cols())
    throw DimensionError("quantize: rows " + shape_str(rows.shape()) + " vs codebook " + shape_str(codes.shape()));
  const std::size_t R = rows.rows(), V = codes.rows(), C = codes.cols();
  std::vector<std::size_t> out(R);
  for (std::size_t r = 0; r < R; ++r) {
    const double* x = rows.data() + r * C;
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t v = 0; v < V; ++v) {
      const double* z = codes.data() + v * C;
      double d = 0.0;
      for (std::size_t c = 0; c < C; ++c) d += (x[c] - z[c]) * (x[c] - z[c]);
      if (d < best) {
        best = d;
        arg = v;
      }
    }
    out[r] = arg;
  }
  return out;
}

inline Tensor select_codes(const Tensor& codes, const std::vector<std::size_t>& idx) {
  Tensor out({idx.size(), codes.cols()});
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(codes.row(idx[r]).begin(), codes.cols(), out.row(r).begin());
  return out;
}

class Codebook {
 public:
  Codebook() = default;
  Codebook(ParameterStore& store, std::size_t size, std::size_t dim, std::mt19937_64& rng) {
    vectors_ = store.add("codebook", uniform_tensor({size, dim}, 1.0 / static_cast<double>(size), rng));
    usage_.assign(size, 0);
    epoch_usage_.assign(size, 0);
  }

  const Var& vectors() const { return vectors_; }
  Tensor& mutable_vectors() { return vectors_.mutable_value(); }
  std::size_t size() const { return vectors_.rows(); }
  std::size_t dim() const { return vectors_.cols(); }

  /// Nearest codes for each row, with the selected vectors.
  std::pair<std::vector<std::size_t>, Tensor> quantize(const Tensor& rows) const {
    auto idx = nearest_codes(rows, vectors_.value());
    Tensor q = select_codes(vectors_.value(), idx);
    return {std::move(idx), std::move(q)};
  }

  void record(const std::vector<std::size_t>& idx) {
    for (auto i : idx) {
      ++usage_[i];
      ++epoch_usage_[i];
    }
  }
  const std::vector<std::uint64_t>& usage() const { return usage_; }
  const std::vector<std::uint64_t>& epoch_usage() const { return epoch_usage_; }
  std::uint64_t total_usage() const { return std::accumulate(usage_.begin(), usage_.end(), std::uint64_t{0}); }
  void reset_epoch_usage() { std::fill(epoch_usage_.begin(), epoch_usage_.end(), 0); }

  /// Replaces codes unused this epoch by rows drawn from `pool`. Returns the
  /// number of codes reseeded.
  std::size_t reseed_dead(const std::vector<std::vector<double>>& pool, std::mt19937_64& rng) {
    if (pool.empty()) return 0;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::size_t n = 0;
    Tensor& z = vectors_.mutable_value();
    for (std::size_t v = 0; v < size(); ++v) {
      if (epoch_usage_[v] != 0) continue;
      const auto& src = pool[pick(rng)];
      std::copy(src.begin(), src.end(), z.row(v).begin());
      ++n;
    }
    return n;
  }

  void set_usage(std::vector<std::uint64_t> usage) {
    if (usage.size() != size()) throw ValidationError("codebook: usage table size mismatch");
    usage_ = std::move(usage);
  }
  void set_epoch_usage(std::vector<std::uint64_t> usage) {
    if (usage.size() != size()) throw ValidationError("codebook: usage table size mismatch");
    epoch_usage_ = std::move(usage);
  }

 private:
  Var vectors_;
  std::vector<std::uint64_t> usage_;
  std::vector<std::uint64_t> epoch_usage_;
};

// ---------------------------------------------------------------------------
// Decoder

/// h' = LN(h + ReLU(h W_self + mean_j(h_j) W_nbr + b)) over the complete graph.
struct GcnLayer {
  Linear self;
  Var w_nbr;
  LayerNorm norm;

  GcnLayer() = default;
  GcnLayer(ParameterStore& store, const std::string& name, std::size_t hidden, std::mt19937_64& rng) {
    self = Linear(store, name + ".self", hidden, hidden, rng);
    w_nbr = store.add(name + ".w_nbr", uniform_tensor({hidden, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng));
    norm = LayerNorm(store, name + ".norm", hidden);
  }

  Var operator()(const Var& h, const std::vector<bool>& mask) const {
    if (detail::all_true(mask)) return norm(add(h, relu(add(self(h), matmul(mean(h, 0), w_nbr)))));
    const Tensor m = detail::mask_column(mask);
    const double count = static_cast<double>(std::count(mask.begin(), mask.end(), true));
    Var pooled = scale(sum(mul(h, Var::constant(m)), 0), 1.0 / count);
    return mul(norm(add(h, relu(add(self(h), matmul(pooled, w_nbr))))), Var::constant(m));
  }
};

struct DecoderOutput {
  Var node_logits;  // N x node_classes
  Var edge_logits;  // N*N x edge_classes, row i*N + j
};

struct Decoder {
  Linear input;
  std::vector<GcnLayer> layers;
  Linear node_head;
  Linear pair_src, pair_dst, edge_out;

  Decoder() = default;
  Decoder(ParameterStore& store, const TokenizerConfig& cfg, std::mt19937_64& rng) {
    input = Linear(store, "decoder.input", cfg.latent, cfg.hidden, rng);
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l)
      layers.emplace_back(store, "decoder.gcn" + std::to_string(l), cfg.hidden, rng);
    node_head = Linear(store, "decoder.node_head", cfg.hidden, cfg.node_classes(), rng);
    pair_src = Linear(store, "decoder.pair_src", cfg.hidden, cfg.edge_hidden, rng);
    pair_dst = Linear(store, "decoder.pair_dst", cfg.hidden, cfg.edge_hidden, rng, false);
    edge_out = Linear(store, "decoder.edge_out", cfg.edge_hidden, cfg.edge_classes(), rng);
  }

  DecoderOutput operator()(const Var& q, const std::vector<bool>& mask) const {
    const std::size_t N = q.rows();
    if (N == 0) throw ValidationError("decode: empty latent map");
    if (mask.size() != N) throw DimensionError("decode: mask length mismatch");
    Var h = input(q);
    if (!detail::all_true(mask)) h = mul(h, Var::constant(detail::mask_column(mask)));
    for (const auto& layer : layers) h = layer(h, mask);
    std::vector<std::size_t> src(N * N), dst(N * N), swapped(N * N);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        src[i * N + j] = i;
        dst[i * N + j] = j;
        swapped[i * N + j] = j * N + i;
      }
    // concat(h_i, h_j) W = h_i W_src + h_j W_dst
    Var pairs = relu(add(gather_rows(pair_src(h), src), gather_rows(pair_dst(h), dst)));
    Var logits = edge_out(pairs);
    Var sym = scale(add(logits, gather_rows(logits, swapped)), 0.5);
    return {node_head(h), sym};
  }
};

// ---------------------------------------------------------------------------
// Losses

/// ||sg(f) - q||^2 + commitment * ||f - sg(q)||^2, summed over features and
/// averaged over rows. `f_sg` and `q_sg` are the values behind the stop
/// gradients; they default to the current values of f and q.
inline Var vq_loss(const Var& f, const Var& q, const Tensor& f_sg, const Tensor& q_sg, double commitment = 0.25) {
  if (f.shape() != q.shape() || f_sg.shape() != f.shape() || q_sg.shape() != q.shape())
    throw DimensionError("vq_loss: " + shape_str(f.shape()) + " vs " + shape_str(q.shape()));
  const double inv_rows = 1.0 / static_cast<double>(f.rows());
  Var codebook_term = sub(Var::constant(f_sg), q);
  Var commit_term = sub(f, Var::constant(q_sg));
  return scale(add(sum(mul(codebook_term, codebook_term)), scale(sum(mul(commit_term, commit_term)), commitment)),
               inv_rows);
}

inline Var vq_loss(const Var& f, const Var& q, double commitment = 0.25) {
  return vq_loss(f, q, f.value(), q.value(), commitment);
}

/// f + sg(q - f): forward value q, gradient passed straight to f. The offset
/// may be given explicitly to pin it.
inline Var straight_through(const Var& f, const Tensor& q_sg, const Tensor& f_sg) {
  Tensor delta = q_sg;
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= f_sg[i];
  return add(f, Var::constant(std::move(delta)));
}

inline Var straight_through(const Var& f, const Var& q) { return straight_through(f, q.value(), f.value()); }

struct ReconstructionTerms {
  Var total;
  Var node;
  Var edge;
};

/// Mean node CE over masked nodes plus mean edge CE over upper-triangle pairs
/// of masked nodes.
inline ReconstructionTerms reconstruction_loss(const DecoderOutput& out, const GraphTensors& target,
                                               double node_weight = 1.0, double edge_weight = 1.0) {
  const std::size_t N = target.n;
  if (out.node_logits.rows() != N || out.edge_logits.rows() != N * N)
    throw DimensionError("reconstruction_loss: logits " + shape_str(out.node_logits.shape()) + " / " +
                         shape_str(out.edge_logits.shape()) + " for N=" + std::to_string(N));
  std::vector<double> wn(N, 0.0), we(N * N, 0.0);
  double nn = 0, ne = 0;
  for (std::size_t i = 0; i < N; ++i) {
    if (!target.mask[i]) continue;
    wn[i] = 1.0;
    ++nn;
    for (std::size_t j = i + 1; j < N; ++j)
      if (target.mask[j]) {
        we[i * N + j] = 1.0;
        ++ne;
      }
  }
  Var node = scale(cross_entropy_sum(out.node_logits, target.node_targets, wn), 1.0 / std::max(nn, 1.0));
  Var edge = ne > 0 ? scale(cross_entropy_sum(out.edge_logits, target.edge_targets, we), 1.0 / ne)
                    : Var::constant(Tensor::scalar(0.0));
  return {add(scale(node, node_weight), scale(edge, edge_weight)), node, edge};
}

// ---------------------------------------------------------------------------
// Tokenizer

struct MultiScaleTokens {
  ScaleSchedule schedule;
  std::vector<std::vector<std::size_t>> maps;  // r_1..r_K

  std::vector<std::size_t> flat() const {
    std::vector<std::size_t> out;
    for (const auto& m : maps) out.insert(out.end(), m.begin(), m.end());
    return out;
  }
  friend bool operator==(const MultiScaleTokens&, const MultiScaleTokens&) = default;
};

struct TokenizerForward {
  Var loss;
  Var recon;
  Var vq;
  Var latent;        // f
  Var reconstructed;  // accumulated quantized map fed to the decoder (value)
  DecoderOutput decoded;
  MultiScaleTokens tokens;
  std::vector<Tensor> quantizer_inputs;  // per scale, rows given to the quantizer
};

/// Code assignment and stop-gradient values pinned at one parameter point.
/// Evaluating the loss with these held fixed gives a function whose exact
/// gradient is the straight-through gradient, which makes it checkable by
/// finite differences.
struct FrozenAssignment {
  MultiScaleTokens tokens;
  Tensor latent;
  Tensor reconstructed;

  static FrozenAssignment from(const TokenizerForward& fw) {
    return {fw.tokens, fw.latent.value(), fw.reconstructed.value()};
  }
};

struct ReconstructionAccuracy {
  std::size_t node_correct = 0, node_total = 0;
  std::size_t edge_correct = 0, edge_total = 0;
  double node() const { return node_total ? static_cast<double>(node_correct) / static_cast<double>(node_total) : 0.0; }
  double edge() const { return edge_total ? static_cast<double>(edge_correct) / static_cast<double>(edge_total) : 0.0; }
  ReconstructionAccuracy& operator+=(const ReconstructionAccuracy& o) {
    node_correct += o.node_correct;
    node_total += o.node_total;
    edge_correct += o.edge_correct;
    edge_total += o.edge_total;
    return *this;
  }
};

inline std::size_t argmax_row(const Tensor& t, std::size_t r) {
  const auto row = t.row(r);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(const TokenizerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    encoder_ = Encoder(store_, cfg_, rng);
    codebook_ = Codebook(store_, cfg_.codebook_size, cfg_.latent, rng);
    decoder_ = Decoder(store_, cfg_, rng);
  }

  const TokenizerConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }

  ScaleSchedule schedule_for(std::size_t n) const { return build_scale_schedule(n, cfg_.scale_base); }

  Var encode(const GraphTensors& g) const { return encoder_(g); }
  Tensor encode(const Graph& g) const {
    NoGradGuard ng;
    return encode(GraphTensors::from_graph(g)).value();
  }

  /// Token maps for latent f. Residual mode quantizes what coarser scales left
  /// unexplained; independent mode quantizes downsampled f directly.
  MultiScaleTokens quantize_latent(const Tensor& f, const ScaleSchedule& schedule,
                                   std::vector<Tensor>* inputs = nullptr) const {
    if (schedule.n_nodes() != f.rows())
      throw ValidationError("tokenize: schedule ends at " + std::to_string(schedule.n_nodes()) + " but N=" +
                            std::to_string(f.rows()));
    MultiScaleTokens out{schedule, {}};
    Tensor residual = f;
    for (std::size_t k = 0; k < schedule.scales(); ++k) {
      Tensor z = downsample(cfg_.independent_scales ? f : residual, schedule.length(k));
      auto [idx, q] = codebook_.quantize(z);
      if (!cfg_.independent_scales) {
        Tensor up = upsample(q, f.rows());
        for (std::size_t i = 0; i < residual.size(); ++i) residual[i] -= up[i];
      }
      if (inputs) inputs->push_back(std::move(z));
      out.maps.push_back(std::move(idx));
    }
    return out;
  }

  MultiScaleTokens tokenize(const Graph& g) const { return tokenize(g, schedule_for(g.n())); }
  MultiScaleTokens tokenize(const Graph& g, const ScaleSchedule& schedule) const {
    return quantize_latent(encode(g), schedule);
  }

  /// Accumulated reconstruction from token maps (sum of upsampled codes).
  Var accumulate(const MultiScaleTokens& tokens) const {
    const std::size_t N = tokens.schedule.n_nodes();
    if (tokens.maps.size() != tokens.schedule.scales()) throw ValidationError("tokens: map count != schedule scales");
    for (std::size_t k = 0; k < tokens.maps.size(); ++k) {
      if (tokens.maps[k].size() != tokens.schedule.length(k))
        throw ValidationError("tokens: scale " + std::to_string(k) + " has wrong length");
      for (auto t : tokens.maps[k])
        if (t >= codebook_.size())
          throw ValidationError("tokens: index " + std::to_string(t) + " outside codebook of " +
                                std::to_string(codebook_.size()));
    }
    if (cfg_.independent_scales) return gather_rows(codebook_.vectors(), tokens.maps.back());
    Var acc;
    for (std::size_t k = 0; k < tokens.maps.size(); ++k) {
      Var up = interpolate(gather_rows(codebook_.vectors(), tokens.maps[k]), N, InterpMode::kLinear);
      acc = acc.defined() ? add(acc, up) : up;
    }
    return acc;
  }

  /// Full objective. `frozen` pins code assignments and stop-gradient values.
  TokenizerForward forward(const GraphTensors& g, const FrozenAssignment* frozen = nullptr,
                           const std::optional<ScaleSchedule>& schedule = std::nullopt) const {
    TokenizerForward out;
    out.latent = encode(g);
    const ScaleSchedule s = schedule ? *schedule : schedule_for(g.n);
    if (frozen) {
      out.tokens = frozen->tokens;
    } else {
      NoGradGuard ng;
      out.tokens = quantize_latent(out.latent.value(), s, &out.quantizer_inputs);
    }
    Var f_hat = accumulate(out.tokens);
    out.reconstructed = f_hat;
    const Tensor& f_sg = frozen ? frozen->latent : out.latent.value();
    const Tensor& q_sg = frozen ? frozen->reconstructed : f_hat.value();
    out.vq = vq_loss(out.latent, f_hat, f_sg, q_sg, cfg_.commitment);
    out.decoded = decoder_(straight_through(out.latent, q_sg, f_sg), g.mask);
    out.recon = reconstruction_loss(out.decoded, g, cfg_.node_weight, cfg_.edge_weight).total;
    out.loss = add(out.recon, scale(out.vq, cfg_.gamma));
    return out;
  }

  DecoderOutput decode(const Var& q) const { return decoder_(q, std::vector<bool>(q.rows(), true)); }

  /// Graph from token maps via the decoder, categories by argmax.
  Graph detokenize(const MultiScaleTokens& tokens) const {
    NoGradGuard ng;
    return logits_to_graph(decode(accumulate(tokens)));
  }

  Graph logits_to_graph(const DecoderOutput& out) const {
    const std::size_t N = out.node_logits.rows();
    const std::size_t D = cfg_.node_dim, F = cfg_.edge_dim;
    Tensor x({N, D});
    Tensor b({N, N, F});
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t c = argmax_row(out.node_logits.value(), i);
      if (D == 1)
        x(i, 0) = static_cast<double>(c);
      else
        x(i, c) = 1.0;
    }
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        if (i == j) continue;
        const std::size_t c = argmax_row(out.edge_logits.value(), i * N + j);
        if (F == 1)
          b.at(i, j, 0) = static_cast<double>(c);
        else
          b.at(i, j, c) = 1.0;
      }
    return Graph(std::move(x), std::move(b));
  }

  ReconstructionAccuracy accuracy(const DecoderOutput& out, const GraphTensors& g) const {
    ReconstructionAccuracy acc;
    const std::size_t N = g.n;
    for (std::size_t i = 0; i < N; ++i) {
      if (!g.mask[i]) continue;
      ++acc.node_total;
      acc.node_correct += argmax_row(out.node_logits.value(), i) == g.node_targets[i] ? 1 : 0;
      for (std::size_t j = i + 1; j < N; ++j) {
        if (!g.mask[j]) continue;
        ++acc.edge_total;
        acc.edge_correct += argmax_row(out.edge_logits.value(), i * N + j) == g.edge_targets[i * N + j] ? 1 : 0;
      }
    }
    return acc;
  }

  /// Reconstruction accuracy through the full tokenize -> detokenize path.
  ReconstructionAccuracy evaluate(const std::vector<Graph>& graphs) const {
    NoGradGuard ng;
    ReconstructionAccuracy acc;
    for (const auto& g : graphs) {
      const auto t = GraphTensors::from_graph(g);
      acc += accuracy(forward(t).decoded, t);
    }
    return acc;
  }

  void save(Checkpoint& ck) const {
    ck.meta["tokenizer.node_dim"] = std::to_string(cfg_.node_dim);
    ck.meta["tokenizer.edge_dim"] = std::to_string(cfg_.edge_dim);
    ck.meta["tokenizer.encoder_layers"] = std::to_string(cfg_.encoder_layers);
    ck.meta["tokenizer.decoder_layers"] = std::to_string(cfg_.decoder_layers);
    ck.meta["tokenizer.hidden"] = std::to_string(cfg_.hidden);
    ck.meta["tokenizer.latent"] = std::to_string(cfg_.latent);
    ck.meta["tokenizer.codebook_size"] = std::to_string(cfg_.codebook_size);
    ck.meta["tokenizer.edge_hidden"] = std::to_string(cfg_.edge_hidden);
    ck.meta["tokenizer.independent_scales"] = cfg_.independent_scales ? "1" : "0";
    std::string base;
    for (auto b : cfg_.scale_base) base += (base.empty() ? "" : ",") + std::to_string(b);
    ck.meta["tokenizer.scale_base"] = base;
    ck.put_parameters(store_, "tokenizer.");
    Tensor usage({1, codebook_.size()});
    for (std::size_t v = 0; v < codebook_.size(); ++v) usage[v] = static_cast<double>(codebook_.usage()[v]);
    ck.put("tokenizer.codebook_usage", std::move(usage));
  }

  /// Rebuilds a tokenizer from a checkpoint written by save().
  static Tokenizer load(const Checkpoint& ck, TokenizerConfig cfg = {}) {
    auto num = [&](const std::string& k) { return static_cast<std::size_t>(std::stoull(ck.meta.at(k))); };
    try {
      cfg.node_dim = num("tokenizer.node_dim");
      cfg.edge_dim = num("tokenizer.edge_dim");
      cfg.encoder_layers = num("tokenizer.encoder_layers");
      cfg.decoder_layers = num("tokenizer.decoder_layers");
      cfg.hidden = num("tokenizer.hidden");
      cfg.latent = num("tokenizer.latent");
      cfg.codebook_size = num("tokenizer.codebook_size");
      cfg.edge_hidden = num("tokenizer.edge_hidden");
      cfg.independent_scales = ck.meta.at("tokenizer.independent_scales") == "1";
      cfg.scale_base.clear();
      std::stringstream ss(ck.meta.at("tokenizer.scale_base"));
      for (std::string tok; std::getline(ss, tok, ',');) cfg.scale_base.push_back(std::stoull(tok));
    } catch (const std::out_of_range&) {
      throw ValidationError("checkpoint has no tokenizer section");
    }
    Tokenizer t(cfg, 0);
    ck.load_parameters(t.store_, "tokenizer.");
    const Tensor& usage = ck.get("tokenizer.codebook_usage");
    std::vector<std::uint64_t> u(usage.size());
    for (std::size_t v = 0; v < u.size(); ++v) u[v] = static_cast<std::uint64_t>(usage[v]);
    t.codebook_.set_usage(std::move(u));
    return t;
  }

 private:
  TokenizerConfig cfg_;
  ParameterStore store_;
  Encoder encoder_;
  Codebook codebook_;
  Decoder decoder_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 12;
  AdamConfig adam{};
  std::uint64_t seed = 0;
  std::size_t reseed_pool = 4096;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double wall_seconds = 0.0;
};

class TokenizerTrainer {
 public:
  TokenizerTrainer(Tokenizer& tok, const TrainConfig& cfg) : tok_(tok), cfg_(cfg), opt_(cfg.adam), rng_(cfg.seed) {
    if (cfg.batch_size < 1) throw UsageError("batch size must be >= 1");
  }

  Adam& optimizer() { return opt_; }
  std::mt19937_64& rng() { return rng_; }
  std::size_t epochs_done() const { return epoch_; }
  void set_epochs_done(std::size_t e) { epoch_ = e; }

  /// One pass over `data` in shuffled batches. Edge accuracy is the reported
  /// accuracy. Codes left unused by the previous epoch are reseeded first from
  /// that epoch's quantizer inputs, so the final epoch leaves no dead code
  /// replaced without training.
  EpochRecord train_epoch(const std::vector<GraphTensors>& data) {
    const auto t0 = std::chrono::steady_clock::now();
    reseed_pending();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    tok_.codebook().reset_epoch_usage();
    std::vector<std::vector<double>>& pool = pool_;
    pool.clear();
    std::size_t seen_rows = 0;
    double loss_sum = 0.0;
    ReconstructionAccuracy acc;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      tok_.parameters().zero_grad();
      Var batch_loss;
      for (std::size_t b = start; b < end; ++b) {
        const auto& g = data[order[b]];
        auto fw = tok_.forward(g);
        for (const auto& m : fw.tokens.maps) tok_.codebook().record(m);
        for (const auto& z : fw.quantizer_inputs)
          for (std::size_t r = 0; r < z.rows(); ++r) {
            ++seen_rows;
            std::vector<double> row(z.row(r).begin(), z.row(r).end());
            if (pool.size() < cfg_.reseed_pool) {
              pool.push_back(std::move(row));
            } else {
              std::uniform_int_distribution<std::size_t> slot(0, seen_rows - 1);
              const std::size_t s = slot(rng_);
              if (s < pool.size()) pool[s] = std::move(row);
            }
          }
        acc += tok_.accuracy(fw.decoded, g);
        loss_sum += fw.loss.item();
        batch_loss = batch_loss.defined() ? add(batch_loss, fw.loss) : fw.loss;
      }
      backward(scale(batch_loss, 1.0 / static_cast<double>(end - start)));
      opt_.step(tok_.parameters().all());
    }
    ++epoch_;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {epoch_, loss_sum / static_cast<double>(data.size()), acc.edge(), secs};
  }

  void save(Checkpoint& ck) const {
    tok_.save(ck);
    ck.put_optimizer(opt_, "tokenizer.adam.");
    ck.meta["tokenizer.epochs_done"] = std::to_string(epoch_);
    std::ostringstream rs;
    rs << rng_;
    ck.meta["tokenizer.rng"] = rs.str();
    const auto& used = tok_.codebook().epoch_usage();
    Tensor u({used.size()});
    for (std::size_t v = 0; v < used.size(); ++v) u[v] = static_cast<double>(used[v]);
    ck.put("tokenizer.codebook_epoch_usage", std::move(u));
    if (!pool_.empty()) {
      Tensor p({pool_.size(), pool_.front().size()});
      for (std::size_t r = 0; r < pool_.size(); ++r) std::copy(pool_[r].begin(), pool_[r].end(), p.row(r).begin());
      ck.put("tokenizer.reseed_pool", std::move(p));
    }
  }
  void load_state(const Checkpoint& ck) {
    ck.load_optimizer(opt_, "tokenizer.adam.");
    epoch_ = std::stoull(ck.meta.at("tokenizer.epochs_done"));
    if (auto it = ck.meta.find("tokenizer.rng"); it != ck.meta.end()) std::istringstream(it->second) >> rng_;
    if (ck.has("tokenizer.codebook_epoch_usage")) {
      const Tensor& u = ck.get("tokenizer.codebook_epoch_usage");
      std::vector<std::uint64_t> used(u.size());
      for (std::size_t v = 0; v < used.size(); ++v) used[v] = static_cast<std::uint64_t>(u[v]);
      tok_.codebook().set_epoch_usage(std::move(used));
    }
    pool_.clear();
    if (ck.has("tokenizer.reseed_pool")) {
      const Tensor& p = ck.get("tokenizer.reseed_pool");
      for (std::size_t r = 0; r < p.rows(); ++r) pool_.emplace_back(p.row(r).begin(), p.row(r).end());
    }
  }

  /// Reseeds codes unused in the last completed epoch. Returns the count.
  std::size_t reseed_pending() {
    const std::size_t n = tok_.codebook().reseed_dead(pool_, rng_);
    pool_.clear();
    return n;
  }

 private:
  Tokenizer& tok_;
  TrainConfig cfg_;
  Adam opt_;
  std::mt19937_64 rng_;
  std::size_t epoch_ = 0;
  std::vector<std::vector<double>> pool_;
};

inline std::vector<GraphTensors> to_tensors(const std::vector<Graph>& graphs) {
  std::vector<GraphTensors> out;
  out.reserve(graphs.size());
  for (const auto& g : graphs) out.push_back(GraphTensors::from_graph(g));
  return out;
}

}  // namespace mag
