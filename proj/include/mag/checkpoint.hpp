#pragma once

// Binary parameter checkpoint.
//
//   magic   "MAGCKPT\0"            8 bytes
//   version u32                    (currently 1)
//   n_meta  u32, then n_meta x { u32 len, key bytes, u32 len, value bytes }
//   n_ten   u32, then n_ten  x { u32 len, name bytes, u32 rank, rank x u64 extent,
//                                numel x f64 row-major values }
//
// All integers and doubles are little-endian; values round-trip bit-exactly.

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mag/nn.hpp"
#include "mag/optim.hpp"

namespace mag {

inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'A', 'G', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class Checkpoint {
 public:
  std::map<std::string, std::string> meta;

  void put(const std::string& name, Tensor t) {
    if (auto it = index_.find(name); it != index_.end()) {
      tensors_[it->second].second = std::move(t);
      return;
    }
    index_[name] = tensors_.size();
    tensors_.emplace_back(name, std::move(t));
  }
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("checkpoint: missing tensor '" + name + "'");
    return tensors_[it->second].second;
  }
  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("checkpoint: cannot open '" + path + "' for writing");
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    write_u32(os, kCheckpointVersion);
    write_u32(os, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      write_str(os, k);
      write_str(os, v);
    }
    write_u32(os, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& [name, t] : tensors_) {
      write_str(os, name);
      write_u32(os, static_cast<std::uint32_t>(t.rank()));
      for (auto e : t.shape()) write_u64(os, e);
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!os) throw ValidationError("checkpoint: write failed for '" + path + "'");
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("checkpoint: cannot open '" + path + "'");
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kCheckpointMagic) throw ValidationError("checkpoint: bad magic in '" + path + "'");
    const auto version = read_u32(is);
    if (version != kCheckpointVersion)
      throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    const auto n_meta = read_u32(is);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
      auto k = read_str(is);
      ck.meta[k] = read_str(is);
    }
    const auto n_ten = read_u32(is);
    for (std::uint32_t i = 0; i < n_ten; ++i) {
      auto name = read_str(is);
      const auto rank = read_u32(is);
      if (rank > 8) throw ValidationError("checkpoint: implausible rank for '" + name + "'");
      Shape shape(rank);
      for (auto& e : shape) e = read_u64(is);
      Tensor t(shape);
      is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!is) throw ValidationError("checkpoint: truncated tensor '" + name + "'");
      ck.put(name, std::move(t));
    }
    return ck;
  }

  /// Stores every parameter under `prefix + name`.
  void put_parameters(const ParameterStore& store, const std::string& prefix = {}) {
    for (const auto& p : store.all()) put(prefix + p.name(), p.value());
  }

  /// Copies matching tensors into `store`; every parameter must be present with its shape.
  void load_parameters(ParameterStore& store, const std::string& prefix = {}) const {
    for (auto p : store.all()) {
      const Tensor& t = get(prefix + p.name());
      if (t.shape() != p.shape())
        throw ValidationError("checkpoint: shape " + shape_str(t.shape()) + " for '" + p.name() + "', expected " +
                              shape_str(p.shape()));
      p.mutable_value() = t;
    }
  }

  void put_optimizer(const Adam& opt, const std::string& prefix) {
    meta[prefix + "step"] = std::to_string(opt.step_count());
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
      put(prefix + "m." + std::to_string(i), opt.first_moments()[i]);
      put(prefix + "v." + std::to_string(i), opt.second_moments()[i]);
    }
  }

  void load_optimizer(Adam& opt, const std::string& prefix) const {
    auto it = meta.find(prefix + "step");
    if (it == meta.end()) return;
    std::vector<Tensor> m, v;
    for (std::size_t i = 0; has(prefix + "m." + std::to_string(i)); ++i) {
      m.push_back(get(prefix + "m." + std::to_string(i)));
      v.push_back(get(prefix + "v." + std::to_string(i)));
    }
    opt.restore(std::stoull(it->second), std::move(m), std::move(v));
  }

 private:
  std::vector<std::pair<std::string, Tensor>> tensors_;
  std::map<std::string, std::size_t> index_;

  static void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
  static void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
  static void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw ValidationError("checkpoint: truncated header");
    return v;
  }
  static std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw ValidationError("checkpoint: truncated header");
    return v;
  }
  static std::string read_str(std::istream& is) {
    const auto n = read_u32(is);
    if (n > (1u << 24)) throw ValidationError("checkpoint: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw ValidationError("checkpoint: truncated string");
    return s;
  }
};

/// 64-bit FNV-1a over a checkpoint file's bytes, hex encoded. Used to tag
/// generated samples with the weights that produced them.
inline std::string file_fingerprint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open '" + path + "'");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[4096];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

/// FNV-1a over a tensor's shape and values, hex encoded.
inline std::string tensor_fingerprint(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<const unsigned char*>(p)[i];
      h *= 1099511628211ULL;
    }
  };
  for (std::uint64_t e : t.shape()) mix(&e, 8);
  mix(t.data(), t.size() * sizeof(double));
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace mag
