#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mag/autograd.hpp"

namespace mag {

/// Named, ordered collection of trainable leaves.
class ParameterStore {
 public:
  Var add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw UsageError("duplicate parameter '" + name + "'");
    index_[name] = params_.size();
    params_.push_back(Var::parameter(std::move(init), name));
    return params_.back();
  }

  const Var& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<Var>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Var> params_;
  std::map<std::string, std::size_t> index_;
};

inline Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

/// y = x W + b with W stored in x out.
struct Linear {
  Var weight;
  Var bias;

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
         bool with_bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = store.add(name + ".weight", uniform_tensor({in, out}, bound, rng));
    if (with_bias) bias = store.add(name + ".bias", Tensor({1, out}));
  }

  Var operator()(const Var& x) const {
    Var y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
  }
  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
};

/// Layer normalisation with learned gain and shift.
struct LayerNorm {
  Var gain;
  Var shift;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t width) {
    gain = store.add(name + ".gain", Tensor({1, width}, 1.0));
    shift = store.add(name + ".shift", Tensor({1, width}));
  }
  Var operator()(const Var& x) const { return add(mul(layer_norm(x), gain), shift); }
};

}  // namespace mag
