#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mag/nn.hpp"

namespace mag {

struct AdamConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 1e-2;
  double eps = 1e-8;
};

/// Bias-corrected Adam with decoupled weight decay. Moments are kept in
/// parameter order so a checkpoint can restore them positionally.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t step_count() const { return step_; }

  /// Applies one update from the gradients currently held by `params`.
  void step(const std::vector<Var>& params) {
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.emplace_back(p.shape());
        second_.emplace_back(p.shape());
      }
    }
    if (first_.size() != params.size()) throw DimensionError("adam: parameter count changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (first_[i].shape() != params[i].shape())
        throw DimensionError("adam: moment shape mismatch for '" + params[i].name() + "'");
      if (!params[i].grad().all_finite())
        throw NumericError("adam: non-finite gradient in parameter '" + params[i].name() + "'");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Var p = params[i];
      Tensor& w = p.mutable_value();
      const Tensor& g = p.grad();
      Tensor& m = first_[i];
      Tensor& v = second_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        w[j] *= 1.0 - cfg_.lr * cfg_.weight_decay;
        w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  // Persistence hooks.
  const std::vector<Tensor>& first_moments() const { return first_; }
  const std::vector<Tensor>& second_moments() const { return second_; }
  void restore(std::uint64_t step, std::vector<Tensor> first, std::vector<Tensor> second) {
    if (first.size() != second.size()) throw ValidationError("adam: moment lists differ in length");
    step_ = step;
    first_ = std::move(first);
    second_ = std::move(second);
  }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

}  // namespace mag
