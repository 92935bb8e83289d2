#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "mag/autograd.hpp"

namespace mag {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate.
///
/// Relative error is |a - n| / max(|a|, |n|, floor). The floor keeps
/// coordinates whose true gradient is zero from dividing by noise.
/// `fn` must rebuild its graph on every call and be deterministic; a
/// second evaluation at the base point that differs bitwise is an error.
inline GradCheckResult check_gradients(const std::function<Var()>& fn, const std::vector<Var>& params,
                                       double eps = 1e-3, double floor = 1e-6) {
  for (auto p : params) p.zero_grad();
  Var out = fn();
  if (out.value().size() != 1) throw DimensionError("check_gradients: function must be scalar-valued");
  const double base = out.item();
  {
    NoGradGuard ng;
    const double again = fn().item();
    if (std::memcmp(&base, &again, sizeof(double)) != 0)
      throw NumericError("check_gradients: function is not deterministic under a fixed seed");
  }
  backward(out);

  GradCheckResult res;
  NoGradGuard ng;
  for (auto p : params) {
    const Tensor analytic = p.grad();
    Tensor& w = p.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + eps;
      const double fp = fn().item();
      w[i] = orig - eps;
      const double fm = fn().item();
      w[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++res.coordinates;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_parameter = p.name();
        res.worst_index = i;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace mag
