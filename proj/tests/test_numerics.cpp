#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "mag/autograd.hpp"
#include "mag/checkpoint.hpp"
#include "mag/gradcheck.hpp"
#include "mag/optim.hpp"

using namespace mag;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t({r, c});
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Keeps values away from 0 so ReLU kinks stay outside the finite-difference stencil.
Tensor away_from_zero(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Tensor t = random_tensor(r, c, rng, 0.1, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : t.values())
    if (flip(rng)) v = -v;
  return t;
}

// Weighted sum keeps every output coordinate in the gradient.
Var probe(const Var& y, const Tensor& w) { return sum(mul(y, Var::constant(w))); }

}  // namespace

TEST(Primitives, SoftmaxOfEqualRowIsUniform) {
  Var x = Var::constant(Tensor({1, 4}, 3.7));
  Var y = softmax(x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.value()[i], 0.25);
}

TEST(Primitives, LayerNormStandardisesRows) {
  std::mt19937_64 rng(1);
  Var y = layer_norm(Var::constant(random_tensor(5, 7, rng, -3, 4)), 0.0);
  for (std::size_t r = 0; r < 5; ++r) {
    double mu = 0, var = 0;
    for (double v : y.value().row(r)) mu += v;
    mu /= 7;
    for (double v : y.value().row(r)) var += (v - mu) * (v - mu);
    var /= 7;
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-12);
  }
}

TEST(Primitives, MatmulMatchesTripleLoop) {
  std::mt19937_64 rng(2);
  Tensor a = random_tensor(2, 3, rng), b = random_tensor(3, 2, rng);
  Var c = matmul(Var::constant(a), Var::constant(b));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c.value()(i, j), s, 1e-12);
    }
}

TEST(Primitives, ShapeMismatchNamesOperands) {
  Var a = Var::constant(Tensor({2, 3})), b = Var::constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(add(a, Var::constant(Tensor({3, 1}))), DimensionError);
}

TEST(Primitives, InterpolationMatrices) {
  Tensor area = interpolation_matrix(4, 2, InterpMode::kArea);
  EXPECT_EQ(area, Tensor::matrix(2, 4, {0.5, 0.5, 0, 0, 0, 0, 0.5, 0.5}));
  Tensor one = interpolation_matrix(5, 1, InterpMode::kArea);
  for (double v : one.values()) EXPECT_DOUBLE_EQ(v, 0.2);
  for (auto mode : {InterpMode::kArea, InterpMode::kLinear}) {
    Tensor id = interpolation_matrix(6, 6, mode);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(id(i, j), i == j ? 1.0 : 0.0);
  }
  // Rows of any resampling matrix are convex weights.
  for (std::size_t in : {1, 3, 7, 20})
    for (std::size_t out : {1, 2, 9, 20})
      for (auto mode : {InterpMode::kArea, InterpMode::kLinear}) {
        Tensor w = interpolation_matrix(in, out, mode);
        for (std::size_t r = 0; r < out; ++r) {
          double s = 0;
          for (double v : w.row(r)) {
            EXPECT_GE(v, 0.0);
            s += v;
          }
          EXPECT_NEAR(s, 1.0, 1e-12);
        }
      }
  // Linear upsampling 2 -> 4 with half-pixel centres.
  EXPECT_EQ(interpolation_matrix(2, 4, InterpMode::kLinear),
            Tensor::matrix(4, 2, {1, 0, 0.75, 0.25, 0.25, 0.75, 0, 1}));
}

TEST(Primitives, DropoutIsSeedDeterministic) {
  Var x = Var::constant(Tensor({4, 8}, 1.0));
  std::mt19937_64 r1(9), r2(9);
  EXPECT_EQ(dropout(x, 0.3, r1, true).value(), dropout(x, 0.3, r2, true).value());
  std::mt19937_64 r3(9);
  EXPECT_EQ(dropout(x, 0.3, r3, false).value(), x.value());
}

TEST(Primitives, CrossEntropyUniform) {
  Var logits = Var::constant(Tensor({3, 2}));
  EXPECT_NEAR(cross_entropy_sum(logits, {0, 1, 1}).item(), 3 * std::log(2.0), 1e-12);
}

// --------------------------------------------------------------------------
// Finite-difference checks for every primitive.

class PrimitiveGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{42};
  void expect_ok(const std::function<Var()>& fn, const std::vector<Var>& params, double tol = 1e-4) {
    auto res = check_gradients(fn, params, 1e-5);
    EXPECT_LT(res.max_rel_error, tol) << res.worst_parameter << "[" << res.worst_index << "] analytic "
                                      << res.analytic << " numeric " << res.numeric;
  }
};

TEST_F(PrimitiveGradients, Matmul) {
  Var a = Var::parameter(random_tensor(3, 4, rng), "a"), b = Var::parameter(random_tensor(4, 2, rng), "b");
  Tensor w = random_tensor(3, 2, rng);
  expect_ok([&] { return probe(matmul(a, b), w); }, {a, b});
}

TEST_F(PrimitiveGradients, BroadcastAddMul) {
  Var a = Var::parameter(random_tensor(3, 4, rng), "a");
  Var row = Var::parameter(random_tensor(1, 4, rng), "row");
  Var col = Var::parameter(random_tensor(3, 1, rng), "col");
  Var s = Var::parameter(random_tensor(1, 1, rng), "s");
  Var same = Var::parameter(random_tensor(3, 4, rng), "same");
  Tensor w = random_tensor(3, 4, rng);
  expect_ok([&] { return probe(mul(add(mul(add(a, row), col), s), same), w); }, {a, row, col, s, same});
  expect_ok([&] { return probe(sub(scale(a, 1.7), same), w); }, {a, same});
}

TEST_F(PrimitiveGradients, Relu) {
  Var a = Var::parameter(away_from_zero(4, 5, rng), "a");
  Tensor w = random_tensor(4, 5, rng);
  expect_ok([&] { return probe(relu(a), w); }, {a});
}

TEST_F(PrimitiveGradients, SoftmaxBothAxes) {
  Var a = Var::parameter(random_tensor(3, 5, rng, -2, 2), "a");
  Tensor w = random_tensor(3, 5, rng);
  expect_ok([&] { return probe(softmax(a, 1), w); }, {a});
  expect_ok([&] { return probe(softmax(a, 0), w); }, {a});
  expect_ok([&] { return probe(log_softmax(a), w); }, {a});
}

TEST_F(PrimitiveGradients, LayerNorm) {
  Var a = Var::parameter(random_tensor(3, 6, rng, -2, 2), "a");
  Tensor w = random_tensor(3, 6, rng);
  expect_ok([&] { return probe(layer_norm(a), w); }, {a});
}

TEST_F(PrimitiveGradients, UnitNorm) {
  Var a = Var::parameter(random_tensor(4, 3, rng, -2, 2), "a");
  Tensor w = random_tensor(4, 3, rng);
  expect_ok([&] { return probe(l2_normalize_rows(a), w); }, {a});
}

TEST_F(PrimitiveGradients, EmbeddingLookupAndSlices) {
  Var table = Var::parameter(random_tensor(5, 3, rng), "table");
  Tensor w = random_tensor(6, 3, rng), w2 = random_tensor(2, 2, rng);
  expect_ok([&] { return probe(gather_rows(table, {4, 0, 4, 2, 1, 4}), w); }, {table});
  expect_ok([&] { return probe(slice_cols(slice_rows(table, 1, 2), 1, 2), w2); }, {table});
}

TEST_F(PrimitiveGradients, ConcatBothAxes) {
  Var a = Var::parameter(random_tensor(2, 3, rng), "a"), b = Var::parameter(random_tensor(1, 3, rng), "b");
  Var c = Var::parameter(random_tensor(2, 2, rng), "c");
  Tensor w0 = random_tensor(3, 3, rng), w1 = random_tensor(2, 5, rng);
  expect_ok([&] { return probe(concat({a, b}, 0), w0); }, {a, b});
  expect_ok([&] { return probe(concat({a, c}, 1), w1); }, {a, c});
}

TEST_F(PrimitiveGradients, Reductions) {
  Var a = Var::parameter(random_tensor(3, 4, rng), "a");
  Tensor wr = random_tensor(1, 4, rng), wc = random_tensor(3, 1, rng);
  expect_ok([&] { return mul(sum(a), mean(a)); }, {a});
  expect_ok([&] { return probe(sum(a, 0), wr); }, {a});
  expect_ok([&] { return probe(mean(a, 1), wc); }, {a});
  Tensor wt = random_tensor(6, 2, rng);
  expect_ok([&] { return probe(transpose(reshape(a, {2, 6})), wt); }, {a});
}

TEST_F(PrimitiveGradients, Interpolation) {
  Var a = Var::parameter(random_tensor(7, 3, rng), "a");
  Tensor w3 = random_tensor(3, 3, rng), w11 = random_tensor(11, 3, rng), wt = random_tensor(7, 5, rng);
  expect_ok([&] { return probe(interpolate(a, 3, InterpMode::kArea), w3); }, {a});
  expect_ok([&] { return probe(interpolate(a, 11, InterpMode::kLinear), w11); }, {a});
  expect_ok([&] { return probe(interpolate(a, 5, InterpMode::kLinear, 1), wt); }, {a});
}

TEST_F(PrimitiveGradients, DropoutWithFixedSeed) {
  Var a = Var::parameter(random_tensor(4, 4, rng), "a");
  Tensor w = random_tensor(4, 4, rng);
  expect_ok(
      [&] {
        std::mt19937_64 local(5);
        return probe(dropout(a, 0.25, local, true), w);
      },
      {a});
}

TEST_F(PrimitiveGradients, CrossEntropy) {
  Var a = Var::parameter(random_tensor(4, 5, rng, -2, 2), "a");
  expect_ok([&] { return cross_entropy_sum(a, {0, 3, 4, 1}, {1.0, 0.5, 0.0, 2.0}); }, {a});
}

TEST(GradientCheck, QuadraticIsExact) {
  Var x = Var::parameter(Tensor::scalar(3.0), "x");
  auto res = check_gradients([&] { return mul(x, x); }, {x});
  EXPECT_DOUBLE_EQ(res.analytic, 0.0 + 6.0);
  EXPECT_NEAR(res.numeric, 6.0, 1e-9);
  EXPECT_LT(res.max_rel_error, 1e-9);
}

TEST(GradientCheck, SoftmaxCrossEntropy) {
  std::mt19937_64 rng(3);
  Var logits = Var::parameter(random_tensor(3, 5, rng, -2, 2), "logits");
  auto res = check_gradients([&] { return cross_entropy_sum(logits, {1, 4, 0}); }, {logits});
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(GradientCheck, RejectsNondeterministicFunction) {
  Var x = Var::parameter(Tensor::scalar(1.0), "x");
  int calls = 0;
  EXPECT_THROW(check_gradients([&] { return scale(x, 1.0 + ++calls); }, {x}), NumericError);
}

// --------------------------------------------------------------------------

TEST(Adam, ZeroGradientWithoutDecayIsFixedPoint) {
  std::mt19937_64 rng(4);
  Var p = Var::parameter(random_tensor(3, 3, rng), "p");
  const Tensor before = p.value();
  p.mutable_grad().fill(0.0);
  Adam opt({.lr = 3e-5, .beta1 = 0.9, .beta2 = 0.99, .weight_decay = 0.0});
  for (int i = 0; i < 5; ++i) opt.step({p});
  EXPECT_EQ(p.value(), before);
}

TEST(Adam, FirstStepClosedForm) {
  // One step with g = 1: m = (1-b1), v = (1-b2); bias correction gives
  // mhat = 1, vhat = 1, so the update is -lr / (1 + eps) after decay.
  const double lr = 3e-5, wd = 1e-2, eps = 1e-8, p0 = 0.5;
  Var p = Var::parameter(Tensor::scalar(p0), "p");
  p.mutable_grad()[0] = 1.0;
  Adam opt({.lr = lr, .beta1 = 0.9, .beta2 = 0.99, .weight_decay = wd, .eps = eps});
  opt.step({p});
  const double m = (1 - 0.9) * 1.0, v = (1 - 0.99) * 1.0;
  const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.99);
  const double expected = p0 * (1 - lr * wd) - lr * mhat / (std::sqrt(vhat) + eps);
  EXPECT_NEAR(p.value()[0], expected, 1e-15);
  EXPECT_NEAR(p.value()[0] - p0 * (1 - lr * wd), -lr, 1e-12);
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(Adam, IdenticalGradientsGiveIdenticalUpdates) {
  Var a = Var::parameter(Tensor::scalar(0.3), "a"), b = Var::parameter(Tensor::scalar(0.3), "b");
  Adam opt;
  for (int i = 0; i < 4; ++i) {
    a.mutable_grad()[0] = b.mutable_grad()[0] = 0.1 * (i + 1);
    opt.step({a, b});
  }
  EXPECT_EQ(a.value()[0], b.value()[0]);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Var a = Var::parameter(Tensor::scalar(0.0), "encoder.w");
  a.mutable_grad()[0] = std::nan("");
  Adam opt;
  try {
    opt.step({a});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.w"), std::string::npos);
  }
}

TEST(Checkpoint, ExactRoundTripWithOptimiserState) {
  std::mt19937_64 rng(5);
  ParameterStore store;
  store.add("a.weight", random_tensor(3, 4, rng));
  store.add("a.bias", random_tensor(1, 4, rng));
  Adam opt;
  for (auto p : store.all()) p.mutable_grad().fill(0.25);
  opt.step(store.all());
  Checkpoint ck;
  ck.meta["kind"] = "test";
  ck.put_parameters(store, "model.");
  ck.put_optimizer(opt, "adam.");
  const auto path = (std::filesystem::temp_directory_path() / "mag_ckpt_test.bin").string();
  ck.save(path);

  auto loaded = Checkpoint::load(path);
  ParameterStore other;
  other.add("a.weight", Tensor({3, 4}));
  other.add("a.bias", Tensor({1, 4}));
  loaded.load_parameters(other, "model.");
  for (std::size_t i = 0; i < store.size(); ++i) EXPECT_EQ(store.all()[i].value(), other.all()[i].value());
  Adam restored;
  loaded.load_optimizer(restored, "adam.");
  EXPECT_EQ(restored.step_count(), 1u);
  EXPECT_EQ(restored.first_moments()[0], opt.first_moments()[0]);
  EXPECT_EQ(loaded.meta.at("kind"), "test");

  ParameterStore wrong;
  wrong.add("a.weight", Tensor({4, 3}));
  EXPECT_THROW(loaded.load_parameters(wrong, "model."), ValidationError);
  std::filesystem::remove(path);
}
