#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "c2c/gradcheck.hpp"
#include "c2c/optim.hpp"
#include "c2c/tensor.hpp"
#include "helpers.hpp"

using namespace c2c;
using c2c::testing::random_tensor;

namespace {

// Reduces an op output to a scalar with fixed random weights so every output
// coordinate contributes to the gradient.
Tensor weighted_sum(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(out.shape(), rng, false);
  return sum_all(mul(out, w));
}

void expect_op_gradients(const std::function<Tensor()>& f, std::vector<NamedTensor> params) {
  GradcheckOptions opt;
  opt.tolerance = 1e-6;
  opt.abs_floor = 1e-6;
  const GradcheckReport r = gradcheck(f, std::move(params), opt);
  EXPECT_TRUE(r.passed) << "max relative error " << r.max_rel_error;
}

}  // namespace

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor a({2}, {1, 2}), b({3}, {1, 2, 3});
  EXPECT_THROW(add(a, b), ShapeError);
}

TEST(Tensor, MatmulMatchesHandComputation) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(c[0], 58);
  EXPECT_DOUBLE_EQ(c[1], 64);
  EXPECT_DOUBLE_EQ(c[2], 139);
  EXPECT_DOUBLE_EQ(c[3], 154);
}

TEST(Tensor, BackwardAccumulates) {
  Tensor x({2}, {1.0, 2.0}, true);
  sum_all(mul(x, x)).backward();
  sum_all(mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Tensor, SharedSubexpressionGetsBothContributions) {
  Tensor x({1}, {3.0}, true);
  Tensor y = mul(x, x);
  add(y, y).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Tensor, NoGradGuardStopsRecording) {
  Tensor x({1}, {3.0}, true);
  NoGradGuard guard;
  Tensor y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tensor, MeanOverTimeIsExactlyPermutationInvariant) {
  Rng rng(3);
  Tensor x = random_tensor({2, 7, 5}, rng, false);
  std::vector<double> perm(x.size());
  const std::vector<std::size_t> order{6, 2, 0, 5, 1, 4, 3};
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 7; ++t) {
      for (std::size_t d = 0; d < 5; ++d) perm[(b * 7 + t) * 5 + d] = x[(b * 7 + order[t]) * 5 + d];
    }
  }
  Tensor m1 = mean_over_axis(x, 1);
  Tensor m2 = mean_over_axis(Tensor({2, 7, 5}, perm), 1);
  for (std::size_t i = 0; i < m1.size(); ++i) EXPECT_EQ(m1[i], m2[i]);
}

TEST(Tensor, ConvOnConstantSequenceIsFrameInvariant) {
  Rng rng(5);
  std::vector<double> frame(4);
  for (double& v : frame) v = rng.normal();
  std::vector<double> x;
  for (int t = 0; t < 6; ++t) x.insert(x.end(), frame.begin(), frame.end());
  Tensor w = random_tensor({3, 4, 3}, rng, false);
  Tensor y = conv1d_temporal(Tensor({1, 6, 4}, x), w, Tensor::zeros({3}));
  for (std::size_t t = 1; t < 6; ++t) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y[t * 3 + c], y[c]);
  }
}

TEST(Tensor, CosineSelfSimilarityIsOne) {
  Rng rng(7);
  Tensor x = random_tensor({3, 6}, rng, false);
  Tensor c = cosine_similarity(x, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(c[i * 3 + i], 1.0, 1e-15);
}

TEST(Tensor, CosineMatchesDirectOracle) {
  Rng rng(8);
  Tensor a = random_tensor({4, 5}, rng, false);
  Tensor b = random_tensor({3, 5}, rng, false);
  Tensor c = cosine_similarity(a, b);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t k = 0; k < 5; ++k) {
        dot += a[i * 5 + k] * b[j * 5 + k];
        na += a[i * 5 + k] * a[i * 5 + k];
        nb += b[j * 5 + k] * b[j * 5 + k];
      }
      EXPECT_NEAR(c[i * 3 + j], dot / std::sqrt(na * nb), 1e-12);
    }
  }
}

TEST(Tensor, CosineZeroNormThrows) {
  Tensor a({1, 2}, {0.0, 0.0});
  Tensor b({1, 2}, {1.0, 0.0});
  EXPECT_THROW(cosine_similarity(a, b), NumericalError);
}

TEST(Tensor, CrossEntropyEqualLogitsIsLn2) {
  Tensor logits({1, 2}, {0.3, 0.3});
  const std::vector<std::size_t> target{1};
  EXPECT_NEAR(softmax_cross_entropy(logits, target).item(), std::log(2.0), 1e-15);
}

TEST(Tensor, CrossEntropyRejectsBadTemperatureAndTarget) {
  Tensor logits({1, 3}, {0.1, 0.2, 0.3});
  const std::vector<std::size_t> target{2};
  CrossEntropyOptions opt;
  opt.temperature = 0.0;
  EXPECT_THROW(softmax_cross_entropy(logits, target, opt), InvalidConfig);
  const std::vector<std::uint8_t> mask{1, 1, 0};
  CrossEntropyOptions masked;
  masked.column_mask = mask;
  EXPECT_THROW(softmax_cross_entropy(logits, target, masked), InvalidInput);
}

TEST(Tensor, MaskedCrossEntropyMatchesOracle) {
  Rng rng(11);
  const std::size_t m = 5, n = 7;
  Tensor logits = random_tensor({m, n}, rng, false);
  const std::vector<std::uint8_t> cols{1, 0, 1, 1, 0, 1, 0};
  std::vector<std::uint8_t> rows(m * n, 0);
  rows[0 * n + 1] = 1;
  rows[3 * n + 6] = 1;
  const std::vector<std::size_t> targets{1, 0, 2, 6, 5};
  const std::vector<double> weights{0.5, 1.0, 0.2, 0.9, 0.0};
  CrossEntropyOptions opt;
  opt.temperature = 0.3;
  opt.column_mask = cols;
  opt.row_mask = rows;
  opt.row_weights = weights;
  const double got = softmax_cross_entropy(logits, targets, opt).item();
  double want = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (cols[j] || rows[i * n + j]) z += std::exp(logits[i * n + j] / 0.3);
    }
    want += weights[i] * -std::log(std::exp(logits[i * n + targets[i]] / 0.3) / z);
  }
  want /= static_cast<double>(m);
  EXPECT_NEAR(got, want, 1e-10);
}

TEST(Tensor, ConditionalCrossEntropyOfEqualRowsIsEntropy) {
  const std::vector<double> p{0.75, 0.25, 0.5, 0.5};
  Tensor model({2, 2}, p);
  const double h = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25)) - std::log(0.5);
  EXPECT_NEAR(conditional_cross_entropy(model, p).item(), h / 2.0, 1e-7);
}

TEST(OpGradients, ElementwiseAndShapeOps) {
  Rng rng(21);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor bias = random_tensor({4}, rng);
  expect_op_gradients([&] { return weighted_sum(add(a, b), 1); }, {{"a", a}, {"b", b}});
  expect_op_gradients([&] { return weighted_sum(sub(a, b), 2); }, {{"a", a}, {"b", b}});
  expect_op_gradients([&] { return weighted_sum(mul(a, b), 3); }, {{"a", a}, {"b", b}});
  expect_op_gradients([&] { return weighted_sum(affine(a, 0.7, -0.2), 4); }, {{"a", a}});
  expect_op_gradients([&] { return weighted_sum(add_bias(a, bias), 5); }, {{"a", a}, {"bias", bias}});
  expect_op_gradients([&] { return weighted_sum(reshape(a, {2, 6}), 6); }, {{"a", a}});
  expect_op_gradients([&] { return weighted_sum(concat(a, b), 7); }, {{"a", a}, {"b", b}});
  expect_op_gradients([&] { return weighted_sum(gather_rows(a, {2, 0, 2}), 8); }, {{"a", a}});
  expect_op_gradients([&] { return weighted_sum(gather_cols(a, {3, 1, 1, 0}), 9); }, {{"a", a}});
  expect_op_gradients([&] { return weighted_sum(slice_channels(a, 1, 3), 10); }, {{"a", a}});
  expect_op_gradients([&] { return sum_all(mul(a, a)); }, {{"a", a}});
}

TEST(OpGradients, ReluAwayFromKink) {
  std::vector<double> v{-1.0, 0.5, 2.0, -0.3, 0.1, -2.0};
  Tensor a({2, 3}, v, true);
  expect_op_gradients([&] { return weighted_sum(relu(a), 11); }, {{"a", a}});
}

TEST(OpGradients, Reductions) {
  Rng rng(22);
  Tensor x = random_tensor({2, 3, 4}, rng);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    expect_op_gradients([&] { return weighted_sum(mean_over_axis(x, axis), 12 + axis); }, {{"x", x}});
  }
}

TEST(OpGradients, MatmulConvCosine) {
  Rng rng(23);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  expect_op_gradients([&] { return weighted_sum(matmul(a, b), 20); }, {{"a", a}, {"b", b}});
  Tensor x = random_tensor({2, 5, 3}, rng);
  Tensor w = random_tensor({3, 3, 4}, rng);
  Tensor bias = random_tensor({4}, rng);
  expect_op_gradients([&] { return weighted_sum(conv1d_temporal(x, w, bias), 21); },
                      {{"x", x}, {"w", w}, {"bias", bias}});
  Tensor p = random_tensor({4, 3}, rng);
  Tensor q = random_tensor({5, 3}, rng);
  expect_op_gradients([&] { return weighted_sum(cosine_similarity(p, q), 22); }, {{"p", p}, {"q", q}});
}

TEST(OpGradients, Losses) {
  Rng rng(24);
  Tensor logits = random_tensor({4, 5}, rng);
  const std::vector<std::size_t> targets{0, 2, 4, 2};
  const std::vector<std::uint8_t> cols{1, 0, 1, 0, 1};
  const std::vector<double> weights{0.3, 1.0, 0.7, 0.5};
  CrossEntropyOptions opt;
  opt.temperature = 0.5;
  opt.column_mask = cols;
  opt.row_weights = weights;
  expect_op_gradients([&] { return softmax_cross_entropy(logits, targets, opt); }, {{"logits", logits}});

  std::vector<double> pos(6);
  for (double& v : pos) v = rng.uniform(0.2, 1.0);
  Tensor model({2, 3}, pos, true);
  const std::vector<double> target{0.5, 0.0, 0.5, 0.2, 0.3, 0.5};
  expect_op_gradients([&] { return conditional_cross_entropy(model, target); }, {{"model", model}});
}

TEST(Gradcheck, LinearLossIsExactToRounding) {
  Rng rng(25);
  Tensor a = random_tensor({6}, rng);
  Tensor w = random_tensor({6}, rng, false);
  const GradcheckReport r = gradcheck([&] { return sum_all(mul(a, w)); }, {{"a", a}});
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor x({2}, {1.0, -2.0}, true);
  AdamOptimizer opt({x}, {});
  sum_all(scale(x, 0.0)).backward();
  opt.step();
  EXPECT_EQ(x[0], 1.0);
  EXPECT_EQ(x[1], -2.0);
}

TEST(Adam, MovesAgainstGradientSign) {
  Tensor x({1}, {0.0}, true);
  AdamOptimizer opt({x}, {.learning_rate = 0.1});
  double prev = x[0];
  for (int i = 0; i < 5; ++i) {
    opt.zero_grad();
    scale(x, 3.0).backward();
    opt.step();
    EXPECT_LT(x[0], prev);
    prev = x[0];
  }
}

TEST(Adam, MinimizesQuadraticBowl) {
  Tensor x({3}, {2.0, -1.5, 0.7}, true);
  Tensor center({3}, {0.5, 0.25, -0.5});
  auto loss = [&] {
    Tensor d = sub(x, center);
    return sum_all(mul(d, d));
  };
  const double initial = loss().item();
  AdamOptimizer opt({x}, {.learning_rate = 0.05});
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    loss().backward();
    opt.step();
  }
  EXPECT_LT(loss().item(), 1e-3 * initial);
}

TEST(Adam, NonFiniteGradientThrows) {
  Tensor x({1}, {0.0}, true);
  AdamOptimizer opt({x}, {});
  scale(x, std::numeric_limits<double>::infinity()).backward();
  EXPECT_THROW(opt.step(), NumericalError);
}
