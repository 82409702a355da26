// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nebla/autodiff.hpp"
#include "nebla/gradcheck.hpp"

using namespace nebla;

namespace {

template <typename T>
void fill_normal(Tensor<T>& t, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<T>(n(rng));
}

Parameter<double>& random_param(ParameterStore<double>& s, const std::string& name, Shape shape,
                                std::uint64_t seed, double stddev = 1.0) {
  auto& p = s.add(name, std::move(shape));
  fill_normal(p.value, seed, stddev);
  return p;
}

// Contracts an arbitrary output with fixed random weights so every output
// element contributes a distinct gradient.
Var<double> probe(Var<double> y, std::uint64_t seed = 99) {
  Tensor<double> w(y.shape());
  fill_normal(w, seed);
  return sum(mul(y, y.graph->constant(std::move(w))));
}

void expect_gradcheck(ParameterStore<double>& s, const LossBuilder& fn, double rtol = 1e-4) {
  GradCheckOptions o;
  o.rtol = rtol;
  auto r = gradcheck(s, fn, o);
  EXPECT_TRUE(r.pass) << r.worst_entry << " analytic=" << r.worst_analytic << " numeric=" << r.worst_numeric;
  EXPECT_GT(r.checked, 0u);
}

}  // namespace

TEST(Matmul, IdentityTimesIdentity) {
  Graph<float> g;
  auto i2 = g.constant(Tensor<float>({2, 2}, {1, 0, 0, 1}));
  EXPECT_EQ(matmul(i2, i2).value(), Tensor<float>({2, 2}, {1, 0, 0, 1}));
}

TEST(Matmul, HandArithmetic) {
  Graph<float> g;
  auto a = g.constant(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  auto b = g.constant(Tensor<float>({2, 1}, {1, 1}));
  EXPECT_EQ(matmul(a, b).value(), Tensor<float>({2, 1}, {3, 7}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph<float> g;
  auto a = g.constant(Tensor<float>({2, 3}));
  auto b = g.constant(Tensor<float>({2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] and [2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  ParameterStore<double> s;
  auto& a = random_param(s, "a", {3, 4}, 1);
  auto& b = random_param(s, "b", {4, 2}, 2);
  expect_gradcheck(s, [&](Graph<double>& g) { return probe(matmul(g.param(a), g.param(b))); });
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  ParameterStore<double> s;
  auto& x = random_param(s, "x", {5, 3}, 1);
  auto& w = random_param(s, "w", {3, 4}, 2);
  auto& b = random_param(s, "b", {4}, 3);
  expect_gradcheck(s, [&](Graph<double>& g) { return probe(linear(g.param(x), g.param(w), g.param(b))); });
}

TEST(Transpose, GradientMatchesFiniteDifferences) {
  ParameterStore<double> s;
  auto& x = random_param(s, "x", {3, 5}, 1);
  expect_gradcheck(s, [&](Graph<double>& g) { return probe(transpose(g.param(x))); });
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Graph<float> g;
  Tensor<float> x({1, 4, 5});
  fill_normal(x, 3);
  auto y = conv2d(g.constant(x), g.constant(Tensor<float>({1, 1, 1, 1}, 1.0f)),
                  std::optional<Var<float>>(g.constant(Tensor<float>({1}))), 1, 0);
  EXPECT_EQ(y.value(), x);
}

TEST(Conv2d, AllOnesCenterCountsNine) {
  Graph<float> g;
  auto y = conv2d(g.constant(Tensor<float>({1, 5, 5}, 1.0f)), g.constant(Tensor<float>({1, 1, 3, 3}, 1.0f)),
                  std::nullopt, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 5, 5}));
  EXPECT_FLOAT_EQ(y.value()[2 * 5 + 2], 9.0f);
  EXPECT_FLOAT_EQ(y.value()[0], 4.0f);
  EXPECT_FLOAT_EQ(y.value()[2], 6.0f);
}

TEST(Conv2d, CrossCorrelationDoesNotFlip) {
  Graph<float> g;
  Tensor<float> x({1, 1, 3}, {1, 2, 3});
  Tensor<float> w({1, 1, 1, 2}, {10, 1});
  auto y = conv2d(g.constant(x), g.constant(w), std::nullopt, 1, 0);
  EXPECT_EQ(y.value(), Tensor<float>({1, 1, 2}, {12, 23}));
}

TEST(Conv2d, RejectsBadArguments) {
  Graph<float> g;
  auto x = g.constant(Tensor<float>({2, 4, 4}));
  EXPECT_THROW(conv2d(x, g.constant(Tensor<float>({1, 2, 3, 3})), std::nullopt, 0, 1), std::invalid_argument);
  EXPECT_THROW(conv2d(x, g.constant(Tensor<float>({1, 3, 3, 3})), std::nullopt, 1, 1), std::invalid_argument);
  EXPECT_THROW(conv2d(x, g.constant(Tensor<float>({1, 2, 7, 7})), std::nullopt, 1, 1), std::invalid_argument);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  ParameterStore<double> s;
  auto& x = random_param(s, "x", {2, 6, 7}, 1);
  auto& w = random_param(s, "w", {3, 2, 3, 3}, 2);
  auto& b = random_param(s, "b", {3}, 3);
  for (std::size_t stride : {1u, 2u}) {
    expect_gradcheck(s, [&](Graph<double>& g) {
      return probe(conv2d(g.param(x), g.param(w), std::optional(g.param(b)), stride, 1));
    });
  }
}

TEST(Conv3d, GradientMatchesFiniteDifferences) {
  ParameterStore<double> s;
  auto& x = random_param(s, "x", {2, 4, 5, 6}, 1);
  auto& w = random_param(s, "w", {2, 2, 3, 3, 3}, 2);
  auto& b = random_param(s, "b", {2}, 3);
  for (std::size_t stride : {1u, 2u}) {
    expect_gradcheck(s, [&](Graph<double>& g) {
      return probe(conv3d(g.param(x), g.param(w), std::optional(g.param(b)), stride, 1));
    });
  }
}

TEST(ConvTranspose, GradientMatchesFiniteDifferences) {
  ParameterStore<double> s;
  auto& x2 = random_param(s, "x2", {3, 3, 4}, 1);
  auto& w2 = random_param(s, "w2", {3, 2, 2, 2}, 2);
  auto& b2 = random_param(s, "b2", {2}, 3);
  auto& x3 = random_param(s, "x3", {2, 2, 3, 2}, 4);
  auto& w3 = random_param(s, "w3", {2, 3, 2, 2, 2}, 5);
  expect_gradcheck(s, [&](Graph<double>& g) {
    auto a = conv_transpose2d(g.param(x2), g.param(w2), std::optional(g.param(b2)), 2, 0);
    auto c = conv_transpose3d(g.param(x3), g.param(w3), std::nullopt, 2, 0);
    EXPECT_EQ(a.shape(), (Shape{2, 6, 8}));
    EXPECT_EQ(c.shape(), (Shape{3, 4, 6, 4}));
    return add(probe(a, 5), probe(c, 6));
  });
}

TEST(ConvTranspose, IsAdjointOfConvolution) {
  // <conv(x, w), y> == <x, conv_transpose(y, w)> when the strides tile the input exactly.
  const std::vector<std::pair<std::size_t, Shape>> cases = {
      {1, {2, 7, 6, 5}}, {2, {2, 7, 5, 9}}, {3, {2, 7, 4, 10}}};
  for (const auto& [stride, xshape] : cases) {
    Graph<double> g;
    Tensor<double> x(xshape), w({3, 2, 3, 3, 3});
    fill_normal(x, 11 + stride);
    fill_normal(w, 21 + stride);
    auto y = conv3d(g.constant(x), g.constant(w), std::nullopt, stride, 1);
    Tensor<double> r(y.shape());
    fill_normal(r, 31 + stride);
    // conv_transpose weights are [Ci_t, Co_t, ...] = [3, 2, ...], the same tensor.
    auto xt = conv_transpose3d(g.constant(r), g.constant(w), std::nullopt, stride, 1);
    ASSERT_EQ(xt.shape(), x.shape());
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < r.size(); ++i) lhs += y.value()[i] * r[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * xt.value()[i];
    EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::abs(lhs))) << "stride " << stride;
  }
}

TEST(Swish, ValuesAndGradient) {
  Graph<float> g;
  auto y = swish(g.constant(Tensor<float>({3}, {0.0f, 50.0f, -50.0f})), 1.2f);
  EXPECT_EQ(y.value()[0], 0.0f);
  EXPECT_NEAR(y.value()[1], 50.0f, 1e-4);
  EXPECT_NEAR(y.value()[2], 0.0f, 1e-4);
  EXPECT_THROW(swish(g.constant(Tensor<float>({1})), 0.0f), std::invalid_argument);

  ParameterStore<double> s;
  auto& x = random_param(s, "x", {17}, 4, 3.0);
  expect_gradcheck(s, [&](Graph<double>& g) { return probe(swish(g.param(x), 1.2)); });
}

TEST(Softmax, UniformInputGivesUniformOutput) {
  Graph<float> g;
  auto y = softmax(g.constant(Tensor<float>({2, 4}, 3.0f)), -1);
  for (float v : y.value().data()) EXPECT_FLOAT_EQ(v, 0.25f);
  EXPECT_THROW(softmax(g.constant(Tensor<float>({2, 4})), 2), std::invalid_argument);
}

TEST(LayerNorm, RowsAreStandardizedBeforeAffine) {
  Graph<double> g;
  Tensor<double> x({3, 8});
  fill_normal(x, 5, 4.0);
  auto y = layer_norm(g.constant(x), g.constant(Tensor<double>({8}, 1.0)), g.constant(Tensor<double>({8})));
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 8; ++i) m += y.value()[r * 8 + i];
    m /= 8;
    for (std::size_t i = 0; i < 8; ++i) v += std::pow(y.value()[r * 8 + i] - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 8, 1.0, 1e-4);
  }
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  ParameterStore<double> s;
  auto& a = random_param(s, "a", {4, 6}, 1);
  auto& b = random_param(s, "b", {4, 6}, 2);
  auto& gain = random_param(s, "gain", {6}, 3);
  auto& bias = random_param(s, "bias", {6}, 4);
  auto& c = random_param(s, "c", {3, 4, 5}, 5);
  expect_gradcheck(s, [&](Graph<double>& g) {
    auto A = g.param(a), B = g.param(b);
    auto t = add(mul(A, B), sub(sigmoid(A), scale(square(B), 0.3)));
    t = add_bias(t, g.param(bias));
    t = softmax(t, 1);
    t = layer_norm(t, g.param(gain), g.param(bias));
    auto u = instance_norm(g.param(c));
    auto v = softmax(g.param(c), 0);
    return add(add(probe(t, 1), probe(u, 2)), add(probe(v, 3), mean(square(A))));
  });
}

TEST(ShapeOps, GradientsMatchFiniteDifferences) {
  ParameterStore<double> s;
  auto& a = random_param(s, "a", {3, 4, 2}, 1);
  auto& b = random_param(s, "b", {3, 2, 2}, 2);
  expect_gradcheck(s, [&](Graph<double>& g) {
    auto cat = concat<double>({g.param(a), g.param(b)}, 1);
    auto parts = split(cat, 1, {1, 5});
    auto r = reshape(parts[1], {15, 2});
    auto sl = slice(r, 0, 3, 7);
    return add(probe(sl, 1), probe(parts[0], 2));
  });
}

TEST(ShapeOps, ConcatOfSplitIsIdentity) {
  Graph<float> g;
  Tensor<float> x({2, 7, 3});
  fill_normal(x, 9);
  auto xv = g.constant(x);
  for (int axis : {0, 1, 2}) {
    const std::size_t n = x.dim(static_cast<std::size_t>(axis));
    std::vector<std::size_t> lens = n == 2 ? std::vector<std::size_t>{1, 1} : std::vector<std::size_t>{1, n - 1};
    EXPECT_EQ(concat(split(xv, axis, lens), axis).value(), x);
  }
  EXPECT_THROW(split(xv, 1, {3, 3}), std::invalid_argument);
  EXPECT_THROW(slice(xv, 3, 0, 1), std::invalid_argument);
}

TEST(MaxReduce, RoutesGradientToFirstMaximum) {
  ParameterStore<float> s;
  auto& x = s.add("x", {3});
  x.value = Tensor<float>({3}, {3, 5, 5});
  Graph<float> g;
  auto y = max_reduce(g.param(x), 0);
  EXPECT_EQ(y.value()[0], 5.0f);
  g.backward(sum(y));
  EXPECT_EQ(x.grad, Tensor<float>({3}, {0, 1, 0}));
}

TEST(MaxReduce, GradientMatchesFiniteDifferencesAwayFromTies) {
  ParameterStore<double> s;
  auto& x = random_param(s, "x", {4, 5, 3}, 7);
  expect_gradcheck(s, [&](Graph<double>& g) {
    return add(add(probe(max_reduce(g.param(x), 0), 1), probe(max_reduce(g.param(x), 1), 2)),
               probe(max_reduce(g.param(x), -1), 3));
  });
}

TEST(GatherScatter, GradientsMatchFiniteDifferences) {
  ParameterStore<double> s;
  auto& t = random_param(s, "table", {6, 3}, 1);
  auto& v = random_param(s, "values", {7}, 2);
  auto idx = std::make_shared<const std::vector<std::uint32_t>>(std::vector<std::uint32_t>{5, 0, 5, 2});
  auto tgt = std::make_shared<const std::vector<std::uint32_t>>(std::vector<std::uint32_t>{0, 3, 3, 1, 0, 0, 4});
  expect_gradcheck(s, [&](Graph<double>& g) {
    return add(probe(gather_rows(g.param(t), idx), 1), probe(scatter_mean(g.param(v), tgt, {2, 3}), 2));
  });
}

TEST(ScatterMean, AveragesAndLeavesUntouchedZero) {
  Graph<float> g;
  auto tgt = std::make_shared<const std::vector<std::uint32_t>>(std::vector<std::uint32_t>{2, 2});
  auto y = scatter_mean(g.constant(Tensor<float>({2}, {10, 20})), tgt, {4});
  EXPECT_EQ(y.value(), Tensor<float>({4}, {0, 0, 15, 0}));
}

TEST(Dropout, IdentityAtEvaluationAndInvertedScalingInTraining) {
  Tensor<float> x({1000}, 1.0f);
  {
    Graph<float> g(false);
    EXPECT_EQ(dropout(g.constant(x), 0.1f).value(), x);
  }
  Graph<float> g(true, 7);
  auto y = dropout(g.constant(x), 0.1f);
  std::size_t zeros = 0;
  for (float v : y.value().data()) {
    if (v == 0.0f) ++zeros;
    else EXPECT_FLOAT_EQ(v, 1.0f / 0.9f);
  }
  EXPECT_GT(zeros, 50u);
  EXPECT_LT(zeros, 150u);
  Graph<float> g2(true, 7);
  EXPECT_EQ(dropout(g2.constant(x), 0.1f).value(), y.value());
}

TEST(Backward, IdentityAndSquareSum) {
  ParameterStore<float> s;
  auto& x = s.add("x", {2});
  x.value = Tensor<float>({2}, {1, 2});
  {
    Graph<float> g;
    g.backward(sum(square(g.param(x))));
  }
  EXPECT_EQ(x.grad, Tensor<float>({2}, {2, 4}));
  {
    Graph<float> g;
    g.backward(sum(square(g.param(x))));
  }
  EXPECT_EQ(x.grad, Tensor<float>({2}, {4, 8})) << "repeated backward accumulates";
  s.zero_grad();
  auto& y = s.add("y", {1});
  Graph<float> g;
  auto yv = g.param(y);
  g.backward(yv);
  EXPECT_EQ(y.grad[0], 1.0f);
}

TEST(Backward, RejectsNonScalarOutput) {
  ParameterStore<float> s;
  auto& x = s.add("x", {2});
  Graph<float> g;
  EXPECT_THROW(g.backward(square(g.param(x))), std::invalid_argument);
}

TEST(Backward, IsBitReproducible) {
  auto run = [] {
    ParameterStore<float> s;
    auto& x = s.add("x", {4, 9, 9});
    auto& w = s.add("w", {3, 4, 3, 3});
    fill_normal(x.value, 1);
    fill_normal(w.value, 2);
    Graph<float> g(true, 3);
    auto y = dropout(swish(conv2d(g.param(x), g.param(w), std::nullopt, 1, 1), 1.0f), 0.2f);
    g.backward(mean(square(y)));
    return std::make_pair(x.grad, w.grad);
  };
  EXPECT_EQ(run(), run());
}
