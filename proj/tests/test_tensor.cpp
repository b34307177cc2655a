#include "non/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace non;

namespace {

// Reference matmul written independently of the library: plain triple loop,
// inner index ascending. Values must match the library bit for bit.
std::vector<double> matmul_oracle(const std::vector<double>& a,
                                  const std::vector<double>& b, std::size_t r,
                                  std::size_t k, std::size_t c) {
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t t = 0; t < k; ++t) out[i * c + j] += a[i * k + t] * b[t * c + j];
  return out;
}

Tensor param(Shape shape, std::vector<double> v) {
  return Tensor::parameter(std::move(shape), std::move(v));
}

}  // namespace

TEST(Tensor, ConstructionAndShapeChecks) {
  Tensor t = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
  EXPECT_THROW(Tensor::constant({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6}).scalar_value(),
               DimensionError);
}

TEST(Tensor, MatmulHandValues) {
  // [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
  Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::constant({2, 1}, {5, 6});
  Tensor y = matmul(a, b);
  ASSERT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(y.at(0), 17.0);
  EXPECT_DOUBLE_EQ(y.at(1), 39.0);
  EXPECT_THROW(matmul(a, Tensor::constant({3, 1}, {1, 2, 3})), DimensionError);
}

TEST(Tensor, MatmulMatchesOracleBitExact) {
  const std::size_t r = 4, k = 7, c = 5;
  std::vector<double> av(r * k), bv(k * c);
  for (std::size_t i = 0; i < av.size(); ++i) av[i] = std::sin(0.37 * double(i + 1));
  for (std::size_t i = 0; i < bv.size(); ++i) bv[i] = std::cos(0.21 * double(i + 1));
  Tensor y = matmul(Tensor::constant({r, k}, av), Tensor::constant({k, c}, bv));
  std::vector<double> expect = matmul_oracle(av, bv, r, k, c);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(y.values()[i], expect[i]);
}

TEST(Tensor, BatchedMatmulMatchesPerSliceLoop) {
  const std::size_t s = 3, r = 4, k = 2, c = 5;
  std::vector<double> xv(s * r * k), wv(s * k * c);
  for (std::size_t i = 0; i < xv.size(); ++i) xv[i] = std::sin(double(i) + 0.5);
  for (std::size_t i = 0; i < wv.size(); ++i) wv[i] = std::cos(double(i) * 0.9);
  Tensor y = batched_matmul(Tensor::constant({s, r, k}, xv),
                            Tensor::constant({s, k, c}, wv));
  ASSERT_EQ(y.shape(), (Shape{s, r, c}));
  for (std::size_t q = 0; q < s; ++q) {
    std::vector<double> xs(xv.begin() + q * r * k, xv.begin() + (q + 1) * r * k);
    std::vector<double> ws(wv.begin() + q * k * c, wv.begin() + (q + 1) * k * c);
    std::vector<double> expect = matmul_oracle(xs, ws, r, k, c);
    for (std::size_t i = 0; i < expect.size(); ++i)
      EXPECT_EQ(y.values()[q * r * c + i], expect[i]);
  }
}

TEST(Tensor, ElementwiseValues) {
  Tensor a = Tensor::constant({3}, {1, -2, 3});
  Tensor b = Tensor::constant({3}, {4, 5, -6});
  EXPECT_EQ(add(a, b).values(), (std::vector<double>{5, 3, -3}));
  EXPECT_EQ(sub(a, b).values(), (std::vector<double>{-3, -7, 9}));
  EXPECT_EQ(mul(a, b).values(), (std::vector<double>{4, -10, -18}));
  EXPECT_EQ(scale(a, 2.0).values(), (std::vector<double>{2, -4, 6}));
  EXPECT_THROW(add(a, Tensor::constant({2}, {1, 2})), DimensionError);
}

TEST(Tensor, AddBiasRank2AndRank3) {
  Tensor x = Tensor::constant({2, 3}, {0, 0, 0, 1, 1, 1});
  Tensor b = Tensor::constant({3}, {10, 20, 30});
  EXPECT_EQ(add_bias(x, b).values(), (std::vector<double>{10, 20, 30, 11, 21, 31}));
  // rank 3: one bias row per leading slice
  Tensor x3 = Tensor::constant({2, 2, 2}, {0, 0, 0, 0, 1, 1, 1, 1});
  Tensor b3 = Tensor::constant({2, 1, 2}, {1, 2, 3, 4});
  EXPECT_EQ(add_bias(x3, b3).values(), (std::vector<double>{1, 2, 1, 2, 4, 5, 4, 5}));
  EXPECT_THROW(add_bias(x, Tensor::constant({2}, {1, 2})), DimensionError);
}

TEST(Tensor, ReluAndSubgradientAtZero) {
  Tensor x = param({4}, {-1.0, 0.0, 0.5, 2.0});
  Tape tape;
  Tensor y = relu(x);
  EXPECT_EQ(y.values(), (std::vector<double>{0, 0, 0.5, 2}));
  tape.backward(reduce_sum(y));
  // d relu / dx at exactly 0 is defined as 0
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 0, 1, 1}));
}

TEST(Tensor, SigmoidValuesAndDerivative) {
  Tensor x = param({3}, {0.0, 100.0, -100.0});
  Tape tape;
  Tensor y = sigmoid(x);
  EXPECT_DOUBLE_EQ(y.at(0), 0.5);
  EXPECT_NEAR(y.at(1), 1.0, 1e-12);
  EXPECT_NEAR(y.at(2), 0.0, 1e-12);
  EXPECT_GT(y.at(2), 0.0);  // stable branch, no underflow to exact 0 via 1/inf
  tape.backward(reduce_sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);  // sigma'(0) = 1/4
}

TEST(Tensor, LogClampedBranches) {
  Tensor x = param({2}, {0.5, 1e-15});
  Tape tape;
  Tensor y = log_clamped(x, 1e-12);
  EXPECT_DOUBLE_EQ(y.at(0), std::log(0.5));
  EXPECT_DOUBLE_EQ(y.at(1), std::log(1e-12));
  tape.backward(reduce_sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);  // 1/0.5
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);  // clamped branch contributes nothing
}

TEST(Tensor, SoftmaxHandValues) {
  // softmax([0, ln 3]) = [1/4, 3/4]
  Tensor x = Tensor::constant({1, 2}, {0.0, std::log(3.0)});
  Tensor y = softmax(x, 1);
  EXPECT_NEAR(y.at(0), 0.25, 1e-15);
  EXPECT_NEAR(y.at(1), 0.75, 1e-15);
  // rows sum to one even with large inputs (max subtraction)
  Tensor big = softmax(Tensor::constant({1, 3}, {1000.0, 1001.0, 999.0}), 1);
  double s = big.at(0) + big.at(1) + big.at(2);
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_FALSE(std::isnan(big.at(0)));
}

TEST(Tensor, SoftmaxAxisOnRank3) {
  Tensor x = Tensor::constant({2, 2, 2}, {0, 0, 1, 2, -1, 3, 0, 0});
  Tensor y = softmax(x, 2);
  for (std::size_t row = 0; row < 4; ++row) {
    EXPECT_NEAR(y.values()[2 * row] + y.values()[2 * row + 1], 1.0, 1e-12);
  }
}

TEST(Tensor, ConcatAxis0AndAxis1) {
  Tensor a = Tensor::constant({1, 2}, {1, 2});
  Tensor b = Tensor::constant({1, 2}, {3, 4});
  EXPECT_EQ(concat({a, b}, 0).values(), (std::vector<double>{1, 2, 3, 4}));
  Tensor c = Tensor::constant({2, 1}, {1, 3});
  Tensor d = Tensor::constant({2, 2}, {2, 9, 4, 9});
  Tensor y = concat({c, d}, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  EXPECT_EQ(y.values(), (std::vector<double>{1, 2, 9, 3, 4, 9}));
  EXPECT_THROW(concat({a, c}, 0), DimensionError);
}

TEST(Tensor, TransposeRank2AndRank3) {
  Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor at = transpose(a);
  ASSERT_EQ(at.shape(), (Shape{3, 2}));
  EXPECT_EQ(at.values(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  Tensor b = Tensor::constant({2, 2, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  Tensor bt = transpose(b);
  ASSERT_EQ(bt.shape(), (Shape{2, 3, 2}));
  EXPECT_EQ(bt.values(), (std::vector<double>{1, 4, 2, 5, 3, 6, 7, 10, 8, 11, 9, 12}));
}

TEST(Tensor, ReshapeAndSlice) {
  Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = reshape(a, {3, 2});
  EXPECT_EQ(r.values(), a.values());
  EXPECT_THROW(reshape(a, {4, 2}), DimensionError);
  Tensor x = Tensor::constant({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_EQ(slice_axis0(x, 1).values(), (std::vector<double>{5, 6, 7, 8}));
  EXPECT_THROW(slice_axis0(x, 2), DimensionError);
}

TEST(Tensor, EmbeddingLookupValuesAndScatterGrad) {
  // table [d=2, n=3]: columns are the embeddings
  Tensor table = param({2, 3}, {1, 2, 3, 4, 5, 6});
  std::vector<std::int32_t> idx{2, 0, 2};
  Tape tape;
  Tensor y = embedding_lookup(table, idx);
  ASSERT_EQ(y.shape(), (Shape{3, 2}));
  EXPECT_EQ(y.values(), (std::vector<double>{3, 6, 1, 4, 3, 6}));
  tape.backward(reduce_sum(y));
  // column 2 gathered twice, column 0 once, column 1 never
  EXPECT_EQ(table.grad(), (std::vector<double>{1, 0, 2, 1, 0, 2}));
  EXPECT_THROW(embedding_lookup(table, {3}), DimensionError);
}

TEST(Tape, GradientAccumulatesOnFanOut) {
  Tensor x = param({1}, {3.0});
  Tape tape;
  Tensor y = add(mul(x, x), x);  // y = x^2 + x, dy/dx = 2x + 1 = 7
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Tape, NoActiveTapeMeansNoTracking) {
  Tensor x = param({1}, {2.0});
  Tensor y = mul(x, x);
  EXPECT_FALSE(y.tracked());
  EXPECT_DOUBLE_EQ(y.at(0), 4.0);
}

TEST(Tape, BackwardRejectsNonScalarAndForeignLoss) {
  Tensor x = param({2}, {1.0, 2.0});
  {
    Tape tape;
    Tensor y = mul(x, x);
    EXPECT_THROW(tape.backward(y), TapeError);
  }
  Tape tape;
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), TapeError);
}

TEST(Tape, ReplayAfterZeroGivesIdenticalGradients) {
  Tensor w = param({2, 2}, {0.3, -0.2, 0.5, 0.9});
  Tensor x = Tensor::constant({2, 2}, {1.0, 2.0, -1.5, 0.25});
  Tape tape;
  Tensor loss = reduce_mean(relu(matmul(x, w)));
  tape.backward(loss);
  std::vector<double> first = w.grad();
  tape.zero_gradients();
  tape.backward(loss);
  EXPECT_EQ(w.grad(), first);  // bit-identical replay
}

TEST(GradCheck, CompositeExpressionMatchesFiniteDifference) {
  // Point chosen away from relu kinks so central differences are clean.
  Tensor w = param({2, 3}, {0.4, -0.3, 0.8, 0.1, 0.7, -0.6});
  Tensor b = param({3}, {0.05, -0.1, 0.2});
  Tensor x = Tensor::constant({4, 2}, {1.0, -0.5, 0.3, 0.8, -1.2, 0.6, 0.9, 0.2});
  std::vector<Tensor> params{w, b};
  auto build = [&]() {
    return reduce_mean(sigmoid(relu(add_bias(matmul(x, w), b))));
  };
  EXPECT_LT(grad_check(build, params, 1e-5), 1e-6);
}

TEST(GradCheck, SoftmaxAndConcatAndBatchedMatmul) {
  Tensor w = param({2, 3, 2}, {0.3, 0.1, -0.4, 0.9, 0.2, -0.7, 0.5, 0.6, -0.1, 0.8,
                               -0.3, 0.25});
  Tensor u = param({2, 2}, {0.4, -0.9, 0.15, 0.3});
  Tensor x = Tensor::constant({2, 2, 3}, {0.5, -1.0, 0.7, 0.2, 0.9, -0.3, 1.1, 0.4,
                                          -0.6, 0.8, -0.2, 0.35});
  std::vector<Tensor> params{w, u};
  auto build = [&]() {
    Tensor h = batched_matmul(x, w);               // [2,2,2]
    Tensor p = softmax(h, 2);                      // row-stochastic
    Tensor flat = reshape(p, {4, 2});
    Tensor mixed = concat({flat, matmul(flat, transpose(u))}, 0);
    return reduce_mean(tanh_op(mixed));
  };
  EXPECT_LT(grad_check(build, params, 1e-5), 1e-6);
}

TEST(GradCheck, EmbeddingLookupAndLog) {
  Tensor table = param({3, 4}, {0.9, 0.4, 0.6, 0.3, 0.8, 0.2, 0.7, 0.5, 0.45, 0.65,
                                0.35, 0.55});
  std::vector<std::int32_t> idx{1, 3, 1};
  std::vector<Tensor> params{table};
  auto build = [&]() {
    Tensor e = embedding_lookup(table, idx);
    return reduce_sum(log_clamped(e, 1e-12));
  };
  EXPECT_LT(grad_check(build, params, 1e-5), 1e-6);
}
