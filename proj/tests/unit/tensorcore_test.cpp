#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "pvpl/gradcheck.hpp"
#include "pvpl/ops.hpp"
#include "pvpl/optim.hpp"
#include "pvpl/rng.hpp"

namespace pvpl {
namespace {

using T64 = BasicTensor<double>;

Tensor randn(Rng& rng, Shape shape, double sd = 1.0) {
  std::vector<float> v(shape_size(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, sd));
  return Tensor(std::move(shape), std::move(v));
}

T64 randn64(Rng& rng, Shape shape, double sd = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return T64(std::move(shape), std::move(v));
}

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(Tensor, ShapeMatchesData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), DimensionError);
  Tensor t({2, 3}, std::vector<float>(6, 1.0f));
  EXPECT_EQ(t.size(), shape_size(t.shape()));
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Matmul, IdentityCase) {
  auto a = Tensor::from_rows({{1, 0}, {0, 1}});
  auto b = Tensor::from_rows({{3, 4}, {5, 6}});
  EXPECT_EQ(values(matmul(a, b)), (std::vector<float>{3, 4, 5, 6}));
}

TEST(Matmul, RowTimesColumn) {
  auto c = matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}}));
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c(0), 11.0f);
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x2"), std::string::npos) << msg;
  }
}

TEST(Matmul, BackwardMatchesFiniteDifferences) {
  Rng rng(3);
  auto a = randn64(rng, {4, 5});
  auto b = randn64(rng, {5, 3});
  auto w = randn64(rng, {12});
  auto lhs = grad_check<double>([&](const T64& x) { return sum(mul(reshape(matmul(x, b), {12}), w)); }, a);
  auto rhs = grad_check<double>([&](const T64& x) { return sum(mul(reshape(matmul(a, x), {12}), w)); }, b);
  EXPECT_TRUE(lhs.passed) << lhs.max_rel_err;
  EXPECT_TRUE(rhs.passed) << rhs.max_rel_err;
}

TEST(Matmul, BackwardFormula) {
  // dA = dC B^T, dB = A^T dC with dC = ones.
  auto a = Tensor::from_rows({{1, 2}, {3, 4}}, true);
  auto b = Tensor::from_rows({{5, 6, 7}, {8, 9, 10}}, true);
  backward(sum(matmul(a, b)));
  EXPECT_EQ(std::vector<float>(a.grad().begin(), a.grad().end()), (std::vector<float>{18, 27, 18, 27}));
  EXPECT_EQ(std::vector<float>(b.grad().begin(), b.grad().end()), (std::vector<float>{4, 4, 4, 6, 6, 6}));
}

TEST(Relu, Forward) {
  EXPECT_EQ(values(relu(Tensor::vector({-1, 0, 2}))), (std::vector<float>{0, 0, 2}));
  auto pos = Tensor::vector({0.5f, 3, 7});
  EXPECT_EQ(values(relu(pos)), values(pos));
}

TEST(Relu, GateGradient) {
  auto x = Tensor::vector({-1, 2}, true);
  backward(sum(relu(x)));
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{0, 1}));
}

TEST(Relu, SubgradientAtZeroIsZero) {
  auto x = Tensor::vector({0}, true);
  backward(sum(relu(x)));
  EXPECT_EQ(x.grad()[0], 0.0f);
}

TEST(Softmax, Symmetric) {
  auto s = softmax(Tensor::vector({0, 0}));
  EXPECT_FLOAT_EQ(s(0), 0.5f);
  EXPECT_FLOAT_EQ(s(1), 0.5f);
}

TEST(Softmax, ClosedForm) {
  auto s = softmax(T64::vector({1, 0}));
  const double e = std::exp(1.0);
  EXPECT_NEAR(s(0), e / (e + 1), 1e-12);
  EXPECT_NEAR(s(1), 1 / (e + 1), 1e-12);
  EXPECT_NEAR(s(0), 0.7311, 1e-4);
}

TEST(Softmax, RejectsNonPositiveTemperature) {
  EXPECT_THROW(softmax(Tensor::vector({1, 2}), 0.0f), ParameterError);
  EXPECT_THROW(softmax(Tensor::vector({1, 2}), -1.0f), ParameterError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    // Logits on a 1/64 grid and integer shifts, so x + shift is exact in f32
    // and any difference comes from softmax itself.
    auto x = randn(rng, {3, 7}, 5.0);
    for (auto& v : x.mutable_data()) v = std::round(v * 64.0f) / 64.0f;
    const float tau = static_cast<float>(rng.uniform(0.05, 3.0));
    const float shift = static_cast<float>(rng.uniform_int(-50, 50));
    auto s = softmax(x, tau);
    auto t = softmax(affine(x, 1.0f, shift), tau);
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        total += s(r, c);
        EXPECT_NEAR(s(r, c), t(r, c), 1e-6);
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, SaturatedLogitsStayFinite) {
  auto s = softmax(Tensor::vector({1000, 0, -1000}));
  for (float v : s.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_FLOAT_EQ(s(0), 1.0f);
}

TEST(Cosine, KnownValues) {
  auto a = Tensor::vector({0.3f, -2, 5});
  EXPECT_NEAR(cosine_similarity(a, a).item(), 1.0, 1e-6);
  EXPECT_NEAR(cosine_similarity(Tensor::vector({1, 0}), Tensor::vector({0, 1})).item(), 0.0, 1e-7);
  EXPECT_NEAR(cosine_similarity(T64::vector({1, 1}), T64::vector({1, 0})).item(), 1 / std::sqrt(2.0), 1e-12);
}

TEST(Cosine, ZeroNormIsDegenerate) {
  EXPECT_THROW(cosine_similarity(Tensor::vector({0, 0}), Tensor::vector({1, 0})), DegenerateVectorError);
  EXPECT_THROW(l2_normalize_rows(Tensor::from_rows({{1, 0}, {0, 0}})), DegenerateVectorError);
}

TEST(Cosine, SelfIsOneAndSymmetric) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = randn(rng, {16}, rng.uniform(0.01, 100));
    auto b = randn(rng, {16});
    const float ab = cosine_similarity(a, b).item();
    EXPECT_NEAR(cosine_similarity(a, a).item(), 1.0, 1e-6);
    EXPECT_EQ(ab, cosine_similarity(b, a).item());
    EXPECT_LE(std::abs(ab), 1.0f);
  }
}

TEST(CrossEntropy, KnownValues) {
  EXPECT_NEAR(cross_entropy(Tensor::vector({1000, 0}), 0).item(), 0.0, 1e-6);
  EXPECT_NEAR(cross_entropy(Tensor::vector({0, 0}), 0).item(), std::log(2.0), 1e-6);
  EXPECT_NEAR(cross_entropy(T64::vector({1, 0}), 0).item(), std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(cross_entropy(T64::vector({1, 0}), 0).item(), 0.3133, 1e-4);
}

TEST(CrossEntropy, TargetOutOfRange) {
  EXPECT_THROW(cross_entropy(Tensor::vector({1, 2}), 2), ParameterError);
  EXPECT_THROW(cross_entropy_rows(Tensor::from_rows({{1, 2}}), {5}), ParameterError);
}

TEST(CrossEntropy, SaturatedGradientFinite) {
  auto x = Tensor::vector({1000, 0, -1000}, true);
  backward(cross_entropy(x, 2));
  for (float g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Sgd, SingleStep) {
  std::vector<Tensor> p{Tensor::vector({1})};
  sgd_step(p, {{2.0f}}, 0.5f);
  EXPECT_EQ(p[0](0), 0.0f);
}

TEST(Sgd, ZeroRateLeavesParams) {
  std::vector<Tensor> p{Tensor::vector({1.5f, -2})};
  sgd_step(p, {{3.0f, 4.0f}}, 0.0f);
  EXPECT_EQ(values(p[0]), (std::vector<float>{1.5f, -2}));
}

TEST(Sgd, ShapeMismatch) {
  std::vector<Tensor> p{Tensor::vector({1, 2})};
  EXPECT_THROW(sgd_step(p, {{1.0f}}, 0.1f), DimensionError);
  EXPECT_THROW(sgd_step(p, {}, 0.1f), DimensionError);
}

TEST(Sgd, HandIterationOnSquare) {
  auto p = Tensor::vector({1}, true);
  Sgd opt({p}, 0.1f);
  const float expected[] = {0.8f, 0.64f};
  for (float e : expected) {
    opt.zero_grad();
    backward(sum(mul(p, p)));
    opt.step();
    EXPECT_NEAR(p(0), e, 1e-6);
  }
}

TEST(GradCheck, SumOfSquaresPasses) {
  Rng rng(1);
  auto r = grad_check<double>([](const T64& x) { return sum(mul(x, x)); }, randn64(rng, {3, 4}));
  EXPECT_TRUE(r.passed);
  EXPECT_LE(r.max_rel_err, 1e-4);
}

TEST(GradCheck, ConstantPasses) {
  auto r = grad_check<double>([](const T64&) { return T64::scalar(3.0); }, T64::vector({1, 2}));
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.max_rel_err, 0.0);
}

TEST(GradCheck, CorruptedBackwardFails) {
  Rng rng(1);
  auto x = randn64(rng, {3, 4});
  BackwardFaultScope fault(1.01);
  auto r = grad_check<double>([](const T64& v) { return sum(mul(v, v)); }, x);
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.max_rel_err, 0.01 / 1.01, 1e-6);
}

TEST(GradCheck, FaultScopeRestores) {
  { BackwardFaultScope fault(2.0); }
  auto x = Tensor::vector({3}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad()[0], 6.0f);
}

TEST(Graph, NonRequiringLeavesGetNoGrad) {
  auto a = Tensor::vector({1, 2}, true);
  auto b = Tensor::vector({3, 4});
  backward(sum(mul(a, b)));
  EXPECT_TRUE(a.has_grad());
  EXPECT_FALSE(b.has_grad());
}

TEST(Graph, ReverseTopologicalOrderWithSharedNodes) {
  // x feeds y twice (diamond); x's grad must be complete before it propagates.
  auto x = T64::vector({2}, true);
  auto y = mul(x, x);
  auto z = add(mul(y, y), y);  // x^4 + x^2
  backward(sum(z));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4 * 8.0 + 2 * 2.0);
}

TEST(Graph, GradientsAccumulateUntilZeroed) {
  auto x = Tensor::vector({1}, true);
  backward(sum(affine(x, 3.0f)));
  backward(sum(affine(x, 3.0f)));
  EXPECT_EQ(x.grad()[0], 6.0f);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Ops, ForwardIsBitwiseDeterministic) {
  Rng rng(11);
  auto a = randn(rng, {6, 9});
  auto b = randn(rng, {9, 4});
  auto f = [&] { return softmax(l2_normalize_rows(matmul(a, b)), 0.3f); };
  auto r1 = f(), r2 = f();
  EXPECT_EQ(std::memcmp(r1.data().data(), r2.data().data(), r1.size() * sizeof(float)), 0);
}

TEST(Ops, FiniteOnFiniteInputs) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = randn(rng, {4, 5}, 30.0);
    for (auto t : {softmax(x, 0.07f), l2_normalize_rows(x), relu(x), matmul(x, transpose(x))})
      for (float v : t.data()) EXPECT_TRUE(std::isfinite(v));
    EXPECT_TRUE(std::isfinite(cross_entropy_rows(x, {0, 1, 2, 3}).item()));
  }
}

TEST(Ops, ShapeErrors) {
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  EXPECT_THROW(add_row(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
  EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4}), DimensionError);
  EXPECT_THROW(select_rows(Tensor::zeros({2, 3}), {2}), DimensionError);
  EXPECT_THROW(concat_rows<float>({Tensor::zeros({2}), Tensor::zeros({3})}), DimensionError);
}

TEST(Rng, DeriveSeparatesStreams) {
  EXPECT_NE(Rng::derive(7, 1), Rng::derive(7, 2));
  EXPECT_NE(Rng::derive(7, 1), Rng::derive(8, 1));
  EXPECT_EQ(Rng::derive(7, 1), Rng::derive(7, 1));
}

TEST(Rng, NormalMoments) {
  Rng rng(2);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

}  // namespace
}  // namespace pvpl
