#include "reptrfd/autodiff.hpp"
#include "reptrfd/errors.hpp"

#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace reptrfd::ad {
namespace {

using reptrfd::testing::check_gradients;

DenseTensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  DenseTensor x(std::move(shape));
  for (double &v : x.data()) { v = u(rng); }
  return x;
}

// Weighted sum so every output entry gets a distinct upstream gradient.
Var weighted_sum(Tape &t, Var x)
{
  auto w = random_tensor(x.shape(), 99);
  return sum(mul(x, t.constant(std::move(w))));
}

template <typename F> void expect_gradients(F const &f, std::vector<DenseTensor> inputs, double tol = 1e-5)
{
  auto const r = check_gradients(f, std::move(inputs), 1e-5, tol);
  EXPECT_TRUE(r.failures.empty()) << r.failures.size() << " mismatches, first " << r.failures.front().input << "["
                                  << r.failures.front().entry << "] analytic " << r.failures.front().analytic
                                  << " numeric " << r.failures.front().numeric;
  EXPECT_GT(r.entries, 0);
}

TEST(Tape, SumGradientIsOnes)
{
  Tape t;
  auto x = t.leaf(random_tensor({3, 4}, 1));
  t.backward(sum(x));
  for (double g : x.grad().data()) { EXPECT_EQ(g, 1.0); }
}

TEST(Tape, SquaredNormGradientIsTwiceInput)
{
  Tape t;
  auto const x0 = random_tensor({5}, 2);
  auto x = t.leaf(x0);
  t.backward(sum(square(x)));
  for (Index i = 0; i < 5; ++i) { EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x0[i]); }
}

TEST(Tape, SinForwardAndBackward)
{
  Tape t;
  auto const x0 = random_tensor({6}, 3, -3.0, 3.0);
  auto x = t.leaf(x0);
  auto y = sin(x);
  t.backward(sum(y));
  for (Index i = 0; i < 6; ++i) {
    EXPECT_DOUBLE_EQ(y.value()[i], std::sin(x0[i]));
    EXPECT_DOUBLE_EQ(x.grad()[i], std::cos(x0[i]));
  }
}

TEST(Tape, AbsSubgradientAtZero)
{
  Tape t;
  auto x = t.leaf(DenseTensor({3}, std::vector<double>{-2.0, 0.0, 1.5}));
  t.backward(sum(abs(x)));
  EXPECT_EQ(x.grad()[0], -1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Tape, BackwardRequiresScalar)
{
  Tape t;
  auto x = t.leaf(DenseTensor({2}, 1.0));
  EXPECT_THROW(t.backward(x), ContractError);
}

TEST(Tape, LeafGradientsAccumulateUntilZeroed)
{
  Tape t;
  auto x = t.leaf(DenseTensor({2}, 1.0));
  auto loss = sum(x);
  t.backward(loss);
  t.backward(loss);
  EXPECT_EQ(x.grad()[0], 2.0);
  t.zero_grad();
  t.backward(loss);
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Tape, ConstantsGetNoGradient)
{
  Tape t;
  auto c = t.constant(DenseTensor({2}, 3.0));
  auto x = t.leaf(DenseTensor({2}, 1.0), "x");
  t.backward(sum(mul(c, x)));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_EQ(x.grad()[1], 3.0);
  EXPECT_EQ(t.name(x), "x");
}

TEST(Tape, ReusedNodeSumsBothPaths)
{
  Tape t;
  auto x = t.leaf(DenseTensor({1}, 3.0));
  auto y = mul(x, x);
  t.backward(sum(add(y, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Primitives, ApplyByName)
{
  Tape t;
  auto a = t.leaf(DenseTensor({2}, 2.0));
  auto b = t.leaf(DenseTensor({2}, 5.0));
  Var const ab[] = {a, b};
  EXPECT_EQ(apply("mul", ab).value()[0], 10.0);
  Var const only_a[] = {a};
  EXPECT_EQ(apply("neg", only_a).value()[1], -2.0);
  EXPECT_THROW(apply("conv2d", ab), ContractError);
  EXPECT_THROW(apply("diff", only_a), ContractError);
  EXPECT_TRUE(supported_primitives().contains("tr_contract"));
}

TEST(Primitives, ShapeMismatchThrows)
{
  Tape t;
  auto a = t.leaf(DenseTensor({2, 3}));
  auto b = t.leaf(DenseTensor({3, 2}));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(reshape(a, {5}), ShapeError);
}

TEST(Gradients, Elementwise)
{
  expect_gradients(
    [](Tape &t, std::vector<Var> const &x) {
      auto y = add(mul(sin(x[0]), x[1]), sub(square(x[1]), scale(x[0], 0.5)));
      return weighted_sum(t, add(neg(y), abs(x[1])));
    },
    {random_tensor({3, 4}, 4), random_tensor({3, 4}, 5, 0.2, 1.0)});
}

TEST(Gradients, MeanAndSum)
{
  expect_gradients([](Tape &, std::vector<Var> const &x) { return add(mean(square(x[0])), sum(x[0])); },
                   {random_tensor({7}, 6)});
}

TEST(Gradients, MatmulAndBias)
{
  expect_gradients(
    [](Tape &t, std::vector<Var> const &x) {
      auto h = add_bias(matmul(x[0], x[1], true), x[2]);
      return weighted_sum(t, matmul(h, x[3]));
    },
    {random_tensor({4, 3}, 7), random_tensor({5, 3}, 8), random_tensor({5}, 9), random_tensor({5, 2}, 10)});
}

TEST(Gradients, ReshapePermuteSliceConcat)
{
  expect_gradients(
    [](Tape &t, std::vector<Var> const &x) {
      auto p = permute(reshape(x[0], {2, 3, 4}), {2, 0, 1});
      auto s = slice(p, 0, 1, 3);
      Var const parts[] = {s, x[1]};
      return weighted_sum(t, concat(parts, 1));
    },
    {random_tensor({6, 4}, 11), random_tensor({2, 1, 3}, 12)});
}

TEST(Gradients, MaskedSelect)
{
  DenseTensor mask({3, 3}, std::vector<double>{1, 0, 1, 0, 1, 1, 0, 0, 1});
  expect_gradients([&](Tape &t, std::vector<Var> const &x) { return weighted_sum(t, masked_select(x[0], mask)); },
                   {random_tensor({3, 3}, 13)});
}

TEST(Gradients, DiffAlongEachAxis)
{
  for (Index axis = 0; axis < 3; ++axis) {
    expect_gradients([axis](Tape &t, std::vector<Var> const &x) { return weighted_sum(t, diff(x[0], axis)); },
                     {random_tensor({3, 4, 5}, 14)});
  }
}

TEST(Gradients, AvgPool)
{
  expect_gradients([](Tape &t, std::vector<Var> const &x) { return weighted_sum(t, avg_pool(x[0], 2)); },
                   {random_tensor({4, 6, 2}, 15)});
}

TEST(Gradients, ModeProductBothOperands)
{
  for (Index k = 0; k < 3; ++k) {
    Shape shape{3, 4, 2};
    expect_gradients(
      [k](Tape &t, std::vector<Var> const &x) { return weighted_sum(t, mode_product(x[0], x[1], k)); },
      {random_tensor(shape, 16), random_tensor({5, shape[k]}, 17)});
  }
}

TEST(Gradients, TraceChain)
{
  expect_gradients(
    [](Tape &t, std::vector<Var> const &x) { return weighted_sum(t, trace_chain(x)); },
    {random_tensor({4, 2, 3}, 18), random_tensor({4, 3, 1}, 19), random_tensor({4, 1, 2}, 20)});
}

struct TrCase {
  Shape dims;
  std::vector<Index> ranks;
};

class TrContractGradient : public ::testing::TestWithParam<TrCase> {};

TEST_P(TrContractGradient, MatchesFiniteDifferences)
{
  auto const &[dims, ranks] = GetParam();
  Index const d = static_cast<Index>(dims.size());
  std::vector<DenseTensor> cores;
  for (Index k = 0; k < d; ++k) {
    cores.push_back(random_tensor({ranks[k], dims[k], ranks[(k + 1) % d]}, 30 + static_cast<std::uint64_t>(k)));
  }
  expect_gradients([](Tape &t, std::vector<Var> const &x) { return weighted_sum(t, tr_contract(x)); }, cores);
}

// Shapes with one long mode and short ones route the per-core gradient through
// both environment strategies.
INSTANTIATE_TEST_SUITE_P(Shapes, TrContractGradient,
                         ::testing::Values(TrCase{{2, 2, 2}, {2, 2, 2}}, TrCase{{5}, {3}}, TrCase{{3, 4}, {2, 3}},
                                           TrCase{{8, 8, 2}, {2, 2, 2}}, TrCase{{2, 3, 9}, {3, 1, 2}},
                                           TrCase{{3, 2, 4, 2}, {1, 3, 2, 3}}, TrCase{{6, 1, 5, 3}, {2, 2, 3, 1}}));

TEST(Gradients, TrContractMatchesPlainContraction)
{
  Tape t;
  std::vector<DenseTensor> cores{random_tensor({2, 3, 3}, 40), random_tensor({3, 4, 2}, 41),
                                 random_tensor({2, 2, 2}, 42)};
  std::vector<Var> vars;
  for (auto const &c : cores) { vars.push_back(t.leaf(c)); }
  EXPECT_EQ(tr_contract(vars).value(), reptrfd::tr_contract(TRCores(cores)));
}

} // namespace
} // namespace reptrfd::ad
