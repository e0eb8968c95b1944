#include "reptrfd/errors.hpp"
#include "reptrfd/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

namespace reptrfd {
namespace {

DenseTensor random_tensor(Shape shape, std::mt19937_64 &rng)
{
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  DenseTensor x(std::move(shape));
  for (double &v : x.data()) { v = u(rng); }
  return x;
}

TRCores random_cores(Shape const &dims, std::vector<Index> const &ranks, std::mt19937_64 &rng)
{
  std::vector<DenseTensor> cores;
  Index const d = static_cast<Index>(dims.size());
  for (Index k = 0; k < d; ++k) {
    cores.push_back(random_tensor({ranks[k], dims[k], ranks[(k + 1) % d]}, rng));
  }
  return TRCores(std::move(cores));
}

// Sum over every rank-index tuple of the product of core entries.
double brute_force_entry(TRCores const &cores, std::vector<Index> const &v)
{
  Index const d = cores.order();
  auto const ranks = cores.ranks();
  std::vector<Index> t(static_cast<std::size_t>(d), 0);
  double total = 0.0;
  while (true) {
    double p = 1.0;
    for (Index k = 0; k < d; ++k) {
      Index const a = t[k];
      Index const b = t[(k + 1) % d];
      Index const idx[] = {a, v[k], b};
      p *= cores.core(k).at(idx);
    }
    total += p;
    Index k = 0;
    while (k < d && ++t[k] == ranks[k]) { t[k++] = 0; }
    if (k == d) { break; }
  }
  return total;
}

std::vector<Index> unravel(Index flat, Shape const &shape)
{
  std::vector<Index> v(shape.size());
  for (Index k = static_cast<Index>(shape.size()) - 1; k >= 0; --k) {
    v[k] = flat % shape[k];
    flat /= shape[k];
  }
  return v;
}

TEST(DenseTensor, RejectsMismatchedData)
{
  EXPECT_THROW(DenseTensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(DenseTensor({2, 0}), ShapeError);
}

TEST(DenseTensor, RowMajorOffsets)
{
  DenseTensor x({2, 3, 4});
  Index const idx[] = {1, 2, 3};
  EXPECT_EQ(x.offset(idx), 23);
  Index const bad[] = {2, 0, 0};
  EXPECT_THROW(x.at(bad), RangeError);
}

TEST(TRCores, RejectsBrokenRing)
{
  std::vector<DenseTensor> cores{DenseTensor({2, 3, 3}), DenseTensor({3, 3, 4})};
  EXPECT_THROW(TRCores{cores}, ShapeError);
}

TEST(TrEntry, RankOneIsProductOfScalars)
{
  std::mt19937_64 rng(3);
  auto const cores = random_cores({3, 4, 2}, {1, 1, 1}, rng);
  Index const v[] = {2, 1, 0};
  double expected = 1.0;
  for (Index k = 0; k < 3; ++k) {
    Index const idx[] = {0, v[k], 0};
    expected *= cores.core(k).at(idx);
  }
  EXPECT_NEAR(tr_entry(cores, v), expected, 1e-15);
}

TEST(TrEntry, AllOnesRankTwoGivesEight)
{
  std::vector<DenseTensor> c(3, DenseTensor({2, 3, 2}, 1.0));
  TRCores const cores(c);
  Index const v[] = {0, 2, 1};
  EXPECT_DOUBLE_EQ(tr_entry(cores, v), 8.0);
}

TEST(TrEntry, MatchesRankTupleSum)
{
  std::mt19937_64 rng(0);
  auto const cores = random_cores({3, 3, 3}, {2, 2, 2}, rng);
  for (Index f = 0; f < 27; ++f) {
    auto const v = unravel(f, {3, 3, 3});
    EXPECT_NEAR(tr_entry(cores, v), brute_force_entry(cores, v), 1e-12);
  }
}

TEST(TrEntry, OutOfBoundsIndexThrows)
{
  std::mt19937_64 rng(0);
  auto const cores = random_cores({2, 2}, {2, 2}, rng);
  Index const v[] = {0, 2};
  EXPECT_THROW(tr_entry(cores, v), RangeError);
  Index const short_v[] = {0};
  EXPECT_THROW(tr_entry(cores, short_v), ShapeError);
}

TEST(TrContract, SeparableRankOne)
{
  std::vector<DenseTensor> c;
  for (Index n : {3, 4, 2}) {
    DenseTensor g({1, n, 1});
    for (Index v = 0; v < n; ++v) { g[v] = static_cast<double>(v + 1); }
    c.push_back(g);
  }
  auto const x = tr_contract(TRCores(c));
  ASSERT_EQ(x.shape(), (Shape{3, 4, 2}));
  for (Index f = 0; f < x.size(); ++f) {
    auto const v = unravel(f, x.shape());
    EXPECT_DOUBLE_EQ(x[f], static_cast<double>((v[0] + 1) * (v[1] + 1) * (v[2] + 1)));
  }
}

TEST(TrContract, MatchesBruteForceOnSmallInstance)
{
  std::mt19937_64 rng(0);
  auto const cores = random_cores({2, 2, 2}, {2, 2, 2}, rng);
  auto const x = tr_contract(cores);
  for (Index f = 0; f < 8; ++f) { EXPECT_NEAR(x[f], brute_force_entry(cores, unravel(f, x.shape())), 1e-12); }
}

TEST(TrContract, MatchesBruteForceOnRandomShapes)
{
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<Index> order(1, 4), rank(1, 3), dim(1, 4);
  for (int trial = 0; trial < 40; ++trial) {
    Index const d = order(rng);
    Shape dims;
    std::vector<Index> ranks;
    for (Index k = 0; k < d; ++k) {
      dims.push_back(dim(rng));
      ranks.push_back(rank(rng));
    }
    auto const cores = random_cores(dims, ranks, rng);
    auto const x = tr_contract(cores);
    ASSERT_EQ(x.shape(), dims);
    for (Index f = 0; f < x.size(); ++f) {
      EXPECT_NEAR(x[f], brute_force_entry(cores, unravel(f, dims)), 1e-10);
    }
  }
}

TEST(TrContract, SingleCoreIsSliceTrace)
{
  std::mt19937_64 rng(5);
  auto const cores = random_cores({4}, {3}, rng);
  auto const x = tr_contract(cores);
  for (Index v = 0; v < 4; ++v) { EXPECT_NEAR(x[v], cores.slice(0, v).trace(), 1e-14); }
}

TEST(ChainContract, ShapeAndEntries)
{
  std::mt19937_64 rng(9);
  std::vector<DenseTensor> c{random_tensor({2, 3, 4}, rng), random_tensor({4, 2, 5}, rng)};
  auto const out = chain_contract(c);
  ASSERT_EQ(out.shape(), (Shape{2, 6, 5}));
  for (Index a = 0; a < 2; ++a) {
    for (Index i = 0; i < 3; ++i) {
      for (Index j = 0; j < 2; ++j) {
        for (Index b = 0; b < 5; ++b) {
          double s = 0.0;
          for (Index m = 0; m < 4; ++m) {
            Index const i0[] = {a, i, m};
            Index const i1[] = {m, j, b};
            s += c[0].at(i0) * c[1].at(i1);
          }
          Index const o[] = {a, i * 2 + j, b};
          EXPECT_NEAR(out.at(o), s, 1e-14);
        }
      }
    }
  }
}

TEST(Permute, MovesAxes)
{
  std::mt19937_64 rng(1);
  auto const x = random_tensor({2, 3, 4}, rng);
  Index const perm[] = {2, 0, 1};
  auto const y = permute(x, perm);
  ASSERT_EQ(y.shape(), (Shape{4, 2, 3}));
  for (Index a = 0; a < 2; ++a) {
    for (Index b = 0; b < 3; ++b) {
      for (Index c = 0; c < 4; ++c) {
        Index const ix[] = {a, b, c};
        Index const iy[] = {c, a, b};
        EXPECT_EQ(x.at(ix), y.at(iy));
      }
    }
  }
}

TEST(ModeProduct, IdentityIsNoOp)
{
  std::mt19937_64 rng(2);
  auto const x = random_tensor({3, 4, 5}, rng);
  for (Index k = 0; k < 3; ++k) {
    Matrix const eye = Matrix::Identity(x.dim(k), x.dim(k));
    EXPECT_EQ(mode_k_product(x, eye, k), x);
  }
}

TEST(ModeProduct, FirstModeIsMatrixProduct)
{
  std::mt19937_64 rng(3);
  auto const x = random_tensor({2, 3}, rng);
  Matrix m(4, 2);
  m << 1, 2, 3, 4, 5, 6, 7, 8;
  auto const y = mode_k_product(x, m, 0);
  ASSERT_EQ(y.shape(), (Shape{4, 3}));
  Matrix const expected = m * x.matrix(2, 3);
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 3; ++j) { EXPECT_NEAR(y[i * 3 + j], expected(i, j), 1e-14); }
  }
}

TEST(ModeProduct, MatchesUnfoldingOracle)
{
  std::mt19937_64 rng(4);
  auto const x = random_tensor({3, 4, 5}, rng);
  Matrix m = Matrix::Random(6, 4);
  auto const y = mode_k_product(x, m, 1);
  ASSERT_EQ(y.shape(), (Shape{3, 6, 5}));
  // Mode-1 unfolding: rows j, columns (i, l).
  Matrix unfold(4, 15);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 4; ++j) {
      for (Index l = 0; l < 5; ++l) { unfold(j, i * 5 + l) = x[(i * 4 + j) * 5 + l]; }
    }
  }
  Matrix const folded = m * unfold;
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 6; ++j) {
      for (Index l = 0; l < 5; ++l) { EXPECT_NEAR(y[(i * 6 + j) * 5 + l], folded(j, i * 5 + l), 1e-13); }
    }
  }
}

TEST(ModeProduct, DimensionMismatchThrows)
{
  DenseTensor const x({2, 3});
  EXPECT_THROW(mode_k_product(x, Matrix::Zero(2, 2), 1), ShapeError);
  EXPECT_THROW(mode_k_product(x, Matrix::Zero(2, 2), 2), RangeError);
}

TEST(ModeDft, ConstantHasOnlyDc)
{
  DenseTensor const x({3, 8}, -0.75);
  auto const f = mode_k_dft(x, 1);
  for (Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(std::abs(f[i * 8]), 8 * 0.75, 1e-12);
    for (Index w = 1; w < 8; ++w) { EXPECT_LE(std::abs(f[i * 8 + w]), 1e-12); }
  }
}

TEST(ModeDft, CosineHasTwoBins)
{
  Index const n = 16;
  Index const freq = 3;
  DenseTensor x({n});
  for (Index v = 0; v < n; ++v) { x[v] = std::cos(2 * std::numbers::pi * freq * v / n); }
  auto const f = mode_k_dft(x, 0);
  for (Index w = 0; w < n; ++w) {
    if (w == freq || w == n - freq) {
      EXPECT_NEAR(std::abs(f[w]), n / 2.0, 1e-12);
    } else {
      EXPECT_LE(std::abs(f[w]), 1e-12);
    }
  }
}

TEST(ModeDft, MatchesNaiveDft)
{
  std::mt19937_64 rng(6);
  auto const x = random_tensor({4, 8, 3}, rng);
  auto const f = mode_k_dft(x, 1);
  for (Index a = 0; a < 4; ++a) {
    for (Index w = 0; w < 8; ++w) {
      for (Index c = 0; c < 3; ++c) {
        Cx s{};
        for (Index v = 0; v < 8; ++v) {
          s += x[(a * 8 + v) * 3 + c] * std::polar(1.0, -2 * std::numbers::pi * w * v / 8.0);
        }
        EXPECT_LE(std::abs(f[(a * 8 + w) * 3 + c] - s), 1e-10);
      }
    }
  }
}

TEST(ModeDft, InverseRoundTripAndParseval)
{
  std::mt19937_64 rng(7);
  auto const x = random_tensor({5, 6, 7}, rng);
  for (Index k = 0; k < 3; ++k) {
    auto const f = mode_k_dft(x, k);
    double energy = 0.0;
    for (Cx const &c : f.data()) { energy += std::norm(c); }
    EXPECT_NEAR(energy / static_cast<double>(x.dim(k)), x.frobenius_norm() * x.frobenius_norm(), 1e-10);
    auto const back = mode_k_idft(f, k);
    EXPECT_LE(back.max_imag(), 1e-12);
    auto const r = back.real();
    for (Index i = 0; i < x.size(); ++i) { EXPECT_NEAR(r[i], x[i], 1e-12); }
  }
}

TEST(FrequencyMagnitude, Folds)
{
  EXPECT_EQ(frequency_magnitude(0, 8), 0);
  EXPECT_EQ(frequency_magnitude(3, 8), 3);
  EXPECT_EQ(frequency_magnitude(4, 8), 4);
  EXPECT_EQ(frequency_magnitude(7, 8), 1);
}

TEST(LowpassCores, NyquistCutoffIsNoOp)
{
  std::mt19937_64 rng(8);
  auto const cores = random_cores({4, 5, 6}, {2, 3, 2}, rng);
  std::vector<Index> const cutoffs{2, 2, 3};
  auto const out = lowpass_cores(cores, cutoffs);
  for (Index k = 0; k < 3; ++k) {
    for (Index i = 0; i < out.core(k).size(); ++i) { EXPECT_NEAR(out.core(k)[i], cores.core(k)[i], 1e-10); }
  }
}

TEST(LowpassCores, ZeroCutoffKeepsMean)
{
  std::mt19937_64 rng(9);
  auto const cores = random_cores({4, 3}, {2, 3}, rng);
  std::vector<Index> const cutoffs{0, 0};
  auto const out = lowpass_cores(cores, cutoffs);
  for (Index k = 0; k < 2; ++k) {
    auto const &g = cores.core(k);
    auto const &h = out.core(k);
    for (Index a = 0; a < g.dim(0); ++a) {
      for (Index b = 0; b < g.dim(2); ++b) {
        double mean = 0.0;
        for (Index v = 0; v < g.dim(1); ++v) {
          Index const idx[] = {a, v, b};
          mean += g.at(idx);
        }
        mean /= static_cast<double>(g.dim(1));
        for (Index v = 0; v < g.dim(1); ++v) {
          Index const idx[] = {a, v, b};
          EXPECT_NEAR(h.at(idx), mean, 1e-12);
        }
      }
    }
  }
}

TEST(LowpassCores, CutoffOutOfRangeThrows)
{
  std::mt19937_64 rng(10);
  auto const cores = random_cores({4, 4}, {2, 2}, rng);
  std::vector<Index> const too_high{3, 1};
  std::vector<Index> const negative{-1, 1};
  std::vector<Index> const short_list{1};
  EXPECT_THROW(lowpass_cores(cores, too_high), RangeError);
  EXPECT_THROW(lowpass_cores(cores, negative), RangeError);
  EXPECT_THROW(lowpass_cores(cores, short_list), ShapeError);
}

} // namespace
} // namespace reptrfd
