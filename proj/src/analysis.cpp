#include "reptrfd/analysis.hpp"
#include "reptrfd/autodiff.hpp"
#include "reptrfd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace reptrfd {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Product of the slices of every core except k, in ring order k+1, ..., k-1,
// as (r_{k+1}, combos, r_k).
DenseTensor complement_chain(TRCores const &cores, Index k)
{
  Index const d = cores.order();
  std::vector<DenseTensor> rest;
  for (Index j = 1; j < d; ++j) { rest.push_back(cores.core((k + j) % d)); }
  if (rest.empty()) {
    Index const r = cores.core(k).dim(0);
    return DenseTensor::from_matrix(Matrix::Identity(r, r)).reshaped({r, 1, r});
  }
  return chain_contract(rest);
}

double max_abs_bins(ComplexTensor const &f, Index axis, Index bin)
{
  Index pre = 1, post = 1;
  for (Index i = 0; i < axis; ++i) { pre *= f.dim(i); }
  for (Index i = axis + 1; i < f.order(); ++i) { post *= f.dim(i); }
  Index const n = f.dim(axis);
  double m = 0.0;
  for (Index a = 0; a < pre; ++a) {
    for (Index b = 0; b < post; ++b) { m = std::max(m, std::abs(f[(a * n + bin) * post + b])); }
  }
  return m;
}

void check_cutoffs(TRCores const &cores, std::span<Index const> cutoffs)
{
  if (static_cast<Index>(cutoffs.size()) != cores.order()) {
    throw ShapeError("need one cutoff per mode: " + std::to_string(cutoffs.size()) + " for " +
                     std::to_string(cores.order()) + " cores");
  }
  for (std::size_t k = 0; k < cutoffs.size(); ++k) {
    if (cutoffs[k] < 0) { throw RangeError("cutoff for mode " + std::to_string(k) + " is negative"); }
  }
}

} // namespace

Index SpectralReport::violations() const
{
  Index v = 0;
  for (auto const &m : modes) {
    v += std::count_if(m.bins.begin(), m.bins.end(), [](SpectralBin const &b) { return !b.satisfied; });
  }
  return v;
}

double SpectralReport::max_epsilon() const
{
  double e = 0.0;
  for (auto const &m : modes) { e = std::max(e, m.epsilon); }
  return e;
}

SpectralReport spectral_bound_check(TRCores const &cores, std::span<Index const> cutoffs)
{
  check_cutoffs(cores, cutoffs);
  Index const d = cores.order();
  auto const dims = cores.dims();
  for (Index k = 0; k < d; ++k) {
    Index combos = 1;
    for (Index j = 0; j < d; ++j) {
      if (j != k) { combos *= dims[static_cast<std::size_t>(j)]; }
    }
    if (combos > kMaxSpectralCombinations) {
      throw RangeError("spectral_bound_check: mode " + std::to_string(k) + " needs " + std::to_string(combos) +
                       " index combinations (limit " + std::to_string(kMaxSpectralCombinations) +
                       "); shrink the other modes");
    }
  }

  DenseTensor const x = tr_contract(cores);
  double const x_max = x.max_abs();
  SpectralReport report;
  for (Index k = 0; k < d; ++k) {
    Index const n = dims[static_cast<std::size_t>(k)];
    SpectralMode mode;
    mode.mode = k;
    mode.cutoff = cutoffs[static_cast<std::size_t>(k)];

    auto const fg = mode_k_dft(cores.core(k), 1);
    for (Index w = 0; w < n; ++w) {
      if (frequency_magnitude(w, n) > mode.cutoff) { mode.epsilon = std::max(mode.epsilon, max_abs_bins(fg, 1, w)); }
    }

    auto const chain = complement_chain(cores, k);
    Index const rq = chain.dim(0), combos = chain.dim(1), rp = chain.dim(2);
    for (Index m = 0; m < combos; ++m) {
      double s = 0.0;
      for (Index q = 0; q < rq; ++q) {
        for (Index p = 0; p < rp; ++p) { s += std::abs(chain[(q * combos + m) * rp + p]); }
      }
      mode.c = std::max(mode.c, s);
    }

    double const g_max = cores.core(k).max_abs();
    mode.tolerance = 16.0 * kEps * static_cast<double>(n) *
                     (x_max + mode.c * g_max * static_cast<double>(d + 1));
    double const bound = mode.c * mode.epsilon + mode.tolerance;

    auto const fx = mode_k_dft(x, k);
    mode.margin = std::numeric_limits<double>::infinity();
    for (Index w = 0; w < n; ++w) {
      SpectralBin bin;
      bin.frequency = w;
      bin.magnitude = max_abs_bins(fx, k, w);
      bin.out_of_band = frequency_magnitude(w, n) > mode.cutoff;
      if (bin.out_of_band) {
        bin.satisfied = bin.magnitude <= bound;
        mode.margin = std::min(mode.margin, bound - bin.magnitude);
      }
      mode.bins.push_back(bin);
    }
    report.modes.push_back(std::move(mode));
  }
  return report;
}

double out_of_band_energy(DenseTensor const &x, Index mode, Index cutoff)
{
  auto const f = mode_k_dft(x, mode);
  Index pre = 1, post = 1;
  for (Index i = 0; i < mode; ++i) { pre *= f.dim(i); }
  for (Index i = mode + 1; i < f.order(); ++i) { post *= f.dim(i); }
  Index const n = f.dim(mode);
  double e = 0.0;
  for (Index a = 0; a < pre; ++a) {
    for (Index w = 0; w < n; ++w) {
      if (frequency_magnitude(w, n) <= cutoff) { continue; }
      for (Index b = 0; b < post; ++b) { e += std::norm(f[(a * n + w) * post + b]); }
    }
  }
  return e;
}

LowpassEnergyReport lowpass_energy_experiment(TRCores const &cores, Index mode, Index cutoff)
{
  if (mode < 0 || mode >= cores.order()) { throw RangeError("mode " + std::to_string(mode) + " out of range"); }
  auto const dims = cores.dims();
  std::vector<Index> cutoffs(dims.size());
  for (std::size_t k = 0; k < dims.size(); ++k) { cutoffs[k] = dims[k] / 2; }
  cutoffs[static_cast<std::size_t>(mode)] = cutoff;
  auto filtered_all = lowpass_cores(cores, cutoffs);
  auto replaced = cores.cores();
  replaced[static_cast<std::size_t>(mode)] = filtered_all.core(mode);

  LowpassEnergyReport r;
  r.mode = mode;
  r.cutoff = cutoff;
  r.energy_before = out_of_band_energy(tr_contract(cores), mode, cutoff);
  r.energy_after = out_of_band_energy(tr_contract(TRCores(std::move(replaced))), mode, cutoff);
  r.orders_of_magnitude = r.energy_after > 0.0 ? std::log10(r.energy_before / r.energy_after)
                                               : std::numeric_limits<double>::infinity();
  return r;
}

namespace {

// L(omega) = sum over other indices of |F_k[X - T]_omega|^2, T = cos(2 pi omega v_k / n_k).
ad::Var frequency_loss(ad::Var x, Index k, Index omega)
{
  auto &tape = *x.tape();
  Shape const shape = x.shape();
  Index const n = shape[static_cast<std::size_t>(k)];
  Index pre = 1, post = 1;
  for (Index i = 0; i < k; ++i) { pre *= shape[static_cast<std::size_t>(i)]; }
  for (Index i = k + 1; i < static_cast<Index>(shape.size()); ++i) { post *= shape[static_cast<std::size_t>(i)]; }

  DenseTensor target(shape);
  DenseTensor cos_row({1, n}), sin_row({1, n});
  for (Index v = 0; v < n; ++v) {
    double const phase = 2.0 * std::numbers::pi * static_cast<double>(omega * v) / static_cast<double>(n);
    cos_row[v] = std::cos(phase);
    sin_row[v] = -std::sin(phase);
    for (Index a = 0; a < pre; ++a) {
      for (Index b = 0; b < post; ++b) { target[(a * n + v) * post + b] = std::cos(phase); }
    }
  }
  auto err = ad::sub(x, tape.constant(target));
  auto re = ad::mode_product(err, tape.constant(cos_row), k);
  auto im = ad::mode_product(err, tape.constant(sin_row), k);
  return ad::add(ad::sum(ad::square(re)), ad::sum(ad::square(im)));
}

std::vector<DenseTensor> leaf_grads(ad::Tape &tape, std::vector<ad::Var> const &leaves, ad::Var loss)
{
  tape.zero_grad();
  tape.backward(loss);
  std::vector<DenseTensor> out;
  for (auto const &l : leaves) { out.push_back(l.grad()); }
  return out;
}

RatioSummary summarize(std::vector<DenseTensor> const &high, std::vector<DenseTensor> const &low)
{
  RatioSummary s;
  double total = 0.0;
  for (std::size_t i = 0; i < high.size(); ++i) {
    for (Index j = 0; j < high[i].size(); ++j) {
      double const den = std::abs(low[i][j]);
      if (den < kRatioDenominatorFloor) {
        ++s.excluded;
        continue;
      }
      double const r = std::abs(high[i][j]) / den;
      s.ratios.push_back(r);
      s.max = std::max(s.max, r);
      total += r;
    }
  }
  s.count = static_cast<Index>(s.ratios.size());
  s.mean = s.count > 0 ? total / static_cast<double>(s.count) : 0.0;
  return s;
}

bool all_zero(std::vector<DenseTensor> const &gs)
{
  return std::all_of(gs.begin(), gs.end(), [](DenseTensor const &g) { return g.max_abs() == 0.0; });
}

} // namespace

GradientRatioReport gradient_ratio_experiment(GradientRatioConfig const &cfg)
{
  Index const d = static_cast<Index>(cfg.dims.size());
  if (d != 3) { throw ConfigError("gradient ratio experiment expects three modes"); }
  for (Index n : cfg.dims) {
    if (n < 2 || n > 32) { throw ConfigError("gradient ratio experiment expects dims in [2, 32]"); }
  }
  if (cfg.rank < 1 || cfg.beta < 1) { throw ConfigError("rank and beta must be >= 1"); }
  if (cfg.mode < 0 || cfg.mode >= d) { throw ConfigError("probe mode out of range"); }
  Index const n = cfg.dims[static_cast<std::size_t>(cfg.mode)];
  if (cfg.omega_low < 0 || cfg.omega_low >= cfg.omega_high || cfg.omega_high > n / 2) {
    throw ConfigError("need 0 <= omega_low < omega_high <= n/2 on the probe mode");
  }
  Index const r = cfg.rank;
  Index const R = cfg.beta * r;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  std::vector<DenseTensor> latents, bases;
  for (Index k = 0; k < d; ++k) {
    DenseTensor c({r, cfg.dims[static_cast<std::size_t>(k)], R});
    for (double &v : c.data()) { v = normal(rng); }
    latents.push_back(std::move(c));
  }
  for (Index k = 0; k < d; ++k) {
    if (cfg.bases) {
      auto const &b = cfg.bases->at(static_cast<std::size_t>(k));
      if (b.shape() != Shape{r, R}) {
        throw ShapeError("basis " + std::to_string(k) + " must be " + shape_string({r, R}) + ", got " +
                         shape_string(b.shape()));
      }
      bases.push_back(b);
    } else {
      bases.push_back(init_basis(r, R, cfg.scheme, rng, cfg.basis_scale).matrix);
    }
  }

  auto c_space = [&](Index omega, std::vector<DenseTensor> *factors) {
    ad::Tape tape;
    std::vector<ad::Var> leaves, gs;
    for (Index k = 0; k < d; ++k) {
      leaves.push_back(tape.leaf(latents[static_cast<std::size_t>(k)]));
      gs.push_back(ad::mode_product(leaves.back(), tape.constant(bases[static_cast<std::size_t>(k)]), 2));
    }
    if (factors) {
      factors->clear();
      for (auto const &g : gs) { factors->push_back(g.value()); }
    }
    auto loss = frequency_loss(ad::tr_contract(gs), cfg.mode, omega);
    return leaf_grads(tape, leaves, loss);
  };
  std::vector<DenseTensor> factors;
  auto const c_low = c_space(cfg.omega_low, &factors);
  auto const c_high = c_space(cfg.omega_high, nullptr);

  auto g_space = [&](Index omega) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (auto const &g : factors) { leaves.push_back(tape.leaf(g)); }
    auto loss = frequency_loss(ad::tr_contract(leaves), cfg.mode, omega);
    return leaf_grads(tape, leaves, loss);
  };
  auto const g_low = g_space(cfg.omega_low);
  auto const g_high = g_space(cfg.omega_high);

  GradientRatioReport rep;
  rep.omega_low = cfg.omega_low;
  rep.omega_high = cfg.omega_high;
  rep.g_space = summarize(g_high, g_low);
  rep.c_space = summarize(c_high, c_low);
  rep.degenerate = all_zero(c_low) && all_zero(c_high);
  auto const mostly_excluded = [](RatioSummary const &s) { return 2 * s.excluded > s.count + s.excluded; };
  rep.inconclusive = rep.degenerate || mostly_excluded(rep.g_space) || mostly_excluded(rep.c_space);
  rep.c_space_amplifies = !rep.inconclusive && rep.c_space.mean >= rep.g_space.mean;
  return rep;
}

bool VarianceReport::forward_within(double rel) const
{
  return std::abs(forward_measured / forward_predicted - 1.0) <= rel;
}

bool VarianceReport::backward_within(double rel) const
{
  return std::abs(backward_measured / backward_predicted - 1.0) <= rel;
}

namespace {

struct Moments {
  double n = 0.0, sum = 0.0, sq = 0.0;
  void add(double v)
  {
    n += 1.0;
    sum += v;
    sq += v * v;
  }
  double variance() const { return (sq - sum * sum / n) / (n - 1.0); }
};

} // namespace

VarianceReport variance_preservation_check(Index r, Index R, BasisScheme scheme, Index trials, std::uint64_t seed,
                                           double explicit_scale)
{
  if (trials < 2) { throw ConfigError("variance check needs at least two trials"); }
  VarianceReport rep;
  rep.r = r;
  rep.R = R;
  rep.scheme = scheme;
  rep.trials = trials;
  rep.bound = basis_bound(r, R, scheme, explicit_scale);
  double const var_b = rep.bound * rep.bound / 3.0;
  rep.forward_predicted = static_cast<double>(R) * var_b;
  rep.backward_predicted = static_cast<double>(r) * var_b;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(-rep.bound, rep.bound);
  Moments c_in, g_out, g_in, c_out;
  for (Index t = 0; t < trials; ++t) {
    // Forward: one entry of G from a fresh row of C and column of B^T.
    double g = 0.0;
    for (Index s = 0; s < R; ++s) {
      double const c = normal(rng);
      c_in.add(c);
      g += c * uniform(rng);
    }
    g_out.add(g);
    // Backward: dL/dC for one latent column from fresh upstream gradients.
    double dc = 0.0;
    for (Index q = 0; q < r; ++q) {
      double const u = normal(rng);
      g_in.add(u);
      dc += u * uniform(rng);
    }
    c_out.add(dc);
  }
  rep.forward_measured = g_out.variance() / c_in.variance();
  rep.backward_measured = c_out.variance() / g_in.variance();
  return rep;
}

LipschitzCheck lipschitz_check(FactorModel const &model, Index pairs, std::uint64_t seed, double slack)
{
  LipschitzCheck out;
  out.bound = lipschitz_bound(model);
  out.pairs = pairs;
  Index const d = model.order();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  DenseTensor coords({2 * pairs, d});
  for (double &v : coords.data()) { v = u(rng); }
  auto const g = model.eval_points(coords);
  for (Index i = 0; i < pairs; ++i) {
    double dist = 0.0;
    for (Index k = 0; k < d; ++k) {
      double const diff = coords[(2 * i) * d + k] - coords[(2 * i + 1) * d + k];
      dist += diff * diff;
    }
    dist = std::sqrt(dist);
    double const change = std::abs(g[2 * i] - g[2 * i + 1]);
    if (change > out.bound.delta * dist + slack) { ++out.violations; }
    if (dist > 0.0) { out.max_ratio = std::max(out.max_ratio, change / dist); }
  }
  return out;
}

} // namespace reptrfd
