#pragma once

#include "reptrfd/model.hpp"
#include "reptrfd/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace reptrfd {

// ---- spectral decay of a TR reconstruction ----

struct SpectralBin {
  Index frequency = 0;
  double magnitude = 0.0; // max |F_k[X]| over all other indices
  bool out_of_band = false;
  bool satisfied = true;  // magnitude <= c * epsilon (+ roundoff tolerance)
};

struct SpectralMode {
  Index mode = 0;
  Index cutoff = 0;
  double epsilon = 0.0;   // max out-of-band |F[G(k)]| over the core's middle mode
  double c = 0.0;         // max_{other indices} sum |M_{not k}|
  double tolerance = 0.0; // floating-point slack added to c * epsilon
  double margin = 0.0;    // min over out-of-band bins of (bound - magnitude)
  std::vector<SpectralBin> bins;
};

struct SpectralReport {
  std::vector<SpectralMode> modes;

  Index violations() const;
  double max_epsilon() const;
};

/// Largest number of index combinations enumerated when computing c_k.
inline constexpr Index kMaxSpectralCombinations = 1'000'000;

/// Measures epsilon_k and c_k and checks every out-of-band bin of the
/// reconstruction against c_k * epsilon_k. Throws RangeError when a mode
/// would need more than kMaxSpectralCombinations combinations.
SpectralReport spectral_bound_check(TRCores const &cores, std::span<Index const> cutoffs);

/// Sum over bins with frequency magnitude > cutoff of |F_k[x]|^2.
double out_of_band_energy(DenseTensor const &x, Index mode, Index cutoff);

struct LowpassEnergyReport {
  Index mode = 0;
  Index cutoff = 0;
  double energy_before = 0.0;
  double energy_after = 0.0;
  double orders_of_magnitude = 0.0; // log10(before / after); +inf when after == 0
};

/// Low-passes only `mode`'s core and compares out-of-band energy of the
/// reconstruction along that mode before and after.
LowpassEnergyReport lowpass_energy_experiment(TRCores const &cores, Index mode, Index cutoff);

// ---- gradient response to high frequencies ----

struct GradientRatioConfig {
  Shape dims{16, 16, 3};
  Index rank = 3;
  Index beta = 10;
  Index mode = 0;
  Index omega_low = 1;
  Index omega_high = 6;
  std::uint64_t seed = 0;
  BasisScheme scheme = BasisScheme::Xavier;
  double basis_scale = 0.0;
  /// Replaces the drawn bases, one (r x R) matrix per mode.
  std::optional<std::vector<DenseTensor>> bases;
};

struct RatioSummary {
  Index count = 0;    // ratios kept
  Index excluded = 0; // denominators below the threshold
  double max = 0.0;
  double mean = 0.0;
  std::vector<double> ratios;
};

struct GradientRatioReport {
  Index omega_low = 0;
  Index omega_high = 0;
  RatioSummary g_space;
  RatioSummary c_space;
  bool inconclusive = false;      // more than half the ratios excluded
  bool degenerate = false;        // every C-space gradient is zero
  bool c_space_amplifies = false; // mean C-space ratio >= mean G-space ratio
};

inline constexpr double kRatioDenominatorFloor = 1e-15;

GradientRatioReport gradient_ratio_experiment(GradientRatioConfig const &config);

// ---- variance through the fixed basis ----

struct VarianceReport {
  Index r = 0;
  Index R = 0;
  BasisScheme scheme = BasisScheme::Xavier;
  double bound = 0.0;
  Index trials = 0;
  double forward_measured = 0.0;
  double forward_predicted = 0.0;
  double backward_measured = 0.0;
  double backward_predicted = 0.0;

  bool forward_within(double rel) const;
  bool backward_within(double rel) const;
};

/// Monte-Carlo Var(G)/Var(C) and Var(dL/dC)/Var(dL/dG) for G = C x_3 B.
VarianceReport variance_preservation_check(Index r, Index R, BasisScheme scheme, Index trials, std::uint64_t seed = 0,
                                           double explicit_scale = 0.0);

// ---- Lipschitz bound, checked empirically ----

struct LipschitzCheck {
  LipschitzReport bound;
  Index pairs = 0;
  Index violations = 0;
  double max_ratio = 0.0; // max |g(v) - g(v')| / ||v - v'||
};

/// Samples coordinate pairs uniformly in [-1, 1]^d and compares with delta.
LipschitzCheck lipschitz_check(FactorModel const &model, Index pairs, std::uint64_t seed, double slack = 1e-9);

} // namespace reptrfd
