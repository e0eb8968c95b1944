#pragma once

#include "reptrfd/tensor.hpp"

namespace reptrfd {

/// 10 log10(peak^2 / MSE); +infinity when the inputs are identical.
double psnr(DenseTensor const &x, DenseTensor const &ref, double peak = 1.0);

/// Mean SSIM over mode-3 slices (a single slice for matrices). Inputs are
/// clipped to [0, 1]; an 11x11 Gaussian window (sigma 1.5) is applied at
/// every fully contained position.
double ssim(DenseTensor const &x, DenseTensor const &ref);

/// ||x - ref||_F / ||ref||_F.
double nrmse(DenseTensor const &x, DenseTensor const &ref);

} // namespace reptrfd
