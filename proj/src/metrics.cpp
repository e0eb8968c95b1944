#include "reptrfd/metrics.hpp"
#include "reptrfd/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace reptrfd {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 0.01);
constexpr double kC2 = (0.03 * 0.03);

void require_same(DenseTensor const &x, DenseTensor const &ref, char const *what)
{
  if (x.shape() != ref.shape()) {
    throw ShapeError(std::string(what) + ": " + shape_string(x.shape()) + " vs " + shape_string(ref.shape()));
  }
}

std::array<double, kWindow> gaussian_window()
{
  std::array<double, kWindow> w{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    double const t = i - kWindow / 2;
    w[static_cast<std::size_t>(i)] = std::exp(-t * t / (2.0 * kSigma * kSigma));
    total += w[static_cast<std::size_t>(i)];
  }
  for (auto &v : w) { v /= total; }
  return w;
}

// Separable valid-mode filtering of an (h x w) image.
Matrix filter_valid(Matrix const &img, std::array<double, kWindow> const &g)
{
  Index const h = img.rows() - kWindow + 1;
  Index const w = img.cols() - kWindow + 1;
  Matrix rows = Matrix::Zero(h, img.cols());
  for (Index i = 0; i < h; ++i) {
    for (int k = 0; k < kWindow; ++k) { rows.row(i) += g[static_cast<std::size_t>(k)] * img.row(i + k); }
  }
  Matrix out = Matrix::Zero(h, w);
  for (Index j = 0; j < w; ++j) {
    for (int k = 0; k < kWindow; ++k) { out.col(j) += g[static_cast<std::size_t>(k)] * rows.col(j + k); }
  }
  return out;
}

double ssim_slice(Matrix const &a, Matrix const &b, std::array<double, kWindow> const &g)
{
  Matrix const mu_a = filter_valid(a, g);
  Matrix const mu_b = filter_valid(b, g);
  Matrix const saa = filter_valid(a.cwiseProduct(a), g) - mu_a.cwiseProduct(mu_a);
  Matrix const sbb = filter_valid(b.cwiseProduct(b), g) - mu_b.cwiseProduct(mu_b);
  Matrix const sab = filter_valid(a.cwiseProduct(b), g) - mu_a.cwiseProduct(mu_b);
  auto const num = (2.0 * mu_a.cwiseProduct(mu_b).array() + kC1) * (2.0 * sab.array() + kC2);
  auto const den = (mu_a.array().square() + mu_b.array().square() + kC1) * (saa.array() + sbb.array() + kC2);
  return (num / den).mean();
}

} // namespace

double psnr(DenseTensor const &x, DenseTensor const &ref, double peak)
{
  require_same(x, ref, "psnr");
  if (!(peak > 0.0)) { throw RangeError("psnr: peak must be positive"); }
  double sq = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    double const d = x[i] - ref[i];
    sq += d * d;
  }
  if (sq == 0.0) { return std::numeric_limits<double>::infinity(); }
  double const mse = sq / static_cast<double>(x.size());
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(DenseTensor const &x, DenseTensor const &ref)
{
  require_same(x, ref, "ssim");
  if (x.order() != 2 && x.order() != 3) {
    throw ShapeError("ssim expects a matrix or a third-order tensor, got " + shape_string(x.shape()));
  }
  Index const h = x.dim(0);
  Index const w = x.dim(1);
  Index const c = x.order() == 3 ? x.dim(2) : 1;
  if (h < kWindow || w < kWindow) {
    throw ShapeError("ssim needs spatial size >= 11x11, got " + shape_string(x.shape()));
  }
  auto const g = gaussian_window();
  double total = 0.0;
  Matrix a(h, w), b(h, w);
  for (Index s = 0; s < c; ++s) {
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        Index const off = (i * w + j) * c + s;
        a(i, j) = std::clamp(x[off], 0.0, 1.0);
        b(i, j) = std::clamp(ref[off], 0.0, 1.0);
      }
    }
    total += ssim_slice(a, b, g);
  }
  return total / static_cast<double>(c);
}

double nrmse(DenseTensor const &x, DenseTensor const &ref)
{
  require_same(x, ref, "nrmse");
  double num = 0.0;
  double den = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    double const d = x[i] - ref[i];
    num += d * d;
    den += ref[i] * ref[i];
  }
  if (den == 0.0) { throw NumericError("nrmse: reference has zero norm"); }
  return std::sqrt(num / den);
}

} // namespace reptrfd
