#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace reptrfd {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Cx = std::complex<double>;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CxMatrix = Eigen::Matrix<Cx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<Matrix const>;

Index shape_product(Shape const &shape);
std::string shape_string(Shape const &shape);

/// d-th order real array, row-major (last index fastest).
class DenseTensor {
public:
  DenseTensor();
  explicit DenseTensor(Shape shape, double fill = 0.0);
  DenseTensor(Shape shape, std::vector<double> data);

  static DenseTensor scalar(double value);
  static DenseTensor from_matrix(Eigen::Ref<Matrix const> const &m);

  Shape const &shape() const { return shape_; }
  Index order() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index k) const { return shape_.at(static_cast<std::size_t>(k)); }
  Index size() const { return static_cast<Index>(data_.size()); }

  std::span<double> data() { return data_; }
  std::span<double const> data() const { return data_; }

  double &operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Zero-based multi-index access with bounds checking.
  double &at(std::span<Index const> index);
  double at(std::span<Index const> index) const;
  Index offset(std::span<Index const> index) const;

  /// Same data, new shape of equal element count.
  DenseTensor reshaped(Shape shape) const;

  /// View as a (rows x cols) row-major matrix; rows*cols must equal size().
  MatrixMap matrix(Index rows, Index cols);
  ConstMatrixMap matrix(Index rows, Index cols) const;

  double max_abs() const;
  double frobenius_norm() const;
  double sum() const;

  bool operator==(DenseTensor const &other) const = default;

private:
  // Aligned so vectorized reductions split the same way on every run.
  using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;
  Shape shape_;
  Buffer data_;
};

/// Complex counterpart of DenseTensor, used for spectra.
class ComplexTensor {
public:
  ComplexTensor() = default;
  explicit ComplexTensor(Shape shape, Cx fill = {});
  static ComplexTensor from_real(DenseTensor const &x);

  Shape const &shape() const { return shape_; }
  Index order() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index k) const { return shape_.at(static_cast<std::size_t>(k)); }
  Index size() const { return static_cast<Index>(data_.size()); }

  std::span<Cx> data() { return data_; }
  std::span<Cx const> data() const { return data_; }
  Cx &operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Cx operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  DenseTensor real() const;
  double max_imag() const;

private:
  Shape shape_;
  std::vector<Cx> data_;
};

/// Ordered third-order cores G(k) of shape (r_k, n_k, r_{k+1}) with r_{d+1} = r_1.
class TRCores {
public:
  explicit TRCores(std::vector<DenseTensor> cores);

  Index order() const { return static_cast<Index>(cores_.size()); }
  DenseTensor const &core(Index k) const { return cores_[static_cast<std::size_t>(k)]; }
  std::vector<DenseTensor> const &cores() const { return cores_; }
  std::vector<Index> ranks() const;
  Shape dims() const;

  /// Slice G(k)[:, v, :] as an (r_k x r_{k+1}) matrix.
  Matrix slice(Index k, Index v) const;

private:
  std::vector<DenseTensor> cores_;
};

/// Reorders axes: result.shape[i] = x.shape[perm[i]].
DenseTensor permute(DenseTensor const &x, std::span<Index const> perm);

/// trace(G1[:,v1,:] G2[:,v2,:] ... Gd[:,vd,:]) with zero-based indices.
double tr_entry(TRCores const &cores, std::span<Index const> index);

/// Full reconstruction X with X[v] = tr_entry(cores, v).
DenseTensor tr_contract(TRCores const &cores);

/// Contracts cores in the given order along their shared bonds without closing
/// the ring. Cores have shape (a, n_i, b); result has shape
/// (r_first, prod n_i, r_last) with the first core's index varying slowest.
DenseTensor chain_contract(std::span<DenseTensor const> cores);

/// result[..., i, ...] = sum_j m(i, j) x[..., j, ...] along mode k (zero-based).
DenseTensor mode_k_product(DenseTensor const &x, Eigen::Ref<Matrix const> const &m, Index k);

/// Unnormalized forward DFT along mode k: X x_k F with F(a,b) = exp(-2 pi i ab / n).
ComplexTensor mode_k_dft(DenseTensor const &x, Index k);
ComplexTensor mode_k_dft(ComplexTensor const &x, Index k);
/// Inverse transform including the 1/n factor.
ComplexTensor mode_k_idft(ComplexTensor const &x, Index k);

/// min(w, n - w): distance of DFT bin w from DC.
Index frequency_magnitude(Index bin, Index n);

/// Zeroes every mode-2 bin of each core whose frequency magnitude exceeds the
/// per-core cutoff and transforms back.
TRCores lowpass_cores(TRCores const &cores, std::span<Index const> cutoffs);

} // namespace reptrfd
