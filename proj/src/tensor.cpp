#include "reptrfd/tensor.hpp"
#include "reptrfd/errors.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>

namespace reptrfd {

namespace {

void check_shape(Shape const &shape)
{
  if (shape.empty()) { throw ShapeError("tensor order must be at least 1"); }
  for (auto n : shape) {
    if (n < 1) { throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape)); }
  }
}

// (pre, n, post) split of a shape around mode k.
struct ModeSplit {
  Index pre = 1;
  Index n = 1;
  Index post = 1;
};

ModeSplit split_at(Shape const &shape, Index k)
{
  if (k < 0 || k >= static_cast<Index>(shape.size())) {
    throw RangeError("mode index " + std::to_string(k) + " out of range for shape " + shape_string(shape));
  }
  ModeSplit s;
  for (Index i = 0; i < k; ++i) { s.pre *= shape[static_cast<std::size_t>(i)]; }
  s.n = shape[static_cast<std::size_t>(k)];
  for (auto i = static_cast<std::size_t>(k) + 1; i < shape.size(); ++i) { s.post *= shape[i]; }
  return s;
}

// FFTW planning is not thread-safe; execution with new-array execute is.
std::mutex &fftw_planner_mutex()
{
  static std::mutex m;
  return m;
}

ComplexTensor dft_along(ComplexTensor const &x, Index k, int sign)
{
  auto const s = split_at(x.shape(), k);
  ComplexTensor out(x.shape());
  if (s.n == 1) {
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
    return out;
  }
  std::vector<Cx> in(x.data().begin(), x.data().end());
  auto *in_ptr = reinterpret_cast<fftw_complex *>(in.data());
  auto *out_ptr = reinterpret_cast<fftw_complex *>(out.data().data());
  int n = static_cast<int>(s.n);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    // One plan covers the `post` interleaved transforms of a single pre-block.
    plan = fftw_plan_many_dft(1, &n, static_cast<int>(s.post), in_ptr, nullptr, static_cast<int>(s.post), 1, out_ptr,
                              nullptr, static_cast<int>(s.post), 1, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  Index const block = s.n * s.post;
  for (Index p = 0; p < s.pre; ++p) {
    fftw_execute_dft(plan, in_ptr + p * block, out_ptr + p * block);
  }
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

} // namespace

Index shape_product(Shape const &shape)
{
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(Shape const &shape)
{
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) { os << (i ? "," : "") << shape[i]; }
  os << ')';
  return os.str();
}

DenseTensor::DenseTensor()
  : shape_{1}
  , data_(1, 0.0)
{
}

DenseTensor::DenseTensor(Shape shape, double fill)
  : shape_(std::move(shape))
{
  check_shape(shape_);
  data_.assign(static_cast<std::size_t>(shape_product(shape_)), fill);
}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data)
  : shape_(std::move(shape))
  , data_(data.begin(), data.end())
{
  check_shape(shape_);
  if (static_cast<Index>(data_.size()) != shape_product(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
  }
}

DenseTensor DenseTensor::scalar(double value) { return DenseTensor({1}, std::vector<double>{value}); }

DenseTensor DenseTensor::from_matrix(Eigen::Ref<Matrix const> const &m)
{
  DenseTensor t({m.rows(), m.cols()});
  t.matrix(m.rows(), m.cols()) = m;
  return t;
}

Index DenseTensor::offset(std::span<Index const> index) const
{
  if (static_cast<Index>(index.size()) != order()) {
    throw ShapeError("index has " + std::to_string(index.size()) + " entries for a tensor of order " +
                     std::to_string(order()));
  }
  Index off = 0;
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (index[i] < 0 || index[i] >= shape_[i]) {
      throw RangeError("index " + std::to_string(index[i]) + " out of bounds for mode " + std::to_string(i) +
                       " of size " + std::to_string(shape_[i]));
    }
    off = off * shape_[i] + index[i];
  }
  return off;
}

double &DenseTensor::at(std::span<Index const> index) { return data_[static_cast<std::size_t>(offset(index))]; }
double DenseTensor::at(std::span<Index const> index) const { return data_[static_cast<std::size_t>(offset(index))]; }

DenseTensor DenseTensor::reshaped(Shape shape) const
{
  if (shape_product(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  check_shape(shape);
  DenseTensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

MatrixMap DenseTensor::matrix(Index rows, Index cols)
{
  if (rows * cols != size()) { throw ShapeError("matrix view does not cover tensor " + shape_string(shape_)); }
  return MatrixMap(data_.data(), rows, cols);
}

ConstMatrixMap DenseTensor::matrix(Index rows, Index cols) const
{
  if (rows * cols != size()) { throw ShapeError("matrix view does not cover tensor " + shape_string(shape_)); }
  return ConstMatrixMap(data_.data(), rows, cols);
}

double DenseTensor::max_abs() const
{
  double m = 0.0;
  for (double v : data_) { m = std::max(m, std::abs(v)); }
  return m;
}

double DenseTensor::frobenius_norm() const
{
  double s = 0.0;
  for (double v : data_) { s += v * v; }
  return std::sqrt(s);
}

double DenseTensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

ComplexTensor::ComplexTensor(Shape shape, Cx fill)
  : shape_(std::move(shape))
{
  check_shape(shape_);
  data_.assign(static_cast<std::size_t>(shape_product(shape_)), fill);
}

ComplexTensor ComplexTensor::from_real(DenseTensor const &x)
{
  ComplexTensor c(x.shape());
  for (Index i = 0; i < x.size(); ++i) { c[i] = Cx(x[i], 0.0); }
  return c;
}

DenseTensor ComplexTensor::real() const
{
  DenseTensor r(shape_);
  for (Index i = 0; i < size(); ++i) { r[i] = data_[static_cast<std::size_t>(i)].real(); }
  return r;
}

double ComplexTensor::max_imag() const
{
  double m = 0.0;
  for (auto const &c : data_) { m = std::max(m, std::abs(c.imag())); }
  return m;
}

TRCores::TRCores(std::vector<DenseTensor> cores)
  : cores_(std::move(cores))
{
  if (cores_.empty()) { throw ShapeError("TR decomposition needs at least one core"); }
  for (std::size_t k = 0; k < cores_.size(); ++k) {
    if (cores_[k].order() != 3) {
      throw ShapeError("core " + std::to_string(k) + " must be third-order, got " + shape_string(cores_[k].shape()));
    }
    auto const &next = cores_[(k + 1) % cores_.size()];
    if (cores_[k].dim(2) != next.dim(0)) {
      throw ShapeError("rank mismatch between core " + std::to_string(k) + " " + shape_string(cores_[k].shape()) +
                       " and core " + std::to_string((k + 1) % cores_.size()) + " " + shape_string(next.shape()));
    }
  }
}

std::vector<Index> TRCores::ranks() const
{
  std::vector<Index> r;
  for (auto const &c : cores_) { r.push_back(c.dim(0)); }
  return r;
}

Shape TRCores::dims() const
{
  Shape s;
  for (auto const &c : cores_) { s.push_back(c.dim(1)); }
  return s;
}

Matrix TRCores::slice(Index k, Index v) const
{
  auto const &c = core(k);
  if (v < 0 || v >= c.dim(1)) {
    throw RangeError("slice index " + std::to_string(v) + " out of bounds for core " + std::to_string(k) + " of size " +
                     std::to_string(c.dim(1)));
  }
  Matrix m(c.dim(0), c.dim(2));
  for (Index p = 0; p < c.dim(0); ++p) {
    for (Index q = 0; q < c.dim(2); ++q) { m(p, q) = c[(p * c.dim(1) + v) * c.dim(2) + q]; }
  }
  return m;
}

DenseTensor permute(DenseTensor const &x, std::span<Index const> perm)
{
  auto const d = x.order();
  if (static_cast<Index>(perm.size()) != d) { throw ShapeError("permutation length does not match tensor order"); }
  std::vector<bool> seen(static_cast<std::size_t>(d), false);
  Shape out_shape(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i) {
    auto p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= d || seen[static_cast<std::size_t>(p)]) { throw ShapeError("invalid axis permutation"); }
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = x.dim(p);
  }
  // Input strides, reordered into output axis order.
  std::vector<Index> in_stride(static_cast<std::size_t>(d), 1);
  for (Index i = d - 2; i >= 0; --i) {
    in_stride[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(i + 1)] * x.dim(i + 1);
  }
  std::vector<Index> stride(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i) { stride[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]; }

  DenseTensor out(out_shape);
  std::vector<Index> idx(static_cast<std::size_t>(d), 0);
  Index src = 0;
  for (Index o = 0; o < out.size(); ++o) {
    out[o] = x[src];
    for (Index i = d - 1; i >= 0; --i) {
      auto const ui = static_cast<std::size_t>(i);
      if (++idx[ui] < out_shape[ui]) {
        src += stride[ui];
        break;
      }
      src -= stride[ui] * (out_shape[ui] - 1);
      idx[ui] = 0;
    }
  }
  return out;
}

double tr_entry(TRCores const &cores, std::span<Index const> index)
{
  if (static_cast<Index>(index.size()) != cores.order()) {
    throw ShapeError("index has " + std::to_string(index.size()) + " entries for " + std::to_string(cores.order()) +
                     " cores");
  }
  Matrix acc = cores.slice(0, index[0]);
  for (Index k = 1; k < cores.order(); ++k) { acc = acc * cores.slice(k, index[static_cast<std::size_t>(k)]); }
  return acc.trace();
}

DenseTensor chain_contract(std::span<DenseTensor const> cores)
{
  if (cores.empty()) { throw ShapeError("chain contraction needs at least one core"); }
  DenseTensor acc = cores[0];
  Index combined = acc.dim(1);
  for (std::size_t i = 1; i < cores.size(); ++i) {
    auto const &c = cores[i];
    Index const a = acc.dim(0);
    Index const b = acc.dim(2);
    if (c.dim(0) != b) { throw ShapeError("bond mismatch in chain contraction"); }
    DenseTensor next({a, combined * c.dim(1), c.dim(2)});
    next.matrix(a * combined, c.dim(1) * c.dim(2)).noalias() =
      acc.matrix(a * combined, b) * c.matrix(b, c.dim(1) * c.dim(2));
    combined *= c.dim(1);
    acc = std::move(next);
  }
  return acc;
}

DenseTensor tr_contract(TRCores const &cores)
{
  Index const d = cores.order();
  auto const dims = cores.dims();
  if (d == 1) {
    DenseTensor out(dims);
    for (Index v = 0; v < dims[0]; ++v) { out[v] = cores.slice(0, v).trace(); }
    return out;
  }
  // Close the ring at the largest mode so the open chain stays small.
  auto const k = static_cast<Index>(std::max_element(dims.begin(), dims.end()) - dims.begin());
  std::vector<DenseTensor> rest;
  for (Index j = 1; j < d; ++j) { rest.push_back(cores.core((k + j) % d)); }
  auto const chain = chain_contract(rest); // (r_{k+1}, P, r_k)
  Index const rq = chain.dim(0), P = chain.dim(1), rp = chain.dim(2);
  Index const n = dims[static_cast<std::size_t>(k)];
  std::array<Index, 3> const to_qpv{2, 0, 1};
  auto const g = permute(cores.core(k), to_qpv); // (r_{k+1}, r_k, n)

  // X[m, v] = sum_q chain[q, m, :] . g[q, :, v], modes ordered k+1, ..., k-1, k.
  Matrix rotated = Matrix::Zero(P, n);
  for (Index q = 0; q < rq; ++q) {
    ConstMatrixMap a(chain.data().data() + q * P * rp, P, rp);
    ConstMatrixMap b(g.data().data() + q * rp * n, rp, n);
    rotated.noalias() += a * b;
  }
  Shape rot_shape;
  for (Index j = 1; j <= d; ++j) { rot_shape.push_back(dims[static_cast<std::size_t>((k + j) % d)]); }
  DenseTensor x(rot_shape, std::vector<double>(rotated.data(), rotated.data() + rotated.size()));
  if (k == d - 1) { return x; }
  std::vector<Index> perm(static_cast<std::size_t>(d));
  for (Index j = 0; j < d; ++j) { perm[static_cast<std::size_t>(j)] = (j - k - 1 + d) % d; }
  return permute(x, perm);
}

DenseTensor mode_k_product(DenseTensor const &x, Eigen::Ref<Matrix const> const &m, Index k)
{
  auto const s = split_at(x.shape(), k);
  if (m.cols() != s.n) {
    throw ShapeError("mode-" + std::to_string(k) + " product: matrix has " + std::to_string(m.cols()) +
                     " columns, tensor mode has size " + std::to_string(s.n));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(k)] = m.rows();
  DenseTensor out(out_shape);
  for (Index p = 0; p < s.pre; ++p) {
    ConstMatrixMap xb(x.data().data() + p * s.n * s.post, s.n, s.post);
    MatrixMap ob(out.data().data() + p * m.rows() * s.post, m.rows(), s.post);
    ob.noalias() = m * xb;
  }
  return out;
}

ComplexTensor mode_k_dft(DenseTensor const &x, Index k) { return dft_along(ComplexTensor::from_real(x), k, FFTW_FORWARD); }

ComplexTensor mode_k_dft(ComplexTensor const &x, Index k) { return dft_along(x, k, FFTW_FORWARD); }

ComplexTensor mode_k_idft(ComplexTensor const &x, Index k)
{
  auto out = dft_along(x, k, FFTW_BACKWARD);
  double const inv = 1.0 / static_cast<double>(x.dim(k));
  for (auto &c : out.data()) { c *= inv; }
  return out;
}

Index frequency_magnitude(Index bin, Index n) { return std::min(bin, n - bin); }

TRCores lowpass_cores(TRCores const &cores, std::span<Index const> cutoffs)
{
  if (static_cast<Index>(cutoffs.size()) != cores.order()) {
    throw ShapeError("need one cutoff per core, got " + std::to_string(cutoffs.size()));
  }
  std::vector<DenseTensor> out;
  out.reserve(cores.cores().size());
  for (Index k = 0; k < cores.order(); ++k) {
    auto const &core = cores.core(k);
    Index const n = core.dim(1);
    Index const cutoff = cutoffs[static_cast<std::size_t>(k)];
    if (cutoff < 0 || cutoff > n / 2) {
      throw RangeError("cutoff " + std::to_string(cutoff) + " for core " + std::to_string(k) + " outside [0, " +
                       std::to_string(n / 2) + "]");
    }
    auto spectrum = mode_k_dft(core, 1);
    for (Index p = 0; p < core.dim(0); ++p) {
      for (Index w = 0; w < n; ++w) {
        if (frequency_magnitude(w, n) <= cutoff) { continue; }
        for (Index q = 0; q < core.dim(2); ++q) { spectrum[(p * n + w) * core.dim(2) + q] = Cx{}; }
      }
    }
    out.push_back(mode_k_idft(spectrum, 1).real());
  }
  return TRCores(std::move(out));
}

} // namespace reptrfd
