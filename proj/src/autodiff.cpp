#include "reptrfd/autodiff.hpp"
#include "reptrfd/errors.hpp"

#include <cmath>
#include <map>
#include <numeric>

namespace reptrfd::ad {

namespace {

void require_same_tape(Var a, Var b)
{
  if (!a.valid() || a.tape() != b.tape()) { throw ContractError("operands belong to different tapes"); }
}

void require_same_shape(Var a, Var b, std::string_view op)
{
  require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_order(Var a, Index order, std::string_view op)
{
  if (a.value().order() != order) {
    throw ShapeError(std::string(op) + ": expected order " + std::to_string(order) + ", got " +
                     shape_string(a.shape()));
  }
}

// Gradient buffer of the i-th parent, or nullptr if that parent is constant.
DenseTensor *parent_grad(Tape &t, std::size_t self, std::size_t i)
{
  auto const pid = t.parents(self)[i];
  return t.requires_grad(pid) ? &t.grad_buffer(pid) : nullptr;
}

struct Split {
  Index pre = 1;
  Index n = 1;
  Index post = 1;
};

Split split_axis(Shape const &s, Index axis)
{
  if (axis < 0 || axis >= static_cast<Index>(s.size())) {
    throw RangeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  Split r;
  for (Index i = 0; i < axis; ++i) { r.pre *= s[static_cast<std::size_t>(i)]; }
  r.n = s[static_cast<std::size_t>(axis)];
  for (auto i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) { r.post *= s[i]; }
  return r;
}

template <typename F>
Var unary(std::string_view op, Var a, DenseTensor value, F &&local_grad)
{
  return a.tape()->record(op, std::move(value), {a}, [lg = std::forward<F>(local_grad)](Tape &t, std::size_t self) {
    auto *ga = parent_grad(t, self, 0);
    if (!ga) { return; }
    auto const &x = t.value(t.parents(self)[0]);
    auto const &g = t.upstream(self);
    for (Index i = 0; i < g.size(); ++i) { (*ga)[i] += g[i] * lg(x[i]); }
  });
}

} // namespace

DenseTensor const &Var::value() const
{
  if (!tape_) { throw ContractError("use of an unbound variable"); }
  return tape_->value(id_);
}

DenseTensor const &Var::grad() const
{
  if (!tape_) { throw ContractError("use of an unbound variable"); }
  return tape_->grad(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(DenseTensor value)
{
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(DenseTensor value, std::string name)
{
  Node n;
  n.op = "leaf";
  n.grad = DenseTensor(value.shape());
  n.value = std::move(value);
  n.has_grad = true;
  n.requires_grad = true;
  n.is_leaf = true;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  leaves_.push_back(Var(this, nodes_.size() - 1));
  return leaves_.back();
}

std::string const &Tape::name(Var v) const { return nodes_.at(v.id()).name; }

Var Tape::record(std::string_view op, DenseTensor value, std::vector<Var> parents, Backward backward)
{
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (auto const &p : parents) {
    if (p.tape() != this) { throw ContractError(std::string(op) + ": operand from another tape"); }
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
    n.parents.push_back(p.id());
  }
  if (n.requires_grad) { n.backward = std::move(backward); }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

DenseTensor const &Tape::grad(std::size_t id) const
{
  auto const &n = nodes_.at(id);
  if (!n.requires_grad) { throw ContractError("gradient requested for a constant node"); }
  if (!n.has_grad) { throw ContractError("gradient not materialized; call backward() first"); }
  return n.grad;
}

DenseTensor &Tape::grad_buffer(std::size_t id)
{
  auto &n = nodes_[id];
  if (!n.has_grad) {
    n.grad = DenseTensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss)
{
  if (loss.tape() != this) { throw ContractError("loss does not belong to this tape"); }
  if (loss.value().size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  for (auto &n : nodes_) {
    if (!n.is_leaf) {
      n.has_grad = false;
      n.grad = DenseTensor();
    }
  }
  if (!nodes_[loss.id()].requires_grad) { return; }
  auto &seed = grad_buffer(loss.id());
  seed[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto &n = nodes_[i];
    if (n.has_grad && n.backward && !n.is_leaf) { n.backward(*this, i); }
  }
}

void Tape::zero_grad()
{
  for (auto &n : nodes_) {
    if (n.is_leaf) {
      std::fill(n.grad.data().begin(), n.grad.data().end(), 0.0);
    } else {
      n.has_grad = false;
      n.grad = DenseTensor();
    }
  }
}

std::set<std::string, std::less<>> const &supported_primitives()
{
  static std::set<std::string, std::less<>> const names{
    "add",    "sub",       "mul",     "neg",           "scale", "matmul",   "add_bias",     "sin",
    "abs",    "square",    "sum",     "mean",          "reshape", "permute", "concat",      "slice",
    "masked_select", "diff", "avg_pool", "mode_product", "tr_contract", "trace_chain"};
  return names;
}

Var apply(std::string_view op, std::span<Var const> inputs)
{
  using Unary = Var (*)(Var);
  using Binary = Var (*)(Var, Var);
  static std::map<std::string, Unary, std::less<>> const unary_ops{
    {"neg", &neg}, {"sin", &sin}, {"abs", &abs}, {"square", &square}, {"sum", &sum}, {"mean", &mean}};
  static std::map<std::string, Binary, std::less<>> const binary_ops{
    {"add", &add}, {"sub", &sub}, {"mul", &mul}, {"add_bias", &add_bias}};

  if (auto it = unary_ops.find(op); it != unary_ops.end()) {
    if (inputs.size() != 1) { throw ContractError(std::string(op) + " takes one operand"); }
    return it->second(inputs[0]);
  }
  if (auto it = binary_ops.find(op); it != binary_ops.end()) {
    if (inputs.size() != 2) { throw ContractError(std::string(op) + " takes two operands"); }
    return it->second(inputs[0], inputs[1]);
  }
  if (op == "matmul") {
    if (inputs.size() != 2) { throw ContractError("matmul takes two operands"); }
    return matmul(inputs[0], inputs[1]);
  }
  if (supported_primitives().contains(op)) {
    throw ContractError("primitive '" + std::string(op) + "' needs attributes; call it directly");
  }
  throw ContractError("unsupported primitive '" + std::string(op) + "'");
}

Var add(Var a, Var b)
{
  require_same_shape(a, b, "add");
  DenseTensor v = a.value();
  for (Index i = 0; i < v.size(); ++i) { v[i] += b.value()[i]; }
  return a.tape()->record("add", std::move(v), {a, b}, [](Tape &t, std::size_t self) {
    auto const &g = t.upstream(self);
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto *gp = parent_grad(t, self, p)) {
        for (Index i = 0; i < g.size(); ++i) { (*gp)[i] += g[i]; }
      }
    }
  });
}

Var sub(Var a, Var b)
{
  require_same_shape(a, b, "sub");
  DenseTensor v = a.value();
  for (Index i = 0; i < v.size(); ++i) { v[i] -= b.value()[i]; }
  return a.tape()->record("sub", std::move(v), {a, b}, [](Tape &t, std::size_t self) {
    auto const &g = t.upstream(self);
    if (auto *ga = parent_grad(t, self, 0)) {
      for (Index i = 0; i < g.size(); ++i) { (*ga)[i] += g[i]; }
    }
    if (auto *gb = parent_grad(t, self, 1)) {
      for (Index i = 0; i < g.size(); ++i) { (*gb)[i] -= g[i]; }
    }
  });
}

Var mul(Var a, Var b)
{
  require_same_shape(a, b, "mul");
  DenseTensor v = a.value();
  for (Index i = 0; i < v.size(); ++i) { v[i] *= b.value()[i]; }
  return a.tape()->record("mul", std::move(v), {a, b}, [](Tape &t, std::size_t self) {
    auto const &g = t.upstream(self);
    auto const &x = t.value(t.parents(self)[0]);
    auto const &y = t.value(t.parents(self)[1]);
    if (auto *ga = parent_grad(t, self, 0)) {
      for (Index i = 0; i < g.size(); ++i) { (*ga)[i] += g[i] * y[i]; }
    }
    if (auto *gb = parent_grad(t, self, 1)) {
      for (Index i = 0; i < g.size(); ++i) { (*gb)[i] += g[i] * x[i]; }
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c)
{
  DenseTensor v = a.value();
  for (auto &x : v.data()) { x *= c; }
  return a.tape()->record("scale", std::move(v), {a}, [c](Tape &t, std::size_t self) {
    auto *ga = parent_grad(t, self, 0);
    if (!ga) { return; }
    auto const &g = t.upstream(self);
    for (Index i = 0; i < g.size(); ++i) { (*ga)[i] += c * g[i]; }
  });
}

Var matmul(Var a, Var b, bool transpose_b)
{
  require_same_tape(a, b);
  require_order(a, 2, "matmul");
  require_order(b, 2, "matmul");
  Index const m = a.value().dim(0);
  Index const k = a.value().dim(1);
  Index const kb = transpose_b ? b.value().dim(1) : b.value().dim(0);
  Index const n = transpose_b ? b.value().dim(0) : b.value().dim(1);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + (transpose_b ? "^T" : ""));
  }
  auto A = a.value().matrix(m, k);
  auto B = b.value().matrix(b.value().dim(0), b.value().dim(1));
  DenseTensor v({m, n});
  if (transpose_b) {
    v.matrix(m, n).noalias() = A * B.transpose();
  } else {
    v.matrix(m, n).noalias() = A * B;
  }
  return a.tape()->record("matmul", std::move(v), {a, b}, [=](Tape &t, std::size_t self) {
    auto const &x = t.value(t.parents(self)[0]);
    auto const &y = t.value(t.parents(self)[1]);
    auto G = t.upstream(self).matrix(m, n);
    auto Y = y.matrix(y.dim(0), y.dim(1));
    if (auto *ga = parent_grad(t, self, 0)) {
      if (transpose_b) {
        ga->matrix(m, k).noalias() += G * Y;
      } else {
        ga->matrix(m, k).noalias() += G * Y.transpose();
      }
    }
    if (auto *gb = parent_grad(t, self, 1)) {
      auto X = x.matrix(m, k);
      if (transpose_b) {
        gb->matrix(n, k).noalias() += G.transpose() * X;
      } else {
        gb->matrix(k, n).noalias() += X.transpose() * G;
      }
    }
  });
}

Var add_bias(Var x, Var bias)
{
  require_same_tape(x, bias);
  require_order(x, 2, "add_bias");
  Index const rows = x.value().dim(0);
  Index const cols = x.value().dim(1);
  if (bias.value().order() != 1 || bias.value().dim(0) != cols) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match " + shape_string(x.shape()));
  }
  DenseTensor v = x.value();
  auto V = v.matrix(rows, cols);
  V.rowwise() += bias.value().matrix(1, cols).row(0);
  return x.tape()->record("add_bias", std::move(v), {x, bias}, [rows, cols](Tape &t, std::size_t self) {
    auto G = t.upstream(self).matrix(rows, cols);
    if (auto *gx = parent_grad(t, self, 0)) { gx->matrix(rows, cols) += G; }
    if (auto *gb = parent_grad(t, self, 1)) { gb->matrix(1, cols).row(0) += G.colwise().sum(); }
  });
}

Var sin(Var a)
{
  DenseTensor v = a.value();
  for (auto &x : v.data()) { x = std::sin(x); }
  return unary("sin", a, std::move(v), [](double x) { return std::cos(x); });
}

Var abs(Var a)
{
  DenseTensor v = a.value();
  for (auto &x : v.data()) { x = std::abs(x); }
  return unary("abs", a, std::move(v), [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(Var a)
{
  DenseTensor v = a.value();
  for (auto &x : v.data()) { x = x * x; }
  return unary("square", a, std::move(v), [](double x) { return 2.0 * x; });
}

Var sum(Var a)
{
  return a.tape()->record("sum", DenseTensor::scalar(a.value().sum()), {a}, [](Tape &t, std::size_t self) {
    auto *ga = parent_grad(t, self, 0);
    if (!ga) { return; }
    double const g = t.upstream(self)[0];
    for (auto &x : ga->data()) { x += g; }
  });
}

Var mean(Var a)
{
  auto const n = static_cast<double>(a.value().size());
  return a.tape()->record("mean", DenseTensor::scalar(a.value().sum() / n), {a}, [n](Tape &t, std::size_t self) {
    auto *ga = parent_grad(t, self, 0);
    if (!ga) { return; }
    double const g = t.upstream(self)[0] / n;
    for (auto &x : ga->data()) { x += g; }
  });
}

Var reshape(Var a, Shape shape)
{
  auto v = a.value().reshaped(std::move(shape));
  return a.tape()->record("reshape", std::move(v), {a}, [](Tape &t, std::size_t self) {
    auto *ga = parent_grad(t, self, 0);
    if (!ga) { return; }
    auto const &g = t.upstream(self);
    for (Index i = 0; i < g.size(); ++i) { (*ga)[i] += g[i]; }
  });
}

Var permute(Var a, std::vector<Index> perm)
{
  auto v = reptrfd::permute(a.value(), perm);
  std::vector<Index> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) { inverse[static_cast<std::size_t>(perm[i])] = static_cast<Index>(i); }
  return a.tape()->record("permute", std::move(v), {a}, [inverse](Tape &t, std::size_t self) {
    auto *ga = parent_grad(t, self, 0);
    if (!ga) { return; }
    auto const back = reptrfd::permute(t.upstream(self), inverse);
    for (Index i = 0; i < back.size(); ++i) { (*ga)[i] += back[i]; }
  });
}

Var concat(std::span<Var const> parts, Index axis)
{
  if (parts.empty()) { throw ShapeError("concat: no operands"); }
  Shape out_shape = parts[0].shape();
  auto const base = split_axis(out_shape, axis);
  std::vector<Index> widths;
  Index total = 0;
  for (auto const &p : parts) {
    require_same_tape(parts[0], p);
    auto s = p.shape();
    if (s.size() != out_shape.size()) { throw ShapeError("concat: operand orders differ"); }
    auto const sp = split_axis(s, axis);
    if (sp.pre != base.pre || sp.post != base.post) {
      throw ShapeError("concat: shapes " + shape_string(out_shape) + " and " + shape_string(s) +
                       " differ outside the concatenation axis");
    }
    widths.push_back(sp.n);
    total += sp.n;
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  DenseTensor v(out_shape);
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto const &src = parts[i].value();
    for (Index p = 0; p < base.pre; ++p) {
      std::copy_n(src.data().begin() + p * widths[i] * base.post, widths[i] * base.post,
                  v.data().begin() + (p * total + offset) * base.post);
    }
    offset += widths[i];
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return parts[0].tape()->record("concat", std::move(v), parents, [=](Tape &t, std::size_t self) {
    auto const &g = t.upstream(self);
    Index off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (auto *gp = parent_grad(t, self, i)) {
        for (Index p = 0; p < base.pre; ++p) {
          for (Index j = 0; j < widths[i] * base.post; ++j) {
            (*gp)[p * widths[i] * base.post + j] += g[(p * total + off) * base.post + j];
          }
        }
      }
      off += widths[i];
    }
  });
}

Var slice(Var a, Index axis, Index begin, Index end)
{
  auto const s = split_axis(a.shape(), axis);
  if (begin < 0 || end > s.n || begin >= end) {
    throw RangeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for axis of size " +
                     std::to_string(s.n));
  }
  Index const w = end - begin;
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = w;
  DenseTensor v(out_shape);
  for (Index p = 0; p < s.pre; ++p) {
    std::copy_n(a.value().data().begin() + (p * s.n + begin) * s.post, w * s.post, v.data().begin() + p * w * s.post);
  }
  return a.tape()->record("slice", std::move(v), {a}, [=](Tape &t, std::size_t self) {
    auto *ga = parent_grad(t, self, 0);
    if (!ga) { return; }
    auto const &g = t.upstream(self);
    for (Index p = 0; p < s.pre; ++p) {
      for (Index j = 0; j < w * s.post; ++j) { (*ga)[(p * s.n + begin) * s.post + j] += g[p * w * s.post + j]; }
    }
  });
}

Var masked_select(Var a, DenseTensor const &mask)
{
  if (mask.shape() != a.shape()) {
    throw ShapeError("masked_select: mask " + shape_string(mask.shape()) + " vs value " + shape_string(a.shape()));
  }
  std::vector<Index> picked;
  for (Index i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0) { throw RangeError("masked_select: mask entries must be 0 or 1"); }
    if (mask[i] == 1.0) { picked.push_back(i); }
  }
  if (picked.empty()) { throw ShapeError("masked_select: mask selects no entries"); }
  DenseTensor v({static_cast<Index>(picked.size())});
  for (std::size_t i = 0; i < picked.size(); ++i) { v[static_cast<Index>(i)] = a.value()[picked[i]]; }
  return a.tape()->record("masked_select", std::move(v), {a}, [picked](Tape &t, std::size_t self) {
    auto *ga = parent_grad(t, self, 0);
    if (!ga) { return; }
    auto const &g = t.upstream(self);
    for (std::size_t i = 0; i < picked.size(); ++i) { (*ga)[picked[i]] += g[static_cast<Index>(i)]; }
  });
}

Var diff(Var a, Index axis)
{
  auto const s = split_axis(a.shape(), axis);
  if (s.n < 2) { throw ShapeError("diff: axis " + std::to_string(axis) + " needs at least two entries"); }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = s.n - 1;
  DenseTensor v(out_shape);
  auto const &x = a.value();
  for (Index p = 0; p < s.pre; ++p) {
    for (Index i = 0; i + 1 < s.n; ++i) {
      for (Index q = 0; q < s.post; ++q) {
        v[(p * (s.n - 1) + i) * s.post + q] = x[(p * s.n + i + 1) * s.post + q] - x[(p * s.n + i) * s.post + q];
      }
    }
  }
  return a.tape()->record("diff", std::move(v), {a}, [s](Tape &t, std::size_t self) {
    auto *ga = parent_grad(t, self, 0);
    if (!ga) { return; }
    auto const &g = t.upstream(self);
    for (Index p = 0; p < s.pre; ++p) {
      for (Index i = 0; i + 1 < s.n; ++i) {
        for (Index q = 0; q < s.post; ++q) {
          double const gi = g[(p * (s.n - 1) + i) * s.post + q];
          (*ga)[(p * s.n + i + 1) * s.post + q] += gi;
          (*ga)[(p * s.n + i) * s.post + q] -= gi;
        }
      }
    }
  });
}

Var avg_pool(Var a, Index s)
{
  auto const &x = a.value();
  if (x.order() < 2) { throw ShapeError("avg_pool needs at least two modes"); }
  if (s < 1 || x.dim(0) % s != 0 || x.dim(1) % s != 0) {
    throw ShapeError("avg_pool: spatial dims " + shape_string(x.shape()) + " not divisible by " + std::to_string(s));
  }
  Index const n0 = x.dim(0);
  Index const n1 = x.dim(1);
  Index const rest = x.size() / (n0 * n1);
  Shape out_shape = x.shape();
  out_shape[0] = n0 / s;
  out_shape[1] = n1 / s;
  DenseTensor v(out_shape);
  double const w = 1.0 / static_cast<double>(s * s);
  for (Index i = 0; i < n0; ++i) {
    for (Index j = 0; j < n1; ++j) {
      Index const o = ((i / s) * (n1 / s) + j / s) * rest;
      Index const src = (i * n1 + j) * rest;
      for (Index q = 0; q < rest; ++q) { v[o + q] += w * x[src + q]; }
    }
  }
  return a.tape()->record("avg_pool", std::move(v), {a}, [=](Tape &t, std::size_t self) {
    auto *ga = parent_grad(t, self, 0);
    if (!ga) { return; }
    auto const &g = t.upstream(self);
    for (Index i = 0; i < n0; ++i) {
      for (Index j = 0; j < n1; ++j) {
        Index const o = ((i / s) * (n1 / s) + j / s) * rest;
        Index const dst = (i * n1 + j) * rest;
        for (Index q = 0; q < rest; ++q) { (*ga)[dst + q] += w * g[o + q]; }
      }
    }
  });
}

Var mode_product(Var x, Var m, Index k)
{
  require_same_tape(x, m);
  require_order(m, 2, "mode_product");
  auto const s = split_axis(x.shape(), k);
  Index const rows = m.value().dim(0);
  if (m.value().dim(1) != s.n) {
    throw ShapeError("mode_product: matrix " + shape_string(m.shape()) + " incompatible with mode " +
                     std::to_string(k) + " of " + shape_string(x.shape()));
  }
  auto v = reptrfd::mode_k_product(x.value(), m.value().matrix(rows, s.n), k);
  return x.tape()->record("mode_product", std::move(v), {x, m}, [=](Tape &t, std::size_t self) {
    auto const &xv = t.value(t.parents(self)[0]);
    auto const &mv = t.value(t.parents(self)[1]);
    auto const &g = t.upstream(self);
    auto M = mv.matrix(rows, s.n);
    auto *gx = parent_grad(t, self, 0);
    auto *gm = parent_grad(t, self, 1);
    for (Index p = 0; p < s.pre; ++p) {
      ConstMatrixMap G(g.data().data() + p * rows * s.post, rows, s.post);
      if (gx) {
        MatrixMap GX(gx->data().data() + p * s.n * s.post, s.n, s.post);
        GX.noalias() += M.transpose() * G;
      }
      if (gm) {
        ConstMatrixMap X(xv.data().data() + p * s.n * s.post, s.n, s.post);
        gm->matrix(rows, s.n).noalias() += G * X.transpose();
      }
    }
  });
}

namespace {

// Gradient of a TR contraction with respect to core k, as an (n_k, r_{k+1} r_k)
// matrix E[v, q r_k + p] = sum over the other indices of D times the ring
// product of the other cores. `chain` holds cores k+1, ..., k-1 and `d_rot`
// the upstream gradient with modes in that order followed by mode k.
struct Environment {
  std::vector<DenseTensor const *> chain;
  DenseTensor d_rot;
  Index nk = 0;

  Index rq() const { return chain.front()->dim(0); }
  Index rk() const { return chain.back()->dim(2); }

  // Cost of forming the other cores' product explicitly.
  double direct_cost() const
  {
    double cost = 0.0, combos = static_cast<double>(chain[0]->dim(1));
    for (std::size_t i = 1; i < chain.size(); ++i) {
      combos *= static_cast<double>(chain[i]->dim(1));
      cost += static_cast<double>(rq()) * combos * static_cast<double>(chain[i]->dim(0) * chain[i]->dim(2));
    }
    return cost + static_cast<double>(nk) * combos * static_cast<double>(rq() * rk());
  }

  // Cost of absorbing the cores into D one at a time from the far end.
  double sweep_cost() const
  {
    double rest = 1.0;
    for (auto const *c : chain) { rest *= static_cast<double>(c->dim(1)); }
    double cost = 0.0;
    for (auto i = chain.size(); i-- > 0;) {
      auto const *c = chain[i];
      Index const width = i + 1 == chain.size() ? 1 : c->dim(2);
      cost += rest * static_cast<double>(nk * c->dim(0) * width * rk());
      rest /= static_cast<double>(c->dim(1));
    }
    return cost;
  }

  Matrix direct() const
  {
    std::vector<DenseTensor> cores;
    for (auto const *c : chain) { cores.push_back(*c); }
    auto const m = chain_contract(cores); // (q, o, p)
    Index const others = m.dim(1);
    std::vector<Index> const qop{1, 0, 2};
    auto const a = reptrfd::permute(m, qop);
    return d_rot.matrix(others, nk).transpose() * a.matrix(others, rq() * rk());
  }

  Matrix sweep() const
  {
    auto const m = chain.size();
    Index rest = 1;
    for (std::size_t i = 0; i + 1 < m; ++i) { rest *= chain[i]->dim(1); }
    // Last core: T[rest, v_k, a, r_k] = sum_v D[rest, v, v_k] G[a, v, r_k].
    auto const *last = chain.back();
    Index const nl = last->dim(1);
    std::vector<Index> const swap_tail{0, 2, 1};
    auto const dp = reptrfd::permute(d_rot.reshaped({rest, nl, nk}), swap_tail);
    std::vector<Index> const vap{1, 0, 2};
    auto const gl = reptrfd::permute(*last, vap);
    Matrix t = dp.matrix(rest * nk, nl) * gl.matrix(nl, last->dim(0) * rk());
    Index width = last->dim(0); // leading bond of the absorbed block
    for (std::size_t i = m - 1; i-- > 0;) {
      auto const *c = chain[i];
      Index const n = c->dim(1);
      rest /= n;
      // (rest, v, v_k, b, r_k) -> (rest, v_k, v, b, r_k)
      DenseTensor const tt({rest, n, nk, width * rk()}, std::vector<double>(t.data(), t.data() + t.size()));
      std::vector<Index> const mid{0, 2, 1, 3};
      auto const tp = reptrfd::permute(tt, mid);
      auto const cm = c->matrix(c->dim(0), n * width);
      Matrix next(rest * nk, c->dim(0) * rk());
      for (Index blk = 0; blk < rest * nk; ++blk) {
        ConstMatrixMap b(tp.data().data() + blk * n * width * rk(), n * width, rk());
        MatrixMap(next.data() + blk * c->dim(0) * rk(), c->dim(0), rk()).noalias() = cm * b;
      }
      t = std::move(next);
      width = c->dim(0);
    }
    return t;
  }
};

} // namespace

Var tr_contract(std::span<Var const> cores)
{
  if (cores.empty()) { throw ShapeError("tr_contract: no cores"); }
  std::vector<DenseTensor> values;
  for (auto const &c : cores) {
    require_same_tape(cores[0], c);
    values.push_back(c.value());
  }
  TRCores const tr(values);
  auto v = reptrfd::tr_contract(tr);
  std::vector<Var> parents(cores.begin(), cores.end());
  return cores[0].tape()->record("tr_contract", std::move(v), parents, [](Tape &t, std::size_t self) {
    auto const ids = t.parents(self);
    auto const d = static_cast<Index>(ids.size());
    auto const &g = t.upstream(self);
    for (Index k = 0; k < d; ++k) {
      auto *gk = parent_grad(t, self, static_cast<std::size_t>(k));
      if (!gk) { continue; }
      auto const &core = t.value(ids[static_cast<std::size_t>(k)]);
      Index const rk = core.dim(0);
      Index const nk = core.dim(1);
      Index const rn = core.dim(2);
      if (d == 1) {
        // X[v] = trace(G[:, v, :]).
        for (Index v = 0; v < nk; ++v) {
          for (Index p = 0; p < rk; ++p) { (*gk)[(p * nk + v) * rn + p] += g[v]; }
        }
        continue;
      }
      Environment env;
      std::vector<Index> perm;
      for (Index j = 1; j < d; ++j) {
        auto const idx = (k + j) % d;
        env.chain.push_back(&t.value(ids[static_cast<std::size_t>(idx)]));
        perm.push_back(idx);
      }
      perm.push_back(k);
      env.d_rot = reptrfd::permute(g, perm);
      env.nk = nk;
      Matrix const prod = env.sweep_cost() < env.direct_cost() ? env.sweep() : env.direct();
      // prod[v, q*rk + p] -> grad[p, v, q]
      for (Index p = 0; p < rk; ++p) {
        for (Index v = 0; v < nk; ++v) {
          for (Index q = 0; q < rn; ++q) { (*gk)[(p * nk + v) * rn + q] += prod(v, q * rk + p); }
        }
      }
    }
  });
}

Var trace_chain(std::span<Var const> slices)
{
  if (slices.empty()) { throw ShapeError("trace_chain: no slices"); }
  Index const n = slices[0].value().dim(0);
  auto const d = slices.size();
  for (std::size_t k = 0; k < d; ++k) {
    require_same_tape(slices[0], slices[k]);
    require_order(slices[k], 3, "trace_chain");
    auto const &next = slices[(k + 1) % d].value();
    if (slices[k].value().dim(0) != n) { throw ShapeError("trace_chain: batch sizes differ"); }
    if (slices[k].value().dim(2) != next.dim(1)) { throw ShapeError("trace_chain: ring ranks do not close"); }
  }
  auto slice_of = [](DenseTensor const &s, Index i) {
    return ConstMatrixMap(s.data().data() + i * s.dim(1) * s.dim(2), s.dim(1), s.dim(2));
  };
  DenseTensor v({n});
  for (Index i = 0; i < n; ++i) {
    Matrix acc = slice_of(slices[0].value(), i);
    for (std::size_t k = 1; k < d; ++k) { acc = acc * slice_of(slices[k].value(), i); }
    v[i] = acc.trace();
  }
  std::vector<Var> parents(slices.begin(), slices.end());
  return slices[0].tape()->record("trace_chain", std::move(v), parents, [=](Tape &t, std::size_t self) {
    auto const ids = t.parents(self);
    auto const &g = t.upstream(self);
    std::vector<DenseTensor const *> vals;
    std::vector<DenseTensor *> grads;
    for (std::size_t k = 0; k < d; ++k) {
      vals.push_back(&t.value(ids[k]));
      grads.push_back(parent_grad(t, self, k));
    }
    Index const r0 = vals[0]->dim(1);
    std::vector<Matrix> prefix(d + 1);
    std::vector<Matrix> suffix(d + 1);
    for (Index i = 0; i < n; ++i) {
      // prefix[k] = S_0 ... S_{k-1}, suffix[k] = S_k ... S_{d-1}
      prefix[0] = Matrix::Identity(r0, r0);
      for (std::size_t k = 0; k < d; ++k) { prefix[k + 1] = prefix[k] * slice_of(*vals[k], i); }
      suffix[d] = Matrix::Identity(r0, r0);
      for (std::size_t k = d; k-- > 0;) { suffix[k] = slice_of(*vals[k], i) * suffix[k + 1]; }
      for (std::size_t k = 0; k < d; ++k) {
        if (!grads[k]) { continue; }
        auto const &s = *vals[k];
        MatrixMap G(grads[k]->data().data() + i * s.dim(1) * s.dim(2), s.dim(1), s.dim(2));
        G.noalias() += g[i] * (suffix[k + 1] * prefix[k]).transpose();
      }
    }
  });
}

} // namespace reptrfd::ad
