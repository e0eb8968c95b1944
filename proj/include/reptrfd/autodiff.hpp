#pragma once

#include "reptrfd/tensor.hpp"

#include <functional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Reverse-mode differentiation over DenseTensor-valued expressions.
//
// A Tape records nodes in creation order, which is a topological order of the
// expression graph. backward() walks it in reverse. Nodes that do not depend on
// any leaf never receive a gradient buffer.
namespace reptrfd::ad {

class Tape;

class Var {
public:
  Var() = default;

  DenseTensor const &value() const;
  DenseTensor const &grad() const;
  Shape const &shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape *tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

private:
  friend class Tape;
  Var(Tape *tape, std::size_t id)
    : tape_(tape)
    , id_(id)
  {
  }
  Tape *tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
public:
  using Backward = std::function<void(Tape &, std::size_t self)>;

  Tape() = default;
  Tape(Tape const &) = delete;
  Tape &operator=(Tape const &) = delete;

  /// Input that is never differentiated.
  Var constant(DenseTensor value);
  /// Differentiable input; its gradient is available after backward().
  Var leaf(DenseTensor value, std::string name = {});

  std::span<Var const> leaves() const { return leaves_; }
  std::string const &name(Var v) const;

  /// Accumulates dLoss/dLeaf into every leaf. Intermediate gradients are
  /// recomputed from scratch on every call; leaf gradients accumulate until
  /// zero_grad().
  void backward(Var loss);
  void zero_grad();

  DenseTensor const &value(std::size_t id) const { return nodes_[id].value; }
  DenseTensor const &grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  // Node construction for primitives.
  Var record(std::string_view op, DenseTensor value, std::vector<Var> parents, Backward backward);
  std::span<std::size_t const> parents(std::size_t id) const { return nodes_[id].parents; }
  DenseTensor const &upstream(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient buffer of a parent, allocated (zero) on first use.
  DenseTensor &grad_buffer(std::size_t id);

private:
  struct Node {
    std::string_view op;
    DenseTensor value;
    DenseTensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool is_leaf = false;
    std::string name;
    std::vector<std::size_t> parents;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::vector<Var> leaves_;
};

/// Names of every differentiable primitive this engine provides.
std::set<std::string, std::less<>> const &supported_primitives();

/// Attribute-free primitives by name (add, sub, mul, matmul, sin, abs, square,
/// sum, mean, neg). Unknown or attribute-requiring names throw ContractError.
Var apply(std::string_view op, std::span<Var const> inputs);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
/// a (m x k) times b (k x n), or b^T when transpose_b (b is n x k).
Var matmul(Var a, Var b, bool transpose_b = false);
/// Adds a vector of length m to every row of an (N x m) matrix.
Var add_bias(Var x, Var bias);
Var sin(Var a);
/// Subgradient 0 at 0.
Var abs(Var a);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
Var permute(Var a, std::vector<Index> perm);
Var concat(std::span<Var const> parts, Index axis);
Var slice(Var a, Index axis, Index begin, Index end);
/// 1-D vector of the entries where mask == 1, in row-major order.
Var masked_select(Var a, DenseTensor const &mask);
/// Forward difference x[i+1] - x[i] along an axis, length n-1, no wraparound.
Var diff(Var a, Index axis);
/// Non-overlapping s x s block mean over axes 0 and 1.
Var avg_pool(Var a, Index s);
/// Mode-k product with a matrix m of shape (rows, n_k). m may be a constant.
Var mode_product(Var x, Var m, Index k);
/// TR contraction of cores (r_k, n_k, r_{k+1}) into the full tensor.
Var tr_contract(std::span<Var const> cores);
/// Batched trace of matrix chains: slices[k] has shape (N, r_k, r_{k+1});
/// result[i] = trace(slices[0][i] ... slices[d-1][i]), shape (N).
Var trace_chain(std::span<Var const> slices);

} // namespace reptrfd::ad
