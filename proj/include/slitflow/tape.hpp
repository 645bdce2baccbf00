#pragma once

#include <functional>
#include <string>
#include <vector>

#include "slitflow/param_store.hpp"
#include "slitflow/types.hpp"

namespace slitflow {

/// Handle to a node recorded on a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode automatic differentiation over dense matrices.
///
/// Every operation evaluates eagerly and records a pullback; backward() walks
/// the recording in reverse creation order (which is a topological order) and
/// accumulates parameter gradients into the bound ParamStore. A tape is built
/// for one loss evaluation and then discarded; backward() may be called once.
class Tape {
 public:
  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  /// Leaf holding a constant (inputs, targets, frozen noise). No gradient.
  Var constant(Matrix value);

  /// Differentiable leaf that is not a parameter; read its gradient with
  /// grad() after backward().
  Var input(Matrix value);

  /// Leaf bound to a named parameter of the store; gradients accumulate there.
  Var param(const std::string& name);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var cmul(Var a, Var b);
  /// Adds a [1 x m] row vector to every row of a [n x m] matrix.
  Var add_rowvec(Var a, Var row);
  Var relu(Var a);
  Var exp(Var a);
  Var atan(Var a);
  Var square(Var a);
  Var scale(Var a, double k);
  Var add_scalar(Var a, double k);
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, Index first, Index count);
  /// Column gather: out.col(j) = in.col(perm[j]).
  Var permute_cols(Var a, const std::vector<int>& perm);
  /// Sum of all entries, as a 1x1 matrix.
  Var sum(Var a);
  /// Mean of all entries, as a 1x1 matrix.
  Var mean(Var a);

  const Matrix& value(Var v) const { return node_value(check(v)); }

  /// Gradient of the last backward() pass w.r.t. a node. Zero if the node
  /// did not participate.
  Matrix grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1, runs all pullbacks in reverse order, then
  /// adds leaf gradients into the ParamStore accumulators. `loss` must be a
  /// finite 1x1 node recorded on this tape.
  void backward(Var loss);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Matrix value;                    // empty for param leaves
    const Matrix* ref = nullptr;     // param leaves alias store memory
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    int param_index = -1;
    std::function<void(Tape&)> pull;
  };

  int check(Var v) const;
  const Matrix& node_value(int id) const {
    const Node& n = nodes_[id];
    return n.ref != nullptr ? *n.ref : n.value;
  }
  Matrix& grad_buffer(int id);

  template <typename Derived>
  void add_grad(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  int push(Matrix value, bool needs_grad, std::function<void(Tape&)> pull);

  std::vector<Node> nodes_;
  ParamStore* store_ = nullptr;
  bool backward_done_ = false;
};

}  // namespace slitflow
