#include "slitflow/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace slitflow {

int Tape::check(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument("Tape: variable was not recorded on this tape");
  }
  return v.id;
}

Matrix& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Matrix& v = node_value(id);
    n.grad = Matrix::Zero(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

int Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&)> pull) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::constant(Matrix value) { return {push(std::move(value), false, nullptr)}; }

Var Tape::input(Matrix value) { return {push(std::move(value), true, nullptr)}; }

Var Tape::param(const std::string& name) {
  if (store_ == nullptr) {
    throw std::invalid_argument("Tape: no ParamStore bound, cannot reference '" + name + "'");
  }
  Node n;
  n.ref = &store_->value(name);
  n.needs_grad = true;
  n.param_index = store_->index(name);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::matmul(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  const Matrix& A = node_value(ia);
  const Matrix& B = node_value(ib);
  if (A.cols() != B.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ, [" + std::to_string(A.rows()) +
                                "x" + std::to_string(A.cols()) + "] * [" + std::to_string(B.rows()) +
                                "x" + std::to_string(B.cols()) + "]");
  }
  Matrix out(A.rows(), B.cols());
  out.noalias() = A * B;
  const bool ng = nodes_[ia].needs_grad || nodes_[ib].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, ib, id](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      t.add_grad(ia, g * t.node_value(ib).transpose());
      t.add_grad(ib, t.node_value(ia).transpose() * g);
    };
  }
  return {id};
}

Var Tape::add(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  const Matrix& A = node_value(ia);
  const Matrix& B = node_value(ib);
  if (A.rows() != B.rows() || A.cols() != B.cols()) {
    throw std::invalid_argument("add: shape mismatch");
  }
  const bool ng = nodes_[ia].needs_grad || nodes_[ib].needs_grad;
  const int id = push(A + B, ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, ib, id](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      t.add_grad(ia, g);
      t.add_grad(ib, g);
    };
  }
  return {id};
}

Var Tape::sub(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  const Matrix& A = node_value(ia);
  const Matrix& B = node_value(ib);
  if (A.rows() != B.rows() || A.cols() != B.cols()) {
    throw std::invalid_argument("sub: shape mismatch");
  }
  const bool ng = nodes_[ia].needs_grad || nodes_[ib].needs_grad;
  const int id = push(A - B, ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, ib, id](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      t.add_grad(ia, g);
      t.add_grad(ib, -g);
    };
  }
  return {id};
}

Var Tape::cmul(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  const Matrix& A = node_value(ia);
  const Matrix& B = node_value(ib);
  if (A.rows() != B.rows() || A.cols() != B.cols()) {
    throw std::invalid_argument("cmul: shape mismatch");
  }
  const bool ng = nodes_[ia].needs_grad || nodes_[ib].needs_grad;
  const int id = push(A.cwiseProduct(B), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, ib, id](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      t.add_grad(ia, g.cwiseProduct(t.node_value(ib)));
      t.add_grad(ib, g.cwiseProduct(t.node_value(ia)));
    };
  }
  return {id};
}

Var Tape::add_rowvec(Var a, Var row) {
  const int ia = check(a), ir = check(row);
  const Matrix& A = node_value(ia);
  const Matrix& R = node_value(ir);
  if (R.rows() != 1 || R.cols() != A.cols()) {
    throw std::invalid_argument("add_rowvec: expected [1x" + std::to_string(A.cols()) +
                                "] row, got [" + std::to_string(R.rows()) + "x" +
                                std::to_string(R.cols()) + "]");
  }
  Matrix out = A;
  out.rowwise() += R.row(0);
  const bool ng = nodes_[ia].needs_grad || nodes_[ir].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, ir, id](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      t.add_grad(ia, g);
      t.add_grad(ir, g.colwise().sum());
    };
  }
  return {id};
}

Var Tape::relu(Var a) {
  const int ia = check(a);
  const Matrix& A = node_value(ia);
  const bool ng = nodes_[ia].needs_grad;
  const int id = push(A.cwiseMax(0.0), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, id](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      // subgradient 0 at the kink
      t.add_grad(ia, (t.node_value(ia).array() > 0.0).cast<double>().matrix().cwiseProduct(g));
    };
  }
  return {id};
}

Var Tape::exp(Var a) {
  const int ia = check(a);
  const bool ng = nodes_[ia].needs_grad;
  const int id = push(node_value(ia).array().exp().matrix(), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, id](Tape& t) {
      t.add_grad(ia, t.nodes_[id].grad.cwiseProduct(t.nodes_[id].value));
    };
  }
  return {id};
}

Var Tape::atan(Var a) {
  const int ia = check(a);
  const bool ng = nodes_[ia].needs_grad;
  const int id = push(node_value(ia).array().atan().matrix(), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, id](Tape& t) {
      const auto& x = t.node_value(ia).array();
      t.add_grad(ia, (t.nodes_[id].grad.array() / (1.0 + x.square())).matrix());
    };
  }
  return {id};
}

Var Tape::square(Var a) {
  const int ia = check(a);
  const bool ng = nodes_[ia].needs_grad;
  const int id = push(node_value(ia).array().square().matrix(), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, id](Tape& t) {
      t.add_grad(ia, 2.0 * t.nodes_[id].grad.cwiseProduct(t.node_value(ia)));
    };
  }
  return {id};
}

Var Tape::scale(Var a, double k) {
  const int ia = check(a);
  const bool ng = nodes_[ia].needs_grad;
  const int id = push(k * node_value(ia), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, id, k](Tape& t) { t.add_grad(ia, k * t.nodes_[id].grad); };
  }
  return {id};
}

Var Tape::add_scalar(Var a, double k) {
  const int ia = check(a);
  const bool ng = nodes_[ia].needs_grad;
  const int id = push((node_value(ia).array() + k).matrix(), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, id](Tape& t) { t.add_grad(ia, t.nodes_[id].grad); };
  }
  return {id};
}

Var Tape::concat_cols(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  const Matrix& A = node_value(ia);
  const Matrix& B = node_value(ib);
  if (A.rows() != B.rows()) {
    throw std::invalid_argument("concat_cols: row counts differ");
  }
  Matrix out(A.rows(), A.cols() + B.cols());
  out.leftCols(A.cols()) = A;
  out.rightCols(B.cols()) = B;
  const Index ca = A.cols(), cb = B.cols();
  const bool ng = nodes_[ia].needs_grad || nodes_[ib].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, ib, id, ca, cb](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      t.add_grad(ia, g.leftCols(ca));
      t.add_grad(ib, g.rightCols(cb));
    };
  }
  return {id};
}

Var Tape::slice_cols(Var a, Index first, Index count) {
  const int ia = check(a);
  const Matrix& A = node_value(ia);
  if (first < 0 || count < 0 || first + count > A.cols()) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(first) + ", " +
                                std::to_string(first + count) + ") outside " +
                                std::to_string(A.cols()) + " columns");
  }
  const bool ng = nodes_[ia].needs_grad;
  const int id = push(A.middleCols(first, count), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, id, first, count](Tape& t) {
      t.grad_buffer(ia).middleCols(first, count) += t.nodes_[id].grad;
    };
  }
  return {id};
}

Var Tape::permute_cols(Var a, const std::vector<int>& perm) {
  const int ia = check(a);
  const Matrix& A = node_value(ia);
  if (static_cast<Index>(perm.size()) != A.cols()) {
    throw std::invalid_argument("permute_cols: permutation size mismatch");
  }
  Matrix out(A.rows(), A.cols());
  for (Index j = 0; j < A.cols(); ++j) out.col(j) = A.col(perm[j]);
  const bool ng = nodes_[ia].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, id, perm](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      Matrix& ga = t.grad_buffer(ia);
      for (Index j = 0; j < g.cols(); ++j) ga.col(perm[j]) += g.col(j);
    };
  }
  return {id};
}

Var Tape::sum(Var a) {
  const int ia = check(a);
  Matrix out(1, 1);
  out(0, 0) = node_value(ia).sum();
  const bool ng = nodes_[ia].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, id](Tape& t) {
      const double g = t.nodes_[id].grad(0, 0);
      t.grad_buffer(ia).array() += g;
    };
  }
  return {id};
}

Var Tape::mean(Var a) {
  const int ia = check(a);
  const double inv_n = 1.0 / static_cast<double>(node_value(ia).size());
  Matrix out(1, 1);
  out(0, 0) = node_value(ia).sum() * inv_n;
  const bool ng = nodes_[ia].needs_grad;
  const int id = push(std::move(out), ng, nullptr);
  if (ng) {
    nodes_[id].pull = [ia, id, inv_n](Tape& t) {
      const double g = t.nodes_[id].grad(0, 0) * inv_n;
      t.grad_buffer(ia).array() += g;
    };
  }
  return {id};
}

Matrix Tape::grad(Var v) const {
  const int id = check(v);
  const Node& n = nodes_[id];
  if (n.has_grad) return n.grad;
  const Matrix& val = node_value(id);
  return Matrix::Zero(val.rows(), val.cols());
}

void Tape::backward(Var loss) {
  const int il = check(loss);
  if (backward_done_) {
    throw std::logic_error("Tape: backward() may be called once per tape");
  }
  const Matrix& l = node_value(il);
  if (l.rows() != 1 || l.cols() != 1) {
    throw std::invalid_argument("backward: loss must be a 1x1 node, got [" +
                                std::to_string(l.rows()) + "x" + std::to_string(l.cols()) + "]");
  }
  if (!std::isfinite(l(0, 0))) {
    throw std::runtime_error("backward: loss is not finite (" + std::to_string(l(0, 0)) + ")");
  }
  backward_done_ = true;
  grad_buffer(il)(0, 0) = 1.0;
  for (int i = il; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.has_grad && n.pull) n.pull(*this);
  }
  if (store_ != nullptr) {
    for (const Node& n : nodes_) {
      if (n.param_index >= 0 && n.has_grad) {
        store_->grad(n.param_index) += n.grad;
      }
    }
  }
}

}  // namespace slitflow
