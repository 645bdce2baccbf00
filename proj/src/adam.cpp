#include "slitflow/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace slitflow {

AdamState adam_init(const ParamStore& store) {
  AdamState state;
  state.m.reserve(store.size());
  state.v.reserve(store.size());
  for (Index i = 0; i < store.size(); ++i) {
    const Matrix& p = store.value(i);
    state.m.push_back(Matrix::Zero(p.rows(), p.cols()));
    state.v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return state;
}

void adam_step(ParamStore& store, AdamState& state, double lr) {
  if (lr <= 0.0) {
    throw std::invalid_argument("adam_step: learning rate must be positive, got " +
                                std::to_string(lr));
  }
  if (static_cast<Index>(state.m.size()) != store.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) +
                                " parameters, store has " + std::to_string(store.size()));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (Index i = 0; i < store.size(); ++i) {
    const Matrix& g = store.grad(i);
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    store.value(i).array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps);
  }
  store.zero_grads();
}

}  // namespace slitflow
