#pragma once

#include <vector>

#include "slitflow/param_store.hpp"
#include "slitflow/types.hpp"

namespace slitflow {

/// Per-parameter Adam moments, stored in ParamStore order.
struct AdamState {
  std::vector<Matrix> m;  // first moments
  std::vector<Matrix> v;  // second moments
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState adam_init(const ParamStore& store);

/// One bias-corrected Adam update from the accumulated gradients; gradients
/// are zeroed afterwards so the next tape starts clean.
void adam_step(ParamStore& store, AdamState& state, double lr);

}  // namespace slitflow
