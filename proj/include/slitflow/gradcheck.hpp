#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slitflow/param_store.hpp"
#include "slitflow/tape.hpp"

namespace slitflow {

struct GradCheckResult {
  std::string name;
  Index scalars_checked = 0;
  double max_rel_err = 0.0;
  std::string worst_param;
  bool pass = false;
};

/// Compares reverse-mode gradients against central finite differences over
/// every scalar in the store. `taped` records the loss on a fresh tape;
/// `plain` re-evaluates the same loss from the store's current values without
/// touching a tape, so the two paths are independent. Relative error uses
/// |fd - an| / max(max(|fd|, |an|), 1e-6).
GradCheckResult check_gradients(const std::string& name, ParamStore& store,
                                const std::function<Var(Tape&)>& taped,
                                const std::function<double()>& plain, double eps = 1e-5,
                                double tol = 1e-4);

/// Randomized tiny instances of the forward net, the cVAE (through the ELBO
/// with frozen noise), and the flow (through the NLL loss, conditioning net
/// included).
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed);

}  // namespace slitflow
