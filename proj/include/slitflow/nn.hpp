#pragma once

#include <string>
#include <vector>

#include "slitflow/param_store.hpp"
#include "slitflow/rng.hpp"
#include "slitflow/tape.hpp"
#include "slitflow/types.hpp"

namespace slitflow {

enum class Activation { kRelu, kLinear };

/// One fully connected layer. Bias is stored [1 x out] so it shares the
/// matrix-only parameter representation.
struct DenseLayer {
  Matrix weights;  // [in x out]
  Matrix bias;     // [1 x out]
  Activation activation = Activation::kLinear;
};

/// activation(input * W + b), applied row-wise over the batch.
Matrix dense_forward(const DenseLayer& layer, const Matrix& input);

/// Sequential composition of dense_forward; an empty list is the identity.
Matrix mlp_forward(const std::vector<DenseLayer>& layers, const Matrix& input);

/// A named stack of dense layers whose parameters live in a ParamStore under
/// "<prefix>.w<i>" / "<prefix>.b<i>". The same definition drives plain
/// evaluation and tape recording, so both paths share one architecture.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string prefix, std::vector<Index> widths, Activation hidden_act,
      Activation output_act, bool zero_init_output = false);

  /// Adds all weights/biases to the store, drawn uniform ±1/√fan_in; the
  /// final layer is zeroed entirely when zero_init_output is set.
  void register_params(ParamStore& store, Rng& rng) const;

  Matrix forward(const ParamStore& store, const Matrix& input) const;
  Var forward(Tape& tape, Var input) const;

  int num_layers() const { return static_cast<int>(widths_.size()) - 1; }
  Index input_size() const { return widths_.front(); }
  Index output_size() const { return widths_.back(); }
  const std::string& prefix() const { return prefix_; }
  std::string weight_name(int layer) const;
  std::string bias_name(int layer) const;

 private:
  Activation activation_of(int layer) const;

  std::string prefix_;
  std::vector<Index> widths_;
  Activation hidden_act_ = Activation::kRelu;
  Activation output_act_ = Activation::kLinear;
  bool zero_init_output_ = false;
};

}  // namespace slitflow
