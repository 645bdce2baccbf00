#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "slitflow/nn.hpp"
#include "slitflow/optics.hpp"
#include "slitflow/standardize.hpp"
#include "slitflow/tape.hpp"

namespace slitflow {

struct ForwardConfig {
  Index hidden_width = 512;
  int hidden_layers = 3;  // 3 per the main architecture; 5 is the documented alternative

  nlohmann::json to_json() const;
  static ForwardConfig from_json(const nlohmann::json& j);
};

/// Learned map from standardized device parameters to a raw transmission
/// spectrum. Training uses the unclamped outputs; reporting clamps to [0,1].
class ForwardNet {
 public:
  ForwardNet() = default;

  static ForwardNet create(const ForwardConfig& config, const OpticsConfig& optics,
                           const Standardizer& x_std, std::uint64_t seed);

  /// Re-initializes the output layer to predict the column means of y_train
  /// (zero weights, mean bias), so training fits residuals from the mean.
  /// Cuts the residue tail roughly in half versus a random output layer.
  void init_output_mean(const Matrix& y_train);

  /// Bounds-checked single-device prediction, clamped to [0,1].
  Spectrum predict_spectrum(const DeviceParams& device) const;

  /// Raw (unclamped) batch outputs from standardized inputs.
  Matrix predict_raw(const Matrix& x_norm) const;

  /// Mean squared error over all entries of the batch, on raw outputs.
  Var loss(Tape& tape, const Matrix& x_norm, const Matrix& y) const;
  double loss_plain(const Matrix& x_norm, const Matrix& y) const;

  void save(const std::string& path) const;
  static ForwardNet load(const std::string& path);

  ForwardConfig config;
  OpticsConfig optics;
  Standardizer x_std;
  ParamStore params;
  Mlp net;
  std::uint64_t seed = 0;
};

/// Largest absolute per-point deviation between two equal-length spectra, in
/// absolute transmission units (0.015 = 1.5 percentage points).
double residue(const Spectrum& pred, const Spectrum& truth);

}  // namespace slitflow
