#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "slitflow/nn.hpp"
#include "slitflow/optics.hpp"
#include "slitflow/sampling.hpp"
#include "slitflow/standardize.hpp"
#include "slitflow/tape.hpp"

namespace slitflow {

struct FlowConfig {
  Index spectrum_size = 128;                  // M, conditioning input length
  Index cond_dim = 512;                       // C, conditioning feature size
  int num_blocks = 6;                         // K coupling blocks
  Index subnet_hidden = 512;                  // the single hidden layer of each subnet
  std::vector<Index> cond_hidden = {256, 256, 256};
  double clamp_alpha = 2.0;                   // scale clamp: s = (2a/pi)*atan(s_raw/a)
  bool wavelet_cond = true;                   // Haar-transform spectra before standardizing
  bool identity_init = true;                  // zero the subnet output layers at creation

  nlohmann::json to_json() const;
  static FlowConfig from_json(const nlohmann::json& j);
};

struct FlowOutput {
  Vector z;
  double log_det = 0.0;
};

/// Mean over the batch of sum(z^2)/2 - log_det.
double nll_loss(const std::vector<FlowOutput>& batch);

/// Conditional invertible network: a dense conditioning net feeding K affine
/// coupling blocks, each preceded by a fixed seeded permutation of the 4
/// coordinates. Bijective between standardized device parameters and the
/// latent, with an exact log-determinant.
class FlowModel {
 public:
  FlowModel() = default;

  static FlowModel create(const FlowConfig& config, const OpticsConfig& optics,
                          const Standardizer& x_std, const Standardizer& y_std,
                          std::uint64_t seed);

  /// Wavelet-transform (if configured) and standardize spectra, row-wise.
  Matrix preprocess_spectra(const Matrix& spectra) const;
  RowVector preprocess_spectrum(const Spectrum& spectrum) const;

  /// Conditioning features from already-preprocessed rows.
  Matrix cond_features_rows(const Matrix& y_prep) const;
  /// Full pipeline for one raw spectrum.
  Vector cond_features(const Spectrum& spectrum) const;

  /// One coupling block (no permutation): u1 = x1*exp(s(x2,c)) + t(x2,c),
  /// u2 = x2; returns (u, sum of clamped scales).
  std::pair<Vector, double> coupling_forward(int block, const Vector& x, const Vector& c) const;
  Vector coupling_inverse(int block, const Vector& u, const Vector& c) const;

  FlowOutput flow_forward(const Vector& x_norm, const Vector& c) const;
  Vector flow_inverse(const Vector& z, const Vector& c) const;

  /// Row-wise batch variants; C carries one conditioning vector per row.
  std::pair<Matrix, Vector> flow_forward_rows(const Matrix& x_norm, const Matrix& c) const;
  Matrix flow_inverse_rows(const Matrix& z, const Matrix& c) const;

  /// Training loss on the tape, conditioning net included.
  Var loss(Tape& tape, const Matrix& x_norm, const Matrix& y_prep) const;
  double loss_plain(const Matrix& x_norm, const Matrix& y_prep) const;

  /// z ~ N(0, I4) -> flow_inverse -> destandardize; out-of-bounds flagged.
  PosteriorSamples sample_posterior(const Spectrum& target, Index n, Rng& rng) const;

  void save(const std::string& path) const;
  static FlowModel load(const std::string& path);

  FlowConfig config;
  OpticsConfig optics;
  Standardizer x_std;
  Standardizer y_std;
  std::vector<std::vector<int>> perms;  // one 4-permutation per block
  ParamStore params;
  Mlp cond_net;
  std::vector<Mlp> subnets;
  std::uint64_t seed = 0;

 private:
  void build_nets();
  /// (s, t) of one block from [x2 || c] rows; errors on non-finite output.
  std::pair<Matrix, Matrix> subnet_st(int block, const Matrix& x2, const Matrix& c) const;
};

}  // namespace slitflow
