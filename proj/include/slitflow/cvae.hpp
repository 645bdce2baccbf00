#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "slitflow/nn.hpp"
#include "slitflow/optics.hpp"
#include "slitflow/sampling.hpp"
#include "slitflow/standardize.hpp"
#include "slitflow/tape.hpp"

namespace slitflow {

struct CvaeConfig {
  Index spectrum_size = 128;
  Index hidden_width = 256;
  int hidden_layers = 5;
  double beta = 1.0;           // weight of the KL term
  bool wavelet_cond = false;   // raw standardized spectrum by default

  nlohmann::json to_json() const;
  static CvaeConfig from_json(const nlohmann::json& j);
};

struct GaussianPosterior {
  Vector mu;       // 4
  Vector log_var;  // 4
};

/// KL(q || N(0,I)) for a diagonal Gaussian, summed over dimensions:
/// sum_d -1/2 * (1 + log var_d - var_d - mu_d^2).
double kl_closed_form(const GaussianPosterior& post);

/// ||x_hat - x||^2 / 2 + beta * KL, one sample.
double elbo_loss(const Vector& x_norm, const Vector& x_hat, const GaussianPosterior& post,
                 double beta = 1.0);

/// Conditional VAE baseline: encoder and decoder are dense stacks that both
/// receive the preprocessed spectrum; the prior is fixed to N(0, I4).
class CvaeModel {
 public:
  CvaeModel() = default;

  static CvaeModel create(const CvaeConfig& config, const OpticsConfig& optics,
                          const Standardizer& x_std, const Standardizer& y_std,
                          std::uint64_t seed);

  Matrix preprocess_spectra(const Matrix& spectra) const;
  RowVector preprocess_spectrum(const Spectrum& spectrum) const;

  GaussianPosterior encode(const Vector& x_norm, const Vector& y_prep) const;
  Vector decode(const Vector& z, const Vector& y_prep) const;
  Matrix decode_rows(const Matrix& z, const Matrix& y_prep) const;

  /// z = mu + exp(log_var/2) * eps with eps ~ N(0, I).
  static Vector reparameterize(const GaussianPosterior& post, Rng& rng);

  /// Batch ELBO on the tape with frozen noise eps [batch x 4].
  Var loss(Tape& tape, const Matrix& x_norm, const Matrix& y_prep, const Matrix& eps) const;
  double loss_plain(const Matrix& x_norm, const Matrix& y_prep, const Matrix& eps) const;

  /// z ~ N(0, I4) -> decode -> destandardize; out-of-bounds flagged.
  PosteriorSamples sample(const Spectrum& target, Index n, Rng& rng) const;

  void save(const std::string& path) const;
  static CvaeModel load(const std::string& path);

  CvaeConfig config;
  OpticsConfig optics;
  Standardizer x_std;
  Standardizer y_std;
  ParamStore params;
  Mlp encoder;  // [x (4) || y (M)] -> mu (4) || log_var (4)
  Mlp decoder;  // [z (4) || y (M)] -> x_hat (4)
  std::uint64_t seed = 0;

 private:
  void build_nets();
};

}  // namespace slitflow
