#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slitflow/cinn.hpp"
#include "slitflow/cvae.hpp"
#include "slitflow/forward_net.hpp"
#include "slitflow/optics.hpp"
#include "slitflow/sampling.hpp"

namespace slitflow {

struct ClusterResult {
  Matrix centroids;                       // k x 2
  std::vector<int> assignment;            // per point
  Vector within_std;                      // RMS distance to own centroid, per cluster
  std::vector<Index> sizes;               // per cluster
  std::vector<double> objective_history;  // sum of squared distances per Lloyd pass
};

/// Lloyd's algorithm with k-means++ seeding on n x 2 points.
ClusterResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iter = 100);

struct PercentileBand {
  Vector lower;  // per wavelength
  Vector upper;
  Vector mean;
};

/// Percentile by linear interpolation between closest order statistics:
/// rank = p/100 * (n-1), value = v[floor] + frac * (v[floor+1] - v[floor]).
double percentile_linear(std::vector<double> values, double p);

PercentileBand percentile_band(const Matrix& spectra, double lo = 2.0, double hi = 98.0);

/// Fraction of samples farther from their nearest centroid than tau_mult
/// times that cluster's within-std; defined for exactly two clusters.
double bridge_fraction(const Matrix& samples, const ClusterResult& clusters,
                       double tau_mult = 3.0);

/// Empirical mean and covariance of z = flow_forward(x, c) over the
/// validation split.
std::pair<Vector, Matrix> latent_stats(const FlowModel& flow, const Dataset& ds);

using Resimulator = std::function<Spectrum(const DeviceParams&)>;
Resimulator make_oracle_resim(const OpticsConfig& optics);
Resimulator make_surrogate_resim(const ForwardNet& net);

struct EvaluationReport {
  int version = 1;
  RowVector target_device;          // 4
  Index n_samples = 0;
  int k = 1;
  Matrix centroids;                 // k x 2, (lambda1, lambda2) plane
  Vector within_std;                // k
  std::vector<Index> cluster_sizes; // k
  Vector centroid_err_true;         // k, after optimal matching vs {true, mirror}
  std::optional<double> bridge;     // only defined for k = 2
  double oob_fraction = 0.0;
  double mean_mse = 0.0;            // MSE of mean re-simulated spectrum vs target
  double band_coverage_min = 0.0;   // per-wavelength minimum
  double band_coverage_mean = 0.0;
  Vector latent_mean;               // 4
  Matrix latent_cov;                // 4 x 4
  // depth statistics per cluster: mean and std of (h1, h2)
  Matrix depth_mean;                // k x 2
  Matrix depth_std;                 // k x 2

  nlohmann::json to_json() const;
  static EvaluationReport from_json(const nlohmann::json& j);
  bool operator==(const EvaluationReport& other) const;
};

/// Report plus the plot-ready raw arrays behind it.
struct EvaluationOutput {
  EvaluationReport report;
  Matrix samples;               // n x 4 devices
  std::vector<int> cluster_of;  // n
  Matrix z;                     // n x 4
  PercentileBand band;
  Spectrum target_spectrum;
  Vector wavelength_grid;
};

/// Core analysis over an already-drawn sample set; the model-specific
/// entry points below reduce to this.
EvaluationOutput evaluate_samples(const PosteriorSamples& samples, const Spectrum& target,
                                  const DeviceParams& true_device, const Resimulator& respim,
                                  const OpticsConfig& optics, std::uint64_t seed);

EvaluationOutput evaluate_inverse(const FlowModel& model, const Spectrum& target,
                                  const DeviceParams& true_device, Index n,
                                  const Resimulator& respim, std::uint64_t seed);
EvaluationOutput evaluate_inverse(const CvaeModel& model, const Spectrum& target,
                                  const DeviceParams& true_device, Index n,
                                  const Resimulator& respim, std::uint64_t seed);

/// Writes report.json, samples.csv, band.csv, latent.csv into dir.
void export_report(const EvaluationOutput& out, const std::string& dir);

}  // namespace slitflow
