#include "slitflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <utility>

namespace slitflow {

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  const Index r = static_cast<Index>(rows.size());
  const Index c = r > 0 ? static_cast<Index>(rows[0].size()) : 0;
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i) {
    if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) != c) {
      throw std::invalid_argument("report: ragged matrix in JSON");
    }
    for (Index k = 0; k < c; ++k) m(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  }
  return m;
}

std::vector<double> vec_to_std(const Vector& v) { return {v.begin(), v.end()}; }

Vector vec_from_json(const nlohmann::json& j) {
  const auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(vals.data(), static_cast<Index>(vals.size()));
}

}  // namespace

ClusterResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iter) {
  const Index n = points.rows();
  if (k < 1 || n < k) {
    throw std::invalid_argument("kmeans: need n >= k >= 1, got n=" + std::to_string(n) +
                                ", k=" + std::to_string(k));
  }
  if (points.cols() != 2) {
    throw std::invalid_argument("kmeans: expects n x 2 points");
  }
  Rng rng(seed);

  // k-means++ seeding
  Matrix centroids(k, 2);
  centroids.row(0) = points.row(static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(n))));
  Vector d2 = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Index chosen = 0;
    if (total > 0.0) {
      const double u = rng.uniform01() * total;
      double acc = 0.0;
      chosen = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= u) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    }
    centroids.row(c) = points.row(chosen);
    d2 = d2.cwiseMin((points.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }

  ClusterResult result;
  result.assignment.assign(static_cast<std::size_t>(n), -1);
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);

  for (int iter = 0; iter < max_iter; ++iter) {
    // assignment phase
    double objective = 0.0;
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (points.row(i) - centroids.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (points.row(i) - centroids.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      objective += best_d;
      if (assignment[static_cast<std::size_t>(i)] != best) {
        assignment[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    result.objective_history.push_back(objective);
    if (!changed) break;

    // update phase
    Matrix sums = Matrix::Zero(k, 2);
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(assignment[static_cast<std::size_t>(i)]) += points.row(i);
      counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])] += 1;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // revive an empty cluster at the point farthest from its centroid
        Index far = 0;
        double far_d = -1.0;
        for (Index i = 0; i < n; ++i) {
          const double d =
              (points.row(i) - centroids.row(assignment[static_cast<std::size_t>(i)]))
                  .squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids.row(c) = points.row(far);
      }
    }
  }

  result.centroids = centroids;
  result.assignment = assignment;
  result.sizes.assign(static_cast<std::size_t>(k), 0);
  Vector sq_sum = Vector::Zero(k);
  for (Index i = 0; i < n; ++i) {
    const int c = assignment[static_cast<std::size_t>(i)];
    result.sizes[static_cast<std::size_t>(c)] += 1;
    sq_sum[c] += (points.row(i) - centroids.row(c)).squaredNorm();
  }
  result.within_std = Vector::Zero(k);
  for (int c = 0; c < k; ++c) {
    if (result.sizes[static_cast<std::size_t>(c)] > 0) {
      result.within_std[c] =
          std::sqrt(sq_sum[c] / static_cast<double>(result.sizes[static_cast<std::size_t>(c)]));
    }
  }
  return result;
}

double percentile_linear(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile_linear: empty input");
  if (p < 0.0 || p > 100.0) {
    throw std::invalid_argument("percentile_linear: p=" + std::to_string(p) +
                                " outside [0, 100]");
  }
  std::sort(values.begin(), values.end());
  const auto n = static_cast<Index>(values.size());
  if (n == 1) return values[0];
  const double rank = p / 100.0 * static_cast<double>(n - 1);
  const auto lo = static_cast<Index>(std::floor(rank));
  const Index hi = std::min(lo + 1, n - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[static_cast<std::size_t>(lo)] +
         frac * (values[static_cast<std::size_t>(hi)] - values[static_cast<std::size_t>(lo)]);
}

PercentileBand percentile_band(const Matrix& spectra, double lo, double hi) {
  if (spectra.rows() < 1) throw std::invalid_argument("percentile_band: no spectra");
  if (!(lo < hi) || lo < 0.0 || hi > 100.0) {
    throw std::invalid_argument("percentile_band: need 0 <= lo < hi <= 100");
  }
  PercentileBand band;
  const Index m = spectra.cols();
  band.lower.resize(m);
  band.upper.resize(m);
  band.mean = spectra.colwise().mean();
  std::vector<double> column(static_cast<std::size_t>(spectra.rows()));
  for (Index c = 0; c < m; ++c) {
    for (Index r = 0; r < spectra.rows(); ++r) column[static_cast<std::size_t>(r)] = spectra(r, c);
    band.lower[c] = percentile_linear(column, lo);
    band.upper[c] = percentile_linear(column, hi);
  }
  return band;
}

double bridge_fraction(const Matrix& samples, const ClusterResult& clusters, double tau_mult) {
  if (clusters.centroids.rows() != 2) {
    throw std::invalid_argument("bridge_fraction: defined for exactly 2 clusters, got " +
                                std::to_string(clusters.centroids.rows()));
  }
  if (samples.cols() != 2) throw std::invalid_argument("bridge_fraction: expects n x 2 samples");
  if (samples.rows() == 0) throw std::invalid_argument("bridge_fraction: no samples");
  Index count = 0;
  for (Index i = 0; i < samples.rows(); ++i) {
    const double d0 = (samples.row(i) - clusters.centroids.row(0)).norm();
    const double d1 = (samples.row(i) - clusters.centroids.row(1)).norm();
    const int c = d0 <= d1 ? 0 : 1;
    const double d = c == 0 ? d0 : d1;
    if (d > tau_mult * clusters.within_std[c]) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(samples.rows());
}

std::pair<Vector, Matrix> latent_stats(const FlowModel& flow, const Dataset& ds) {
  if (ds.val_size() < 1) throw std::invalid_argument("latent_stats: empty validation split");
  const Matrix x = flow.x_std.apply(ds.devices.bottomRows(ds.val_size()));
  const Matrix y = flow.preprocess_spectra(ds.spectra.bottomRows(ds.val_size()));
  auto [z, log_det] = flow.flow_forward_rows(x, flow.cond_features_rows(y));
  (void)log_det;
  const RowVector mean = z.colwise().mean();
  const Matrix centered = z.rowwise() - mean;
  const Matrix cov = centered.transpose() * centered / static_cast<double>(z.rows());
  return {mean.transpose(), cov};
}

Resimulator make_oracle_resim(const OpticsConfig& optics) {
  return [optics](const DeviceParams& d) { return simulate(d, optics); };
}

Resimulator make_surrogate_resim(const ForwardNet& net) {
  return [net](const DeviceParams& d) { return net.predict_spectrum(d); };
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json j;
  j["version"] = version;
  j["target_device"] = vec_to_std(target_device.transpose());
  j["n_samples"] = n_samples;
  j["k"] = k;
  j["centroids"] = matrix_to_json(centroids);
  j["within_std"] = vec_to_std(within_std);
  j["cluster_sizes"] = cluster_sizes;
  j["centroid_err_true"] = vec_to_std(centroid_err_true);
  if (bridge.has_value()) {
    j["bridge_fraction"] = *bridge;
  } else {
    j["bridge_fraction"] = nullptr;
  }
  j["oob_fraction"] = oob_fraction;
  j["mean_mse"] = mean_mse;
  j["band_coverage_min"] = band_coverage_min;
  j["band_coverage_mean"] = band_coverage_mean;
  j["latent_mean"] = vec_to_std(latent_mean);
  j["latent_cov"] = matrix_to_json(latent_cov);
  j["depth_mean"] = matrix_to_json(depth_mean);
  j["depth_std"] = matrix_to_json(depth_std);
  return j;
}

EvaluationReport EvaluationReport::from_json(const nlohmann::json& j) {
  EvaluationReport r;
  r.version = j.at("version").get<int>();
  r.target_device = vec_from_json(j.at("target_device")).transpose();
  r.n_samples = j.at("n_samples").get<Index>();
  r.k = j.at("k").get<int>();
  r.centroids = matrix_from_json(j.at("centroids"));
  r.within_std = vec_from_json(j.at("within_std"));
  r.cluster_sizes = j.at("cluster_sizes").get<std::vector<Index>>();
  r.centroid_err_true = vec_from_json(j.at("centroid_err_true"));
  if (!j.at("bridge_fraction").is_null()) r.bridge = j.at("bridge_fraction").get<double>();
  r.oob_fraction = j.at("oob_fraction").get<double>();
  r.mean_mse = j.at("mean_mse").get<double>();
  r.band_coverage_min = j.at("band_coverage_min").get<double>();
  r.band_coverage_mean = j.at("band_coverage_mean").get<double>();
  r.latent_mean = vec_from_json(j.at("latent_mean"));
  r.latent_cov = matrix_from_json(j.at("latent_cov"));
  r.depth_mean = matrix_from_json(j.at("depth_mean"));
  r.depth_std = matrix_from_json(j.at("depth_std"));
  return r;
}

bool EvaluationReport::operator==(const EvaluationReport& other) const {
  return version == other.version && target_device == other.target_device &&
         n_samples == other.n_samples && k == other.k && centroids == other.centroids &&
         within_std == other.within_std && cluster_sizes == other.cluster_sizes &&
         centroid_err_true == other.centroid_err_true && bridge == other.bridge &&
         oob_fraction == other.oob_fraction && mean_mse == other.mean_mse &&
         band_coverage_min == other.band_coverage_min &&
         band_coverage_mean == other.band_coverage_mean && latent_mean == other.latent_mean &&
         latent_cov == other.latent_cov && depth_mean == other.depth_mean &&
         depth_std == other.depth_std;
}

EvaluationOutput evaluate_samples(const PosteriorSamples& samples, const Spectrum& target,
                                  const DeviceParams& true_device, const Resimulator& respim,
                                  const OpticsConfig& optics, std::uint64_t seed) {
  const Index n = samples.size();
  if (n < 1) throw std::invalid_argument("evaluate_samples: no samples");
  if (target.size() != optics.grid_points) {
    throw std::invalid_argument("evaluate_samples: target length does not match the grid");
  }

  EvaluationOutput out;
  out.samples = samples.devices;
  out.z = samples.z;
  out.target_spectrum = target;
  out.wavelength_grid = optics.wavelength_grid();

  EvaluationReport& rep = out.report;
  rep.target_device = true_device.as_row();
  rep.n_samples = n;

  // Two modes exactly when the two resonances are separated by more than the
  // resonance width scale in period units.
  const double sep = std::abs(true_device.lambda1_nm - true_device.lambda2_nm);
  rep.k = sep > 2.0 * optics.gamma_nm / optics.n_eff ? 2 : 1;

  const Matrix period_plane = samples.devices.leftCols(2);
  const ClusterResult clusters = kmeans(period_plane, rep.k, seed);
  out.cluster_of = clusters.assignment;
  rep.centroids = clusters.centroids;
  rep.within_std = clusters.within_std;
  rep.cluster_sizes = clusters.sizes;

  RowVector t_true(2), t_mirror(2);
  t_true << true_device.lambda1_nm, true_device.lambda2_nm;
  t_mirror << true_device.lambda2_nm, true_device.lambda1_nm;
  rep.centroid_err_true.resize(rep.k);
  if (rep.k == 1) {
    rep.centroid_err_true[0] = (clusters.centroids.row(0) - t_true).norm();
  } else {
    const double straight = (clusters.centroids.row(0) - t_true).norm() +
                            (clusters.centroids.row(1) - t_mirror).norm();
    const double crossed = (clusters.centroids.row(0) - t_mirror).norm() +
                           (clusters.centroids.row(1) - t_true).norm();
    if (straight <= crossed) {
      rep.centroid_err_true[0] = (clusters.centroids.row(0) - t_true).norm();
      rep.centroid_err_true[1] = (clusters.centroids.row(1) - t_mirror).norm();
    } else {
      rep.centroid_err_true[0] = (clusters.centroids.row(0) - t_mirror).norm();
      rep.centroid_err_true[1] = (clusters.centroids.row(1) - t_true).norm();
    }
    rep.bridge = bridge_fraction(period_plane, clusters);
  }

  Index n_in = 0;
  for (char f : samples.in_bounds) n_in += f ? 1 : 0;
  rep.oob_fraction = static_cast<double>(n - n_in) / static_cast<double>(n);
  if (n_in == 0) {
    throw std::runtime_error("evaluate_samples: every sample is out of bounds, nothing to "
                             "re-simulate");
  }

  Matrix resim(n_in, optics.grid_points);
  Index r = 0;
  for (Index i = 0; i < n; ++i) {
    if (!samples.in_bounds[static_cast<std::size_t>(i)]) continue;
    resim.row(r++) = respim(DeviceParams::from_row(samples.devices.row(i))).transpose();
  }

  out.band = percentile_band(resim);
  rep.mean_mse = (out.band.mean - target).array().square().mean();

  double cov_min = 1.0;
  double cov_sum = 0.0;
  for (Index c = 0; c < resim.cols(); ++c) {
    Index inside = 0;
    for (Index i = 0; i < resim.rows(); ++i) {
      if (resim(i, c) >= out.band.lower[c] && resim(i, c) <= out.band.upper[c]) ++inside;
    }
    const double frac = static_cast<double>(inside) / static_cast<double>(resim.rows());
    cov_min = std::min(cov_min, frac);
    cov_sum += frac;
  }
  rep.band_coverage_min = cov_min;
  rep.band_coverage_mean = cov_sum / static_cast<double>(resim.cols());

  const RowVector z_mean = samples.z.colwise().mean();
  const Matrix z_centered = samples.z.rowwise() - z_mean;
  rep.latent_mean = z_mean.transpose();
  rep.latent_cov = z_centered.transpose() * z_centered / static_cast<double>(n);

  rep.depth_mean = Matrix::Zero(rep.k, 2);
  rep.depth_std = Matrix::Zero(rep.k, 2);
  for (int c = 0; c < rep.k; ++c) {
    if (clusters.sizes[static_cast<std::size_t>(c)] == 0) continue;
    const double cnt = static_cast<double>(clusters.sizes[static_cast<std::size_t>(c)]);
    RowVector sum = RowVector::Zero(2);
    for (Index i = 0; i < n; ++i) {
      if (clusters.assignment[static_cast<std::size_t>(i)] == c) {
        sum += samples.devices.row(i).rightCols(2);
      }
    }
    rep.depth_mean.row(c) = sum / cnt;
    RowVector sq = RowVector::Zero(2);
    for (Index i = 0; i < n; ++i) {
      if (clusters.assignment[static_cast<std::size_t>(i)] == c) {
        sq += (samples.devices.row(i).rightCols(2) - rep.depth_mean.row(c))
                  .array()
                  .square()
                  .matrix();
      }
    }
    rep.depth_std.row(c) = (sq / cnt).array().sqrt();
  }
  return out;
}

EvaluationOutput evaluate_inverse(const FlowModel& model, const Spectrum& target,
                                  const DeviceParams& true_device, Index n,
                                  const Resimulator& respim, std::uint64_t seed) {
  Rng rng(seed);
  return evaluate_samples(model.sample_posterior(target, n, rng), target, true_device, respim,
                          model.optics, seed);
}

EvaluationOutput evaluate_inverse(const CvaeModel& model, const Spectrum& target,
                                  const DeviceParams& true_device, Index n,
                                  const Resimulator& respim, std::uint64_t seed) {
  Rng rng(seed);
  return evaluate_samples(model.sample(target, n, rng), target, true_device, respim,
                          model.optics, seed);
}

void export_report(const EvaluationOutput& out, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("export_report: cannot create '" + dir + "': " + ec.message());

  {
    std::ofstream f(fs::path(dir) / "report.json", std::ios::trunc);
    if (!f) throw std::runtime_error("export_report: cannot write report.json in '" + dir + "'");
    f << out.report.to_json().dump(2) << "\n";
  }
  {
    std::ofstream f(fs::path(dir) / "samples.csv", std::ios::trunc);
    if (!f) throw std::runtime_error("export_report: cannot write samples.csv in '" + dir + "'");
    f << "lambda1_nm,lambda2_nm,h1_nm,h2_nm,cluster\n";
    for (Index i = 0; i < out.samples.rows(); ++i) {
      f << fmt17(out.samples(i, 0)) << ',' << fmt17(out.samples(i, 1)) << ','
        << fmt17(out.samples(i, 2)) << ',' << fmt17(out.samples(i, 3)) << ','
        << out.cluster_of[static_cast<std::size_t>(i)] << "\n";
    }
  }
  {
    std::ofstream f(fs::path(dir) / "band.csv", std::ios::trunc);
    if (!f) throw std::runtime_error("export_report: cannot write band.csv in '" + dir + "'");
    f << "wavelength_nm,mean,p2,p98,target\n";
    for (Index i = 0; i < out.wavelength_grid.size(); ++i) {
      f << fmt17(out.wavelength_grid[i]) << ',' << fmt17(out.band.mean[i]) << ','
        << fmt17(out.band.lower[i]) << ',' << fmt17(out.band.upper[i]) << ','
        << fmt17(out.target_spectrum[i]) << "\n";
    }
  }
  {
    std::ofstream f(fs::path(dir) / "latent.csv", std::ios::trunc);
    if (!f) throw std::runtime_error("export_report: cannot write latent.csv in '" + dir + "'");
    f << "z0,z1,z2,z3\n";
    for (Index i = 0; i < out.z.rows(); ++i) {
      f << fmt17(out.z(i, 0)) << ',' << fmt17(out.z(i, 1)) << ',' << fmt17(out.z(i, 2)) << ','
        << fmt17(out.z(i, 3)) << "\n";
    }
  }
}

}  // namespace slitflow
