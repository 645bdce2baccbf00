#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "slitflow/rng.hpp"
#include "slitflow/types.hpp"

namespace slitflow {

/// One device: two grating periodicities and two groove depths, nm.
struct DeviceParams {
  double lambda1_nm = 0.0;
  double lambda2_nm = 0.0;
  double h1_nm = 0.0;
  double h2_nm = 0.0;

  RowVector as_row() const;
  static DeviceParams from_row(const RowVector& v);
  /// The physically equivalent device with both gratings swapped.
  DeviceParams mirrored() const { return {lambda2_nm, lambda1_nm, h2_nm, h1_nm}; }
};

struct OpticsConfig {
  double grid_min_nm = 400.0;
  double grid_max_nm = 900.0;
  Index grid_points = 128;
  double lambda_min_nm = 450.0;
  double lambda_max_nm = 800.0;
  double h_min_nm = 20.0;
  double h_max_nm = 100.0;
  double n_eff = 1.05;      // maps periodicity to resonance wavelength
  double gamma_nm = 20.0;   // Lorentzian half-width
  double t_bg = 0.02;       // background transmission through the bare slit
  // Fixed geometry, recorded for documentation; the transmission model does
  // not depend on them.
  double slit_width_nm = 150.0;
  double film_thickness_nm = 200.0;
  double ambient_index = 1.0;
  double duty_cycle = 0.5;

  void validate() const;
  Vector wavelength_grid() const;

  nlohmann::json to_json() const;
  static OpticsConfig from_json(const nlohmann::json& j);
  bool operator==(const OpticsConfig&) const = default;
};

bool device_in_bounds(const DeviceParams& d, const OpticsConfig& cfg);

/// Transmission at one wavelength:
///   T = t_bg + (1-t_bg) * 1/2 * [g(lambda;L1,h1) + g(lambda;L2,h2)],
///   g(lambda;L,h) = (h/h_max) * gamma^2 / ((lambda - n_eff*L)^2 + gamma^2).
double transmission_at(const DeviceParams& d, double lambda_nm, const OpticsConfig& cfg);

/// Transmission sampled on the uniform wavelength grid. Errors on devices
/// outside the configured bounds, naming the violated bound.
Spectrum simulate(const DeviceParams& d, const OpticsConfig& cfg);

/// Each component uniform over its bound interval, drawn in field order.
DeviceParams sample_device(Rng& rng, const OpticsConfig& cfg);

struct Dataset {
  Matrix devices;      // n x 4, columns lambda1,lambda2,h1,h2
  Matrix spectra;      // n x M
  Index split_train = 0;  // first split_train rows are the training split
  OpticsConfig optics;
  std::uint64_t seed = 0;

  Index size() const { return devices.rows(); }
  Index val_size() const { return size() - split_train; }
  DeviceParams device(Index i) const { return DeviceParams::from_row(devices.row(i)); }
};

/// n devices sampled i.i.d. with per-record substreams of `seed`, simulated,
/// and split 3:1 train:validation in generation order.
Dataset generate_dataset(Index n, std::uint64_t seed, const OpticsConfig& cfg);

/// Directory layout: data.csv (header lambda1_nm,lambda2_nm,h1_nm,h2_nm,
/// T0000..T<M-1>, 17 significant digits) + meta.json sidecar.
void dataset_write(const Dataset& ds, const std::string& dir);
Dataset dataset_read(const std::string& dir);

}  // namespace slitflow
