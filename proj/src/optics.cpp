#include "slitflow/optics.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <system_error>

namespace slitflow {

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string spectrum_header(Index m) {
  std::string h = "lambda1_nm,lambda2_nm,h1_nm,h2_nm";
  for (Index k = 0; k < m; ++k) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "T%04ld", static_cast<long>(k));
    h += ",";
    h += buf;
  }
  return h;
}

void check_bound(const char* name, double value, double lo, double hi) {
  if (value < lo || value > hi) {
    throw std::invalid_argument("simulate: " + std::string(name) + "=" + fmt17(value) +
                                " outside [" + fmt17(lo) + ", " + fmt17(hi) + "]");
  }
}

double parse_double(std::string_view field, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw std::runtime_error("dataset_read: bad float '" + std::string(field) + "' at " + where);
  }
  return v;
}

}  // namespace

RowVector DeviceParams::as_row() const {
  RowVector v(4);
  v << lambda1_nm, lambda2_nm, h1_nm, h2_nm;
  return v;
}

DeviceParams DeviceParams::from_row(const RowVector& v) {
  if (v.size() != 4) {
    throw std::invalid_argument("DeviceParams::from_row: expected 4 values, got " +
                                std::to_string(v.size()));
  }
  return {v[0], v[1], v[2], v[3]};
}

void OpticsConfig::validate() const {
  if (!(grid_min_nm < grid_max_nm)) {
    throw std::invalid_argument("OpticsConfig: grid_min_nm must be below grid_max_nm");
  }
  if (grid_points < 2 || (grid_points & (grid_points - 1)) != 0) {
    throw std::invalid_argument("OpticsConfig: grid_points must be a power of two >= 2, got " +
                                std::to_string(grid_points));
  }
  if (!(lambda_min_nm < lambda_max_nm) || !(h_min_nm < h_max_nm)) {
    throw std::invalid_argument("OpticsConfig: parameter bounds must be nonempty intervals");
  }
  if (h_min_nm < 0.0) throw std::invalid_argument("OpticsConfig: h_min_nm must be >= 0");
  if (gamma_nm <= 0.0) throw std::invalid_argument("OpticsConfig: gamma_nm must be positive");
  if (t_bg < 0.0 || t_bg >= 1.0) throw std::invalid_argument("OpticsConfig: t_bg must be in [0,1)");
  if (n_eff * lambda_max_nm > grid_max_nm || n_eff * lambda_min_nm < grid_min_nm) {
    throw std::invalid_argument(
        "OpticsConfig: resonance range [" + fmt17(n_eff * lambda_min_nm) + ", " +
        fmt17(n_eff * lambda_max_nm) + "] leaves the wavelength grid [" + fmt17(grid_min_nm) +
        ", " + fmt17(grid_max_nm) + "]");
  }
}

Vector OpticsConfig::wavelength_grid() const {
  Vector grid(grid_points);
  const double step = (grid_max_nm - grid_min_nm) / static_cast<double>(grid_points - 1);
  for (Index k = 0; k < grid_points; ++k) {
    grid[k] = grid_min_nm + static_cast<double>(k) * step;
  }
  return grid;
}

nlohmann::json OpticsConfig::to_json() const {
  return {{"grid_min_nm", grid_min_nm},
          {"grid_max_nm", grid_max_nm},
          {"grid_points", grid_points},
          {"lambda_min_nm", lambda_min_nm},
          {"lambda_max_nm", lambda_max_nm},
          {"h_min_nm", h_min_nm},
          {"h_max_nm", h_max_nm},
          {"n_eff", n_eff},
          {"gamma_nm", gamma_nm},
          {"t_bg", t_bg},
          {"slit_width_nm", slit_width_nm},
          {"film_thickness_nm", film_thickness_nm},
          {"ambient_index", ambient_index},
          {"duty_cycle", duty_cycle}};
}

OpticsConfig OpticsConfig::from_json(const nlohmann::json& j) {
  OpticsConfig cfg;
  cfg.grid_min_nm = j.at("grid_min_nm").get<double>();
  cfg.grid_max_nm = j.at("grid_max_nm").get<double>();
  cfg.grid_points = j.at("grid_points").get<Index>();
  cfg.lambda_min_nm = j.at("lambda_min_nm").get<double>();
  cfg.lambda_max_nm = j.at("lambda_max_nm").get<double>();
  cfg.h_min_nm = j.at("h_min_nm").get<double>();
  cfg.h_max_nm = j.at("h_max_nm").get<double>();
  cfg.n_eff = j.at("n_eff").get<double>();
  cfg.gamma_nm = j.at("gamma_nm").get<double>();
  cfg.t_bg = j.at("t_bg").get<double>();
  cfg.slit_width_nm = j.at("slit_width_nm").get<double>();
  cfg.film_thickness_nm = j.at("film_thickness_nm").get<double>();
  cfg.ambient_index = j.at("ambient_index").get<double>();
  cfg.duty_cycle = j.at("duty_cycle").get<double>();
  cfg.validate();
  return cfg;
}

bool device_in_bounds(const DeviceParams& d, const OpticsConfig& cfg) {
  return d.lambda1_nm >= cfg.lambda_min_nm && d.lambda1_nm <= cfg.lambda_max_nm &&
         d.lambda2_nm >= cfg.lambda_min_nm && d.lambda2_nm <= cfg.lambda_max_nm &&
         d.h1_nm >= cfg.h_min_nm && d.h1_nm <= cfg.h_max_nm && d.h2_nm >= cfg.h_min_nm &&
         d.h2_nm <= cfg.h_max_nm;
}

double transmission_at(const DeviceParams& d, double lambda_nm, const OpticsConfig& cfg) {
  const double g2 = cfg.gamma_nm * cfg.gamma_nm;
  const double d1 = lambda_nm - cfg.n_eff * d.lambda1_nm;
  const double d2 = lambda_nm - cfg.n_eff * d.lambda2_nm;
  const double g_1 = (d.h1_nm / cfg.h_max_nm) * g2 / (d1 * d1 + g2);
  const double g_2 = (d.h2_nm / cfg.h_max_nm) * g2 / (d2 * d2 + g2);
  return cfg.t_bg + (1.0 - cfg.t_bg) * 0.5 * (g_1 + g_2);
}

Spectrum simulate(const DeviceParams& d, const OpticsConfig& cfg) {
  check_bound("lambda1_nm", d.lambda1_nm, cfg.lambda_min_nm, cfg.lambda_max_nm);
  check_bound("lambda2_nm", d.lambda2_nm, cfg.lambda_min_nm, cfg.lambda_max_nm);
  check_bound("h1_nm", d.h1_nm, cfg.h_min_nm, cfg.h_max_nm);
  check_bound("h2_nm", d.h2_nm, cfg.h_min_nm, cfg.h_max_nm);
  const Vector grid = cfg.wavelength_grid();
  Spectrum t(grid.size());
  for (Index k = 0; k < grid.size(); ++k) {
    t[k] = transmission_at(d, grid[k], cfg);
  }
  return t;
}

DeviceParams sample_device(Rng& rng, const OpticsConfig& cfg) {
  DeviceParams d;
  d.lambda1_nm = rng.uniform(cfg.lambda_min_nm, cfg.lambda_max_nm);
  d.lambda2_nm = rng.uniform(cfg.lambda_min_nm, cfg.lambda_max_nm);
  d.h1_nm = rng.uniform(cfg.h_min_nm, cfg.h_max_nm);
  d.h2_nm = rng.uniform(cfg.h_min_nm, cfg.h_max_nm);
  return d;
}

Dataset generate_dataset(Index n, std::uint64_t seed, const OpticsConfig& cfg) {
  if (n < 4) {
    throw std::invalid_argument("generate_dataset: need n >= 4 for a 3:1 split, got " +
                                std::to_string(n));
  }
  cfg.validate();
  Dataset ds;
  ds.optics = cfg;
  ds.seed = seed;
  ds.split_train = n - n / 4;
  ds.devices.resize(n, 4);
  ds.spectra.resize(n, cfg.grid_points);
  for (Index i = 0; i < n; ++i) {
    Rng rec_rng(Rng::fold(seed, static_cast<std::uint64_t>(i)));
    const DeviceParams d = sample_device(rec_rng, cfg);
    ds.devices.row(i) = d.as_row();
    ds.spectra.row(i) = simulate(d, cfg).transpose();
  }
  return ds;
}

void dataset_write(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json meta = {{"version", 1},
                         {"seed", ds.seed},
                         {"n", ds.size()},
                         {"split_train", ds.split_train},
                         {"optics", ds.optics.to_json()}};
  {
    std::ofstream mf(fs::path(dir) / "meta.json", std::ios::trunc);
    if (!mf) throw std::runtime_error("dataset_write: cannot write meta.json in '" + dir + "'");
    mf << meta.dump(2) << "\n";
  }

  std::ofstream f(fs::path(dir) / "data.csv", std::ios::trunc);
  if (!f) throw std::runtime_error("dataset_write: cannot write data.csv in '" + dir + "'");
  f << spectrum_header(ds.spectra.cols()) << "\n";
  std::string line;
  for (Index i = 0; i < ds.size(); ++i) {
    line.clear();
    for (Index c = 0; c < 4; ++c) {
      if (c > 0) line += ',';
      line += fmt17(ds.devices(i, c));
    }
    for (Index k = 0; k < ds.spectra.cols(); ++k) {
      line += ',';
      line += fmt17(ds.spectra(i, k));
    }
    line += '\n';
    f << line;
  }
  if (!f) throw std::runtime_error("dataset_write: write to data.csv failed");
}

Dataset dataset_read(const std::string& dir) {
  namespace fs = std::filesystem;
  nlohmann::json meta;
  {
    std::ifstream mf(fs::path(dir) / "meta.json");
    if (!mf) throw std::runtime_error("dataset_read: no meta.json in '" + dir + "'");
    mf >> meta;
  }
  if (meta.at("version").get<int>() != 1) {
    throw std::runtime_error("dataset_read: unsupported dataset version");
  }
  Dataset ds;
  ds.optics = OpticsConfig::from_json(meta.at("optics"));
  ds.seed = meta.at("seed").get<std::uint64_t>();
  const Index n = meta.at("n").get<Index>();
  ds.split_train = meta.at("split_train").get<Index>();
  if (n < 1 || ds.split_train < 1 || ds.split_train > n) {
    throw std::runtime_error("dataset_read: meta.json has an invalid n/split_train pair");
  }
  const Index m = ds.optics.grid_points;

  std::ifstream f(fs::path(dir) / "data.csv");
  if (!f) throw std::runtime_error("dataset_read: no data.csv in '" + dir + "'");
  std::string header;
  if (!std::getline(f, header)) {
    throw std::runtime_error("dataset_read: data.csv is empty (line 1)");
  }
  if (header != spectrum_header(m)) {
    throw std::runtime_error(
        "dataset_read: data.csv header does not match the sidecar's " + std::to_string(m) +
        "-point grid (line 1)");
  }

  ds.devices.resize(n, 4);
  ds.spectra.resize(n, m);
  std::string line;
  for (Index i = 0; i < n; ++i) {
    const std::string where = "row " + std::to_string(i) + " (line " + std::to_string(i + 2) + ")";
    if (!std::getline(f, line)) {
      throw std::runtime_error("dataset_read: file ends early at " + where);
    }
    Index field = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      const std::string_view token(line.data() + pos, comma - pos);
      if (field >= 4 + m) {
        throw std::runtime_error("dataset_read: too many columns at " + where);
      }
      const double v = parse_double(token, where);
      if (field < 4) {
        ds.devices(i, field) = v;
      } else {
        ds.spectra(i, field - 4) = v;
      }
      ++field;
      pos = comma + 1;
    }
    if (field != 4 + m) {
      throw std::runtime_error("dataset_read: expected " + std::to_string(4 + m) +
                               " columns, found " + std::to_string(field) + " at " + where);
    }
  }
  if (std::getline(f, line) && !line.empty()) {
    throw std::runtime_error("dataset_read: trailing data beyond the " + std::to_string(n) +
                             " rows declared in meta.json");
  }
  return ds;
}

}  // namespace slitflow
