#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "slitflow/optics.hpp"
#include "slitflow/rng.hpp"

using namespace slitflow;

TEST_CASE("wavelength grid spans 400-900 nm with 128 points") {
  const OpticsConfig optics;
  const Vector grid = optics.wavelength_grid();
  CHECK(grid.size() == 128);
  CHECK(grid[0] == 400.0);
  CHECK(grid[127] == 900.0);
  CHECK(grid[1] - grid[0] == doctest::Approx(500.0 / 127.0).epsilon(1e-14));
}

TEST_CASE("pointwise transmission hits the hand-computed resonance values") {
  const OpticsConfig optics;
  // on-resonance full-depth gratings: background + full resonant term
  const DeviceParams full{600.0, 600.0, 100.0, 100.0};
  CHECK(transmission_at(full, 630.0, optics) == doctest::Approx(1.0).epsilon(1e-12));
  // same resonance at minimum depth: 0.02 + 0.98 * 0.2 = 0.216
  const DeviceParams shallow{600.0, 600.0, 20.0, 20.0};
  CHECK(transmission_at(shallow, 630.0, optics) == doctest::Approx(0.216).epsilon(1e-12));
}

TEST_CASE("mirror-swapped devices produce identical spectra") {
  const OpticsConfig optics;
  Rng rng(31);
  for (int i = 0; i < 10000; ++i) {
    const DeviceParams d = sample_device(rng, optics);
    const DeviceParams m = d.mirrored();
    const Spectrum a = simulate(d, optics);
    const Spectrum b = simulate(m, optics);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("asymmetric devices show two local transmission maxima") {
  const OpticsConfig optics;
  const DeviceParams d{500.0, 750.0, 90.0, 90.0};
  const Spectrum t = simulate(d, optics);
  int maxima = 0;
  for (Index i = 1; i + 1 < t.size(); ++i) {
    if (t[i] > t[i - 1] && t[i] > t[i + 1]) ++maxima;
  }
  CHECK(maxima == 2);
  CHECK(t.minCoeff() >= 0.0);
  CHECK(t.maxCoeff() <= 1.0);
}

TEST_CASE("simulate rejects out-of-bounds devices by component name") {
  const OpticsConfig optics;
  CHECK(device_in_bounds({450.0, 800.0, 20.0, 100.0}, optics));
  CHECK(!device_in_bounds({449.0, 800.0, 20.0, 100.0}, optics));
  CHECK(!device_in_bounds({450.0, 800.0, 20.0, 101.0}, optics));
  CHECK_THROWS_WITH_AS(simulate({400.0, 600.0, 50.0, 50.0}, optics),
                       doctest::Contains("lambda1_nm"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(simulate({600.0, 600.0, 50.0, 110.0}, optics),
                       doctest::Contains("h2_nm"), std::invalid_argument);
}

TEST_CASE("sampled devices are uniform over the design box") {
  const OpticsConfig optics;
  Rng rng(17);
  const int n = 100000;
  double sum_l1 = 0.0, sum_l2 = 0.0, sum_h1 = 0.0, sum_h2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const DeviceParams d = sample_device(rng, optics);
    CHECK(device_in_bounds(d, optics));
    sum_l1 += d.lambda1_nm;
    sum_l2 += d.lambda2_nm;
    sum_h1 += d.h1_nm;
    sum_h2 += d.h2_nm;
  }
  CHECK(sum_l1 / n == doctest::Approx(625.0).epsilon(0.01));
  CHECK(sum_l2 / n == doctest::Approx(625.0).epsilon(0.01));
  CHECK(sum_h1 / n == doctest::Approx(60.0).epsilon(0.01));
  CHECK(sum_h2 / n == doctest::Approx(60.0).epsilon(0.01));
}

TEST_CASE("dataset split holds back a quarter for validation") {
  Rng unused(0);
  const Dataset big = generate_dataset(8, 3, OpticsConfig{});
  CHECK(big.split_train == 6);
  CHECK(big.val_size() == 2);

  const Dataset tiny = generate_dataset(4, 3, OpticsConfig{});
  CHECK(tiny.split_train == 3);
  CHECK(tiny.val_size() == 1);

  // 60000 -> 45000/15000 is the reference split shape
  CHECK(60000 - 60000 / 4 == 45000);
  CHECK_THROWS_AS(generate_dataset(3, 3, OpticsConfig{}), std::invalid_argument);
}

TEST_CASE("dataset generation is per-record deterministic") {
  const Dataset a = generate_dataset(32, 5, OpticsConfig{});
  const Dataset b = generate_dataset(32, 5, OpticsConfig{});
  CHECK((a.devices - b.devices).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.spectra - b.spectra).cwiseAbs().maxCoeff() == 0.0);
  // record i does not depend on how many records precede it
  const Dataset c = generate_dataset(8, 5, OpticsConfig{});
  CHECK((a.devices.topRows(8) - c.devices).cwiseAbs().maxCoeff() == 0.0);

  const Dataset other = generate_dataset(32, 6, OpticsConfig{});
  CHECK((a.devices - other.devices).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("dataset files roundtrip exactly") {
  const std::string dir = "ds_roundtrip";
  const Dataset ds = generate_dataset(16, 9, OpticsConfig{});
  dataset_write(ds, dir);
  const Dataset back = dataset_read(dir);
  CHECK(back.size() == 16);
  CHECK(back.split_train == 12);
  CHECK(back.seed == 9);
  CHECK(back.optics == ds.optics);
  CHECK((back.devices - ds.devices).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.spectra - ds.spectra).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset reader names the offending row") {
  const std::string dir = "ds_bad";
  const Dataset ds = generate_dataset(4, 9, OpticsConfig{});
  dataset_write(ds, dir);

  // drop one field from the third data row (line 4)
  {
    std::ifstream in(dir + "/data.csv");
    std::string all, line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno == 4) line = line.substr(0, line.rfind(','));
      all += line + "\n";
    }
    in.close();
    std::ofstream out(dir + "/data.csv", std::ios::trunc);
    out << all;
  }
  CHECK_THROWS_WITH_AS(dataset_read(dir), doctest::Contains("line 4"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset reader rejects a header from a different grid") {
  const std::string dir = "ds_hdr";
  OpticsConfig small;
  small.grid_points = 64;
  const Dataset ds = generate_dataset(4, 9, small);
  dataset_write(ds, dir);
  // sidecar now claims the default 128-point grid
  {
    std::ifstream in(dir + "/meta.json");
    nlohmann::json meta;
    in >> meta;
    in.close();
    meta["optics"]["grid_points"] = 128;
    std::ofstream out(dir + "/meta.json", std::ios::trunc);
    out << meta.dump(2) << "\n";
  }
  CHECK_THROWS_WITH_AS(dataset_read(dir), doctest::Contains("line 1"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("optics config validation catches bad grids and bounds") {
  OpticsConfig bad;
  bad.grid_points = 100;  // not a power of two
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = OpticsConfig{};
  bad.lambda_min_nm = 900.0;  // resonance outside the grid
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = OpticsConfig{};
  bad.t_bg = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_NOTHROW(OpticsConfig{}.validate());
}

TEST_CASE("optics config json roundtrip preserves every field") {
  OpticsConfig optics;
  optics.gamma_nm = 25.0;
  optics.grid_points = 64;
  const OpticsConfig back = OpticsConfig::from_json(optics.to_json());
  CHECK(back == optics);
}
