#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "slitflow/cinn.hpp"
#include "slitflow/optics.hpp"
#include "slitflow/rng.hpp"
#include "slitflow/wavelet.hpp"

using namespace slitflow;

namespace {

struct Fixture {
  OpticsConfig optics;
  Standardizer x_std;
  Standardizer y_std;
  Matrix spectra;  // raw simulated spectra for conditioning
};

Fixture make_fixture(std::uint64_t seed, Index grid_points, bool wavelet) {
  Fixture f;
  f.optics.grid_points = grid_points;
  Rng rng(seed);
  const Index n = 128;
  Matrix x(n, 4);
  f.spectra.resize(n, grid_points);
  for (Index i = 0; i < n; ++i) {
    const DeviceParams d = sample_device(rng, f.optics);
    x.row(i) = d.as_row();
    f.spectra.row(i) = simulate(d, f.optics).transpose();
  }
  f.x_std = Standardizer::fit(x);
  f.y_std = Standardizer::fit(wavelet ? haar_forward_rows(f.spectra) : f.spectra);
  return f;
}

FlowModel small_flow(std::uint64_t seed, bool identity_init, bool wavelet = true) {
  Fixture f = make_fixture(seed, 32, wavelet);
  FlowConfig cfg;
  cfg.spectrum_size = 32;
  cfg.cond_dim = 12;
  cfg.num_blocks = 4;
  cfg.subnet_hidden = 16;
  cfg.cond_hidden = {20};
  cfg.wavelet_cond = wavelet;
  cfg.identity_init = identity_init;
  return FlowModel::create(cfg, f.optics, f.x_std, f.y_std, seed);
}

Vector random_x(Rng& rng) {
  Vector x(4);
  for (Index i = 0; i < 4; ++i) x[i] = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("nll loss mirrors the analytic examples") {
  CHECK(nll_loss({{Vector::Zero(4), 0.0}}) == 0.0);
  Vector z = Vector::Zero(4);
  z[0] = 2.0;
  CHECK(nll_loss({{z, 0.0}}) == 2.0);
  CHECK(nll_loss({{Vector::Zero(4), 3.0}}) == -3.0);
  CHECK(nll_loss({{Vector::Zero(4), 0.0}, {z, 0.0}}) == 1.0);  // batch mean
  CHECK_THROWS_AS(nll_loss({}), std::invalid_argument);
}

TEST_CASE("permutations balance how often each coordinate is transformed") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const FlowModel flow = small_flow(seed, true);
    REQUIRE(flow.perms.size() == 4);
    std::vector<int> active(4, 0);
    std::vector<int> pos = {0, 1, 2, 3};  // where coordinate d currently sits
    for (const std::vector<int>& perm : flow.perms) {
      REQUIRE(perm.size() == 4);
      std::vector<int> sorted = perm;
      std::sort(sorted.begin(), sorted.end());
      CHECK(sorted == std::vector<int>{0, 1, 2, 3});
      // column j of the permuted matrix is column perm[j] of the input
      std::vector<int> inv(4);
      for (int j = 0; j < 4; ++j) inv[perm[static_cast<std::size_t>(j)]] = j;
      for (int d = 0; d < 4; ++d) {
        pos[static_cast<std::size_t>(d)] = inv[static_cast<std::size_t>(
            pos[static_cast<std::size_t>(d)])];
        if (pos[static_cast<std::size_t>(d)] < 2) ++active[static_cast<std::size_t>(d)];
      }
    }
    // four blocks transform two coordinates each: every coordinate exactly twice
    for (int d = 0; d < 4; ++d) CHECK(active[static_cast<std::size_t>(d)] == 2);
  }
}

TEST_CASE("identity-initialized flow is a pure permutation with zero log-det") {
  const FlowModel flow = small_flow(5, true);
  Rng rng(55);
  const Vector c = flow.cond_features(simulate({500.0, 700.0, 50.0, 50.0}, flow.optics));
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = random_x(rng);
    const FlowOutput out = flow.flow_forward(x, c);
    CHECK(out.log_det == 0.0);
    Vector xs = x, zs = out.z;
    std::sort(xs.begin(), xs.end());
    std::sort(zs.begin(), zs.end());
    CHECK((xs - zs).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("coupling blocks invert exactly") {
  const FlowModel flow = small_flow(6, false);
  Rng rng(66);
  const Vector c = flow.cond_features(simulate({500.0, 700.0, 50.0, 50.0}, flow.optics));
  for (int block = 0; block < 4; ++block) {
    for (int trial = 0; trial < 25; ++trial) {
      const Vector x = random_x(rng);
      const auto [u, sum_s] = flow.coupling_forward(block, x, c);
      CHECK(std::isfinite(sum_s));
      const Vector back = flow.coupling_inverse(block, u, c);
      CHECK((back - x).cwiseAbs().maxCoeff() < 1e-12);
      // the passive half passes through untouched
      CHECK(u[2] == x[2]);
      CHECK(u[3] == x[3]);
    }
  }
}

TEST_CASE("clamped scales keep every stretch factor inside (e^-2, e^2)") {
  const FlowModel flow = small_flow(7, false);
  Rng rng(77);
  const Vector c = flow.cond_features(simulate({500.0, 700.0, 50.0, 50.0}, flow.optics));
  for (int trial = 0; trial < 50; ++trial) {
    Vector x = random_x(rng) * 50.0;  // extreme inputs push s_raw far out
    Vector x0 = x, x1 = x;
    x0[0] = 0.0;
    x1[0] = 1.0;
    const Vector u0 = flow.coupling_forward(0, x0, c).first;
    const Vector u1 = flow.coupling_forward(0, x1, c).first;
    const double stretch = u1[0] - u0[0];  // exp(s) for coordinate 0
    CHECK(stretch > std::exp(-2.0));
    CHECK(stretch < std::exp(2.0));
  }
}

TEST_CASE("coupling log-det matches the finite-difference jacobian") {
  const FlowModel flow = small_flow(8, false);
  Rng rng(88);
  const double eps = 1e-5;
  for (int trial = 0; trial < 25; ++trial) {
    const Vector x = random_x(rng);
    Vector yv(32);
    for (Index i = 0; i < 32; ++i) yv[i] = rng.uniform01();
    const Vector c = flow.cond_features(yv);
    const int block = trial % 4;
    const double sum_s = flow.coupling_forward(block, x, c).second;

    Matrix jac(4, 4);
    for (Index j = 0; j < 4; ++j) {
      Vector hi = x, lo = x;
      hi[j] += eps;
      lo[j] -= eps;
      jac.col(j) =
          (flow.coupling_forward(block, hi, c).first - flow.coupling_forward(block, lo, c).first) /
          (2 * eps);
    }
    const double fd_logdet = std::log(std::abs(jac.determinant()));
    CHECK(std::abs(fd_logdet - sum_s) / std::max(std::abs(fd_logdet), 1e-6) < 1e-5);
  }
}

TEST_CASE("full flow inverts to 1e-8 over 1000 random cases") {
  const FlowModel flow = small_flow(9, false);
  Rng rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Vector x = random_x(rng);
    Vector yv(32);
    for (Index i = 0; i < 32; ++i) yv[i] = rng.uniform01();
    const Vector c = flow.cond_features(yv);
    const FlowOutput out = flow.flow_forward(x, c);
    const Vector back = flow.flow_inverse(out.z, c);
    worst = std::max(worst, (back - x).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("total log-det matches the end-to-end finite-difference jacobian") {
  const FlowModel flow = small_flow(10, false);
  Rng rng(110);
  const double eps = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x = random_x(rng);
    Vector yv(32);
    for (Index i = 0; i < 32; ++i) yv[i] = rng.uniform01();
    const Vector c = flow.cond_features(yv);
    const double analytic = flow.flow_forward(x, c).log_det;

    Matrix jac(4, 4);
    for (Index j = 0; j < 4; ++j) {
      Vector hi = x, lo = x;
      hi[j] += eps;
      lo[j] -= eps;
      jac.col(j) = (flow.flow_forward(hi, c).z - flow.flow_forward(lo, c).z) / (2 * eps);
    }
    const double fd = std::log(std::abs(jac.determinant()));
    CHECK(std::abs(fd - analytic) / std::max(std::abs(fd), 1e-6) < 1e-5);
  }
}

TEST_CASE("row-wise flow agrees with the single-vector path") {
  const FlowModel flow = small_flow(11, false);
  Rng rng(111);
  Matrix x(6, 4);
  Matrix spectra(6, 32);
  for (Index i = 0; i < 6; ++i) {
    x.row(i) = random_x(rng).transpose();
    for (Index j = 0; j < 32; ++j) spectra(i, j) = rng.uniform01();
  }
  const Matrix y_prep = flow.preprocess_spectra(spectra);
  const Matrix c_rows = flow.cond_features_rows(y_prep);
  const auto [z_rows, logdets] = flow.flow_forward_rows(x, c_rows);
  for (Index i = 0; i < 6; ++i) {
    const FlowOutput one = flow.flow_forward(x.row(i).transpose(), c_rows.row(i).transpose());
    CHECK((z_rows.row(i).transpose() - one.z).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(logdets[i] == doctest::Approx(one.log_det).epsilon(1e-12));
  }
  const Matrix back = flow.flow_inverse_rows(z_rows, c_rows);
  CHECK((back - x).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("preprocessing composes the wavelet and the standardizer") {
  const FlowModel flow = small_flow(12, true, true);
  Rng rng(112);
  Matrix spectra(3, 32);
  for (Index i = 0; i < spectra.size(); ++i) spectra(i / 32, i % 32) = rng.uniform01();
  const Matrix manual = flow.y_std.apply(haar_forward_rows(spectra));
  CHECK((flow.preprocess_spectra(spectra) - manual).cwiseAbs().maxCoeff() == 0.0);

  const FlowModel raw_flow = small_flow(12, true, false);
  const Matrix manual_raw = raw_flow.y_std.apply(spectra);
  CHECK((raw_flow.preprocess_spectra(spectra) - manual_raw).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("taped loss equals the plain loss") {
  FlowModel flow = small_flow(13, false);
  Rng rng(113);
  Matrix x(5, 4);
  Matrix spectra(5, 32);
  for (Index i = 0; i < 5; ++i) {
    x.row(i) = random_x(rng).transpose();
    for (Index j = 0; j < 32; ++j) spectra(i, j) = rng.uniform01();
  }
  const Matrix y_prep = flow.preprocess_spectra(spectra);
  Tape tape(&flow.params);
  const Var loss = flow.loss(tape, x, y_prep);
  CHECK(tape.value(loss)(0, 0) == doctest::Approx(flow.loss_plain(x, y_prep)).epsilon(1e-12));
}

TEST_CASE("plain loss equals nll of the per-row flow outputs") {
  const FlowModel flow = small_flow(14, false);
  Rng rng(114);
  Matrix x(4, 4);
  Matrix spectra(4, 32);
  for (Index i = 0; i < 4; ++i) {
    x.row(i) = random_x(rng).transpose();
    for (Index j = 0; j < 32; ++j) spectra(i, j) = rng.uniform01();
  }
  const Matrix y_prep = flow.preprocess_spectra(spectra);
  const Matrix c_rows = flow.cond_features_rows(y_prep);
  std::vector<FlowOutput> outs;
  for (Index i = 0; i < 4; ++i) {
    outs.push_back(flow.flow_forward(x.row(i).transpose(), c_rows.row(i).transpose()));
  }
  CHECK(flow.loss_plain(x, y_prep) == doctest::Approx(nll_loss(outs)).epsilon(1e-12));
}

TEST_CASE("posterior sampling respects seeding and bounds flags") {
  const FlowModel flow = small_flow(15, false);
  const Spectrum target = simulate({550.0, 700.0, 60.0, 80.0}, flow.optics);

  Rng r1(9), r2(9), r3(10);
  const PosteriorSamples a = flow.sample_posterior(target, 200, r1);
  const PosteriorSamples b = flow.sample_posterior(target, 200, r2);
  const PosteriorSamples c = flow.sample_posterior(target, 200, r3);
  CHECK((a.devices - b.devices).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.devices - c.devices).cwiseAbs().maxCoeff() > 0.0);
  for (Index i = 0; i < a.size(); ++i) {
    CHECK(int(a.in_bounds[static_cast<std::size_t>(i)]) ==
          int(device_in_bounds(DeviceParams::from_row(a.devices.row(i)), flow.optics)));
  }

  Rng r4(11);
  const PosteriorSamples empty = flow.sample_posterior(target, 0, r4);
  CHECK(empty.size() == 0);
  CHECK_THROWS_AS(flow.sample_posterior(target, -1, r4), std::invalid_argument);
}

TEST_CASE("identity-initialized sampling is white in the standardized space") {
  const FlowModel flow = small_flow(16, true);
  const Spectrum target = simulate({550.0, 700.0, 60.0, 80.0}, flow.optics);
  Rng rng(16);
  const Index n = 20000;
  const PosteriorSamples s = flow.sample_posterior(target, n, rng);

  // the flow only permutes, so standardized samples keep the latent norms
  Matrix x_norm(n, 4);
  for (Index i = 0; i < n; ++i) x_norm.row(i) = flow.x_std.apply_row(s.devices.row(i));
  for (Index i = 0; i < 50; ++i) {
    CHECK(x_norm.row(i).norm() == doctest::Approx(s.z.row(i).norm()).epsilon(1e-12));
  }

  const RowVector mean = x_norm.colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() < 0.05);
  const Matrix centered = x_norm.rowwise() - mean;
  const Matrix cov = centered.transpose() * centered / double(n);
  CHECK((cov - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("flow checkpoints roundtrip exactly") {
  const std::string path = "flow_roundtrip.ckpt";
  const FlowModel flow = small_flow(17, false);
  flow.save(path);
  const FlowModel back = FlowModel::load(path);
  CHECK(back.perms == flow.perms);
  CHECK(back.config.num_blocks == flow.config.num_blocks);
  CHECK(back.config.wavelet_cond == flow.config.wavelet_cond);
  CHECK(back.x_std == flow.x_std);
  CHECK(back.y_std == flow.y_std);

  Rng rng(117);
  const Vector x = random_x(rng);
  Vector yv(32);
  for (Index i = 0; i < 32; ++i) yv[i] = rng.uniform01();
  const Vector c1 = flow.cond_features(yv);
  const Vector c2 = back.cond_features(yv);
  CHECK((c1 - c2).cwiseAbs().maxCoeff() == 0.0);
  const FlowOutput o1 = flow.flow_forward(x, c1);
  const FlowOutput o2 = back.flow_forward(x, c2);
  CHECK((o1.z - o2.z).cwiseAbs().maxCoeff() == 0.0);
  CHECK(o1.log_det == o2.log_det);
  std::filesystem::remove(path);
}

TEST_CASE("flow config json roundtrip") {
  FlowConfig cfg;
  cfg.num_blocks = 3;
  cfg.cond_hidden = {64, 32};
  cfg.wavelet_cond = false;
  cfg.identity_init = false;
  const FlowConfig back = FlowConfig::from_json(cfg.to_json());
  CHECK(back.num_blocks == 3);
  CHECK(back.cond_hidden == std::vector<Index>{64, 32});
  CHECK(back.wavelet_cond == false);
  CHECK(back.identity_init == false);
}
