#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "slitflow/adam.hpp"
#include "slitflow/checkpoint.hpp"
#include "slitflow/forward_net.hpp"
#include "slitflow/optics.hpp"
#include "slitflow/rng.hpp"
#include "slitflow/tape.hpp"

using namespace slitflow;

namespace {

ForwardNet tiny_net(std::uint64_t seed) {
  OpticsConfig optics;
  optics.grid_points = 16;
  Rng rng(seed);
  Matrix x(64, 4);
  for (Index i = 0; i < x.rows(); ++i) {
    const DeviceParams d = sample_device(rng, optics);
    x.row(i) = d.as_row();
  }
  const Standardizer x_std = Standardizer::fit(x);
  ForwardConfig cfg;
  cfg.hidden_width = 24;
  cfg.hidden_layers = 3;
  return ForwardNet::create(cfg, optics, x_std, seed);
}

}  // namespace

TEST_CASE("residue is the max absolute pointwise deviation") {
  Spectrum a = Spectrum::Constant(8, 0.5);
  Spectrum b = a;
  CHECK(residue(a, b) == 0.0);
  b[3] += 0.05;
  b[5] -= 0.01;
  CHECK(residue(a, b) == doctest::Approx(0.05).epsilon(1e-15));
  Spectrum c(4);
  CHECK_THROWS_AS(residue(a, c), std::invalid_argument);
}

TEST_CASE("prediction shapes follow the configured grid") {
  const ForwardNet net = tiny_net(3);
  const Matrix x_norm = Matrix::Zero(5, 4);
  const Matrix raw = net.predict_raw(x_norm);
  CHECK(raw.rows() == 5);
  CHECK(raw.cols() == 16);
}

TEST_CASE("reported spectra are clamped to physical transmission") {
  ForwardNet net = tiny_net(4);
  // force an output bias far outside [0,1]
  net.params.value(net.net.bias_name(net.net.num_layers() - 1)).setConstant(7.0);
  const Spectrum t = net.predict_spectrum({600.0, 600.0, 50.0, 50.0});
  CHECK(t.maxCoeff() <= 1.0);
  CHECK(t.minCoeff() >= 0.0);
  net.params.value(net.net.bias_name(net.net.num_layers() - 1)).setConstant(-7.0);
  CHECK(net.predict_spectrum({600.0, 600.0, 50.0, 50.0}).minCoeff() >= 0.0);
}

TEST_CASE("single-device prediction rejects out-of-bounds inputs") {
  const ForwardNet net = tiny_net(5);
  CHECK_THROWS_AS(net.predict_spectrum({100.0, 600.0, 50.0, 50.0}), std::invalid_argument);
}

TEST_CASE("mean-output init makes the net predict the target column means") {
  ForwardNet net = tiny_net(11);
  Rng rng(11);
  Matrix y(10, 16);
  for (Index i = 0; i < y.rows(); ++i) {
    for (Index j = 0; j < y.cols(); ++j) y(i, j) = rng.uniform(0.0, 1.0);
  }
  net.init_output_mean(y);
  const Matrix raw = net.predict_raw(Matrix::Random(7, 4));
  const Matrix mean = y.colwise().mean();
  for (Index i = 0; i < raw.rows(); ++i) {
    CHECK((raw.row(i) - mean.row(0)).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  }
  Matrix wrong_width(10, 8);
  CHECK_THROWS_AS(net.init_output_mean(wrong_width), std::invalid_argument);
}

TEST_CASE("taped loss equals the plain loss") {
  ForwardNet net = tiny_net(6);
  Rng rng(60);
  Matrix x_norm(7, 4), y(7, 16);
  for (Index i = 0; i < x_norm.size(); ++i) x_norm(i / 4, i % 4) = rng.normal();
  for (Index i = 0; i < y.size(); ++i) y(i / 16, i % 16) = rng.uniform01();

  Tape tape(&net.params);
  const Var loss = net.loss(tape, x_norm, y);
  CHECK(tape.value(loss)(0, 0) == doctest::Approx(net.loss_plain(x_norm, y)).epsilon(1e-14));
}

TEST_CASE("checkpoint roundtrip reproduces predictions exactly") {
  const std::string path = "fwd_roundtrip.ckpt";
  const ForwardNet net = tiny_net(7);
  net.save(path);
  const ForwardNet back = ForwardNet::load(path);
  CHECK(back.config.hidden_width == net.config.hidden_width);
  CHECK(back.optics == net.optics);
  CHECK(back.x_std == net.x_std);
  CHECK(back.seed == net.seed);

  Rng rng(70);
  Matrix x_norm(9, 4);
  for (Index i = 0; i < x_norm.size(); ++i) x_norm(i / 4, i % 4) = rng.normal();
  CHECK((back.predict_raw(x_norm) - net.predict_raw(x_norm)).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("loading a checkpoint of another kind fails") {
  const std::string path = "fwd_kind.ckpt";
  const ForwardNet net = tiny_net(8);
  net.save(path);
  {
    LoadedCheckpoint raw = checkpoint_load(path);
    raw.header["kind"] = "cinn";
    checkpoint_save(raw.params, raw.header, path);
  }
  CHECK_THROWS_AS(ForwardNet::load(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("a few adam steps reduce the spectrum fit loss") {
  ForwardNet net = tiny_net(9);
  Rng rng(90);
  Matrix x(32, 4);
  for (Index i = 0; i < x.rows(); ++i) x.row(i) = sample_device(rng, net.optics).as_row();
  const Matrix x_norm = net.x_std.apply(x);
  Matrix y(32, 16);
  for (Index i = 0; i < x.rows(); ++i) {
    y.row(i) = simulate(DeviceParams::from_row(x.row(i)), net.optics).transpose();
  }

  const double before = net.loss_plain(x_norm, y);
  AdamState state = adam_init(net.params);
  for (int it = 0; it < 50; ++it) {
    Tape tape(&net.params);
    tape.backward(net.loss(tape, x_norm, y));
    adam_step(net.params, state, 1e-3);
  }
  const double after = net.loss_plain(x_norm, y);
  CHECK(after < 0.5 * before);
}
