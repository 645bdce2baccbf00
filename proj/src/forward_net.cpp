#include "slitflow/forward_net.hpp"

#include <stdexcept>
#include <vector>

#include "slitflow/checkpoint.hpp"

namespace slitflow {

nlohmann::json ForwardConfig::to_json() const {
  return {{"hidden_width", hidden_width}, {"hidden_layers", hidden_layers}};
}

ForwardConfig ForwardConfig::from_json(const nlohmann::json& j) {
  ForwardConfig cfg;
  cfg.hidden_width = j.at("hidden_width").get<Index>();
  cfg.hidden_layers = j.at("hidden_layers").get<int>();
  if (cfg.hidden_width < 1 || cfg.hidden_layers < 1) {
    throw std::invalid_argument("ForwardConfig: hidden_width and hidden_layers must be >= 1");
  }
  return cfg;
}

namespace {

Mlp make_net(const ForwardConfig& cfg, Index m) {
  std::vector<Index> widths;
  widths.push_back(4);
  for (int i = 0; i < cfg.hidden_layers; ++i) widths.push_back(cfg.hidden_width);
  widths.push_back(m);
  return Mlp("fwd", widths, Activation::kRelu, Activation::kLinear);
}

}  // namespace

ForwardNet ForwardNet::create(const ForwardConfig& config, const OpticsConfig& optics,
                              const Standardizer& x_std, std::uint64_t seed) {
  optics.validate();
  if (x_std.dims() != 4) {
    throw std::invalid_argument("ForwardNet: x standardizer must cover 4 device parameters");
  }
  ForwardNet fn;
  fn.config = config;
  fn.optics = optics;
  fn.x_std = x_std;
  fn.seed = seed;
  fn.net = make_net(config, optics.grid_points);
  Rng rng(seed);
  fn.net.register_params(fn.params, rng);
  return fn;
}

void ForwardNet::init_output_mean(const Matrix& y_train) {
  if (y_train.rows() < 1 || y_train.cols() != optics.grid_points) {
    throw std::invalid_argument("ForwardNet::init_output_mean: expected rows of " +
                                std::to_string(optics.grid_points) + " spectrum values");
  }
  const int last = net.num_layers() - 1;
  params.value(net.weight_name(last)).setZero();
  params.value(net.bias_name(last)) = y_train.colwise().mean();
}

Spectrum ForwardNet::predict_spectrum(const DeviceParams& device) const {
  if (!device_in_bounds(device, optics)) {
    // reuse the simulator's bound diagnostics
    simulate(device, optics);
  }
  const Matrix x_norm = x_std.apply(Matrix(device.as_row()));
  const Matrix raw = net.forward(params, x_norm);
  return raw.row(0).transpose().cwiseMax(0.0).cwiseMin(1.0);
}

Matrix ForwardNet::predict_raw(const Matrix& x_norm) const { return net.forward(params, x_norm); }

Var ForwardNet::loss(Tape& tape, const Matrix& x_norm, const Matrix& y) const {
  if (x_norm.rows() != y.rows() || y.cols() != optics.grid_points) {
    throw std::invalid_argument("ForwardNet::loss: batch shapes disagree");
  }
  const Var pred = net.forward(tape, tape.constant(x_norm));
  return tape.mean(tape.square(tape.sub(pred, tape.constant(y))));
}

double ForwardNet::loss_plain(const Matrix& x_norm, const Matrix& y) const {
  return (predict_raw(x_norm) - y).array().square().mean();
}

void ForwardNet::save(const std::string& path) const {
  nlohmann::json meta = {{"kind", "forward"},
                         {"config", config.to_json()},
                         {"seed", seed},
                         {"init_scheme", "uniform(+-1/sqrt(fan_in))"},
                         {"optics", optics.to_json()},
                         {"normalization", {{"x", x_std.to_json()}}}};
  checkpoint_save(params, meta, path);
}

ForwardNet ForwardNet::load(const std::string& path) {
  LoadedCheckpoint ck = checkpoint_load(path);
  if (ck.header.at("kind").get<std::string>() != "forward") {
    throw std::runtime_error("ForwardNet::load: checkpoint kind is '" +
                             ck.header.at("kind").get<std::string>() + "', expected 'forward'");
  }
  ForwardNet fn;
  fn.config = ForwardConfig::from_json(ck.header.at("config"));
  fn.optics = OpticsConfig::from_json(ck.header.at("optics"));
  fn.x_std = Standardizer::from_json(ck.header.at("normalization").at("x"));
  fn.seed = ck.header.at("seed").get<std::uint64_t>();
  fn.net = make_net(fn.config, fn.optics.grid_points);
  fn.params = std::move(ck.params);
  // the manifest must cover exactly the architecture's parameters
  for (int l = 0; l < fn.net.num_layers(); ++l) {
    if (!fn.params.contains(fn.net.weight_name(l)) || !fn.params.contains(fn.net.bias_name(l))) {
      throw std::runtime_error("ForwardNet::load: checkpoint is missing layer " +
                               std::to_string(l));
    }
  }
  return fn;
}

double residue(const Spectrum& pred, const Spectrum& truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("residue: spectra have lengths " + std::to_string(pred.size()) +
                                " and " + std::to_string(truth.size()));
  }
  return (pred - truth).cwiseAbs().maxCoeff();
}

}  // namespace slitflow
