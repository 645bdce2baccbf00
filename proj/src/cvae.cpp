#include "slitflow/cvae.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "slitflow/checkpoint.hpp"
#include "slitflow/wavelet.hpp"

namespace slitflow {

namespace {
constexpr Index kDim = 4;
}

nlohmann::json CvaeConfig::to_json() const {
  return {{"spectrum_size", spectrum_size},
          {"hidden_width", hidden_width},
          {"hidden_layers", hidden_layers},
          {"beta", beta},
          {"wavelet_cond", wavelet_cond}};
}

CvaeConfig CvaeConfig::from_json(const nlohmann::json& j) {
  CvaeConfig cfg;
  cfg.spectrum_size = j.at("spectrum_size").get<Index>();
  cfg.hidden_width = j.at("hidden_width").get<Index>();
  cfg.hidden_layers = j.at("hidden_layers").get<int>();
  cfg.beta = j.at("beta").get<double>();
  cfg.wavelet_cond = j.at("wavelet_cond").get<bool>();
  if (cfg.spectrum_size < 2 || cfg.hidden_width < 1 || cfg.hidden_layers < 1 || cfg.beta < 0.0) {
    throw std::invalid_argument("CvaeConfig: invalid sizes or beta");
  }
  return cfg;
}

double kl_closed_form(const GaussianPosterior& post) {
  if (post.mu.size() != post.log_var.size()) {
    throw std::invalid_argument("kl_closed_form: mu and log_var sizes differ");
  }
  const auto lv = post.log_var.array();
  return (-0.5 * (1.0 + lv - lv.exp() - post.mu.array().square())).sum();
}

double elbo_loss(const Vector& x_norm, const Vector& x_hat, const GaussianPosterior& post,
                 double beta) {
  if (x_norm.size() != x_hat.size()) {
    throw std::invalid_argument("elbo_loss: x and x_hat sizes differ");
  }
  return 0.5 * (x_hat - x_norm).squaredNorm() + beta * kl_closed_form(post);
}

void CvaeModel::build_nets() {
  std::vector<Index> enc_widths, dec_widths;
  enc_widths.push_back(kDim + config.spectrum_size);
  dec_widths.push_back(kDim + config.spectrum_size);
  for (int i = 0; i < config.hidden_layers; ++i) {
    enc_widths.push_back(config.hidden_width);
    dec_widths.push_back(config.hidden_width);
  }
  enc_widths.push_back(2 * kDim);
  dec_widths.push_back(kDim);
  encoder = Mlp("enc", enc_widths, Activation::kRelu, Activation::kLinear);
  decoder = Mlp("dec", dec_widths, Activation::kRelu, Activation::kLinear);
}

CvaeModel CvaeModel::create(const CvaeConfig& config, const OpticsConfig& optics,
                            const Standardizer& x_std, const Standardizer& y_std,
                            std::uint64_t seed) {
  optics.validate();
  if (optics.grid_points != config.spectrum_size) {
    throw std::invalid_argument("CvaeModel: config.spectrum_size must equal the optics grid");
  }
  if (x_std.dims() != kDim || y_std.dims() != config.spectrum_size) {
    throw std::invalid_argument("CvaeModel: standardizer dimensions do not fit the model");
  }
  CvaeModel cm;
  cm.config = config;
  cm.optics = optics;
  cm.x_std = x_std;
  cm.y_std = y_std;
  cm.seed = seed;
  cm.build_nets();
  Rng rng(seed);
  cm.encoder.register_params(cm.params, rng);
  cm.decoder.register_params(cm.params, rng);
  return cm;
}

Matrix CvaeModel::preprocess_spectra(const Matrix& spectra) const {
  if (spectra.cols() != config.spectrum_size) {
    throw std::invalid_argument("CvaeModel: spectra have " + std::to_string(spectra.cols()) +
                                " points, model expects " + std::to_string(config.spectrum_size));
  }
  return y_std.apply(config.wavelet_cond ? haar_forward_rows(spectra) : spectra);
}

RowVector CvaeModel::preprocess_spectrum(const Spectrum& spectrum) const {
  return preprocess_spectra(Matrix(spectrum.transpose())).row(0);
}

GaussianPosterior CvaeModel::encode(const Vector& x_norm, const Vector& y_prep) const {
  if (x_norm.size() != kDim || y_prep.size() != config.spectrum_size) {
    throw std::invalid_argument("encode: expected x of size 4 and y of size " +
                                std::to_string(config.spectrum_size));
  }
  Matrix in(1, kDim + config.spectrum_size);
  in << x_norm.transpose(), y_prep.transpose();
  const Matrix out = encoder.forward(params, in);
  GaussianPosterior post;
  post.mu = out.row(0).head(kDim).transpose();
  post.log_var = out.row(0).tail(kDim).transpose();
  return post;
}

Matrix CvaeModel::decode_rows(const Matrix& z, const Matrix& y_prep) const {
  if (z.cols() != kDim || y_prep.rows() != z.rows() || y_prep.cols() != config.spectrum_size) {
    throw std::invalid_argument("decode: batch shapes disagree");
  }
  Matrix in(z.rows(), kDim + config.spectrum_size);
  in << z, y_prep;
  return decoder.forward(params, in);
}

Vector CvaeModel::decode(const Vector& z, const Vector& y_prep) const {
  return decode_rows(Matrix(z.transpose()), Matrix(y_prep.transpose())).row(0).transpose();
}

Vector CvaeModel::reparameterize(const GaussianPosterior& post, Rng& rng) {
  Vector eps(post.mu.size());
  for (Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  return post.mu + (0.5 * post.log_var.array()).exp().matrix().cwiseProduct(eps);
}

Var CvaeModel::loss(Tape& tape, const Matrix& x_norm, const Matrix& y_prep,
                    const Matrix& eps) const {
  const Index b = x_norm.rows();
  if (b < 1) throw std::invalid_argument("CvaeModel::loss: empty batch");
  if (x_norm.cols() != kDim || y_prep.rows() != b || y_prep.cols() != config.spectrum_size ||
      eps.rows() != b || eps.cols() != kDim) {
    throw std::invalid_argument("CvaeModel::loss: batch shapes disagree");
  }
  const Var x = tape.constant(x_norm);
  const Var y = tape.constant(y_prep);
  const Var enc_out = encoder.forward(tape, tape.concat_cols(x, y));
  const Var mu = tape.slice_cols(enc_out, 0, kDim);
  const Var log_var = tape.slice_cols(enc_out, kDim, kDim);
  const Var sigma = tape.exp(tape.scale(log_var, 0.5));
  const Var z = tape.add(mu, tape.cmul(sigma, tape.constant(eps)));
  const Var x_hat = decoder.forward(tape, tape.concat_cols(z, y));

  const double inv_b = 1.0 / static_cast<double>(b);
  const Var rec = tape.scale(tape.sum(tape.square(tape.sub(x_hat, x))), 0.5 * inv_b);
  // KL = -1/2 * sum(1 + log_var - exp(log_var) - mu^2); the constant 1 summed
  // over the [b x 4] block contributes 4b.
  const Var kl_inner = tape.add_scalar(
      tape.sub(tape.sub(tape.sum(log_var), tape.sum(tape.exp(log_var))),
               tape.sum(tape.square(mu))),
      4.0 * static_cast<double>(b));
  const Var kl = tape.scale(kl_inner, -0.5 * inv_b);
  return tape.add(rec, tape.scale(kl, config.beta));
}

double CvaeModel::loss_plain(const Matrix& x_norm, const Matrix& y_prep,
                             const Matrix& eps) const {
  const Index b = x_norm.rows();
  if (b < 1) throw std::invalid_argument("CvaeModel::loss_plain: empty batch");
  Matrix in(b, kDim + config.spectrum_size);
  in << x_norm, y_prep;
  const Matrix enc_out = encoder.forward(params, in);
  const Matrix mu = enc_out.leftCols(kDim);
  const Matrix log_var = enc_out.rightCols(kDim);
  const Matrix z = mu + (0.5 * log_var.array()).exp().matrix().cwiseProduct(eps);
  const Matrix x_hat = decode_rows(z, y_prep);
  const double rec = 0.5 * (x_hat - x_norm).array().square().sum();
  const double kl =
      -0.5 * (1.0 + log_var.array() - log_var.array().exp() - mu.array().square()).sum();
  return (rec + config.beta * kl) / static_cast<double>(b);
}

PosteriorSamples CvaeModel::sample(const Spectrum& target, Index n, Rng& rng) const {
  if (n < 0) throw std::invalid_argument("CvaeModel::sample: n must be >= 0");
  PosteriorSamples out;
  out.devices.resize(n, kDim);
  out.z.resize(n, kDim);
  out.in_bounds.assign(static_cast<std::size_t>(n), 1);
  if (n == 0) return out;

  const RowVector y = preprocess_spectrum(target);
  const Matrix y_rows = y.replicate(n, 1);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < kDim; ++j) out.z(i, j) = rng.normal();
  }
  out.devices = x_std.invert(decode_rows(out.z, y_rows));
  for (Index i = 0; i < n; ++i) {
    out.in_bounds[static_cast<std::size_t>(i)] =
        device_in_bounds(DeviceParams::from_row(out.devices.row(i)), optics) ? 1 : 0;
  }
  return out;
}

void CvaeModel::save(const std::string& path) const {
  nlohmann::json meta = {{"kind", "cvae"},
                         {"config", config.to_json()},
                         {"seed", seed},
                         {"init_scheme", "uniform(+-1/sqrt(fan_in))"},
                         {"optics", optics.to_json()},
                         {"normalization", {{"x", x_std.to_json()}, {"y", y_std.to_json()}}}};
  checkpoint_save(params, meta, path);
}

CvaeModel CvaeModel::load(const std::string& path) {
  LoadedCheckpoint ck = checkpoint_load(path);
  if (ck.header.at("kind").get<std::string>() != "cvae") {
    throw std::runtime_error("CvaeModel::load: checkpoint kind is '" +
                             ck.header.at("kind").get<std::string>() + "', expected 'cvae'");
  }
  CvaeModel cm;
  cm.config = CvaeConfig::from_json(ck.header.at("config"));
  cm.optics = OpticsConfig::from_json(ck.header.at("optics"));
  cm.x_std = Standardizer::from_json(ck.header.at("normalization").at("x"));
  cm.y_std = Standardizer::from_json(ck.header.at("normalization").at("y"));
  cm.seed = ck.header.at("seed").get<std::uint64_t>();
  cm.build_nets();
  cm.params = std::move(ck.params);
  for (const Mlp* net : {&cm.encoder, &cm.decoder}) {
    for (int l = 0; l < net->num_layers(); ++l) {
      if (!cm.params.contains(net->weight_name(l))) {
        throw std::runtime_error("CvaeModel::load: checkpoint is missing parameters of " +
                                 net->prefix());
      }
    }
  }
  return cm;
}

}  // namespace slitflow
