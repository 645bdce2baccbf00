#include "slitflow/cinn.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "slitflow/checkpoint.hpp"
#include "slitflow/wavelet.hpp"

namespace slitflow {

namespace {

constexpr int kDim = 4;
constexpr int kHalf = 2;

/// How often each coordinate lands in the active (transformed) half, tracking
/// positions through the permutation chain.
std::array<int, kDim> active_counts(const std::vector<std::vector<int>>& perms) {
  std::array<int, kDim> counts{};
  for (int coord = 0; coord < kDim; ++coord) {
    int pos = coord;
    for (const auto& perm : perms) {
      for (int j = 0; j < kDim; ++j) {
        if (perm[j] == pos) {
          pos = j;
          break;
        }
      }
      if (pos < kHalf) ++counts[coord];
    }
  }
  return counts;
}

/// A coordinate that is transformed only once sees a single clamped affine
/// map, which cannot whiten it against the conditioner; its latent variance
/// then stays far from one. Requiring the activation counts to be as even as
/// possible removes that failure mode.
bool balanced(const std::array<int, kDim>& counts) {
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  return *lo >= 1 && *hi - *lo <= 1;
}

std::vector<std::vector<int>> draw_permutations(int num_blocks, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<std::vector<int>> perms(num_blocks);
    for (auto& perm : perms) {
      perm = {0, 1, 2, 3};
      for (int i = kDim - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
        std::swap(perm[i], perm[j]);
      }
    }
    if (balanced(active_counts(perms))) return perms;
  }
  throw std::runtime_error("FlowModel: could not draw balanced permutations");
}

}  // namespace

nlohmann::json FlowConfig::to_json() const {
  return {{"spectrum_size", spectrum_size},
          {"cond_dim", cond_dim},
          {"num_blocks", num_blocks},
          {"subnet_hidden", subnet_hidden},
          {"cond_hidden", cond_hidden},
          {"clamp_alpha", clamp_alpha},
          {"wavelet_cond", wavelet_cond},
          {"identity_init", identity_init}};
}

FlowConfig FlowConfig::from_json(const nlohmann::json& j) {
  FlowConfig cfg;
  cfg.spectrum_size = j.at("spectrum_size").get<Index>();
  cfg.cond_dim = j.at("cond_dim").get<Index>();
  cfg.num_blocks = j.at("num_blocks").get<int>();
  cfg.subnet_hidden = j.at("subnet_hidden").get<Index>();
  cfg.cond_hidden = j.at("cond_hidden").get<std::vector<Index>>();
  cfg.clamp_alpha = j.at("clamp_alpha").get<double>();
  cfg.wavelet_cond = j.at("wavelet_cond").get<bool>();
  cfg.identity_init = j.at("identity_init").get<bool>();
  if (cfg.spectrum_size < 2 || cfg.cond_dim < 1 || cfg.num_blocks < 1 || cfg.subnet_hidden < 1 ||
      cfg.clamp_alpha <= 0.0) {
    throw std::invalid_argument("FlowConfig: sizes must be positive");
  }
  return cfg;
}

double nll_loss(const std::vector<FlowOutput>& batch) {
  if (batch.empty()) throw std::invalid_argument("nll_loss: empty batch");
  double total = 0.0;
  for (const FlowOutput& out : batch) {
    total += 0.5 * out.z.squaredNorm() - out.log_det;
  }
  return total / static_cast<double>(batch.size());
}

void FlowModel::build_nets() {
  std::vector<Index> cond_widths;
  cond_widths.push_back(config.spectrum_size);
  cond_widths.insert(cond_widths.end(), config.cond_hidden.begin(), config.cond_hidden.end());
  cond_widths.push_back(config.cond_dim);
  cond_net = Mlp("cond", cond_widths, Activation::kRelu, Activation::kLinear);

  subnets.clear();
  for (int k = 0; k < config.num_blocks; ++k) {
    subnets.emplace_back("block" + std::to_string(k),
                         std::vector<Index>{kHalf + config.cond_dim, config.subnet_hidden, kDim},
                         Activation::kRelu, Activation::kLinear, config.identity_init);
  }
}

FlowModel FlowModel::create(const FlowConfig& config, const OpticsConfig& optics,
                            const Standardizer& x_std, const Standardizer& y_std,
                            std::uint64_t seed) {
  optics.validate();
  if (optics.grid_points != config.spectrum_size) {
    throw std::invalid_argument("FlowModel: config.spectrum_size must equal the optics grid");
  }
  if (x_std.dims() != kDim || y_std.dims() != config.spectrum_size) {
    throw std::invalid_argument("FlowModel: standardizer dimensions do not fit the model");
  }
  FlowModel fm;
  fm.config = config;
  fm.optics = optics;
  fm.x_std = x_std;
  fm.y_std = y_std;
  fm.seed = seed;
  Rng rng(seed);
  fm.perms = draw_permutations(config.num_blocks, rng);
  fm.build_nets();
  fm.cond_net.register_params(fm.params, rng);
  for (const Mlp& net : fm.subnets) net.register_params(fm.params, rng);
  return fm;
}

Matrix FlowModel::preprocess_spectra(const Matrix& spectra) const {
  if (spectra.cols() != config.spectrum_size) {
    throw std::invalid_argument("FlowModel: spectra have " + std::to_string(spectra.cols()) +
                                " points, model expects " + std::to_string(config.spectrum_size));
  }
  return y_std.apply(config.wavelet_cond ? haar_forward_rows(spectra) : spectra);
}

RowVector FlowModel::preprocess_spectrum(const Spectrum& spectrum) const {
  return preprocess_spectra(Matrix(spectrum.transpose())).row(0);
}

Matrix FlowModel::cond_features_rows(const Matrix& y_prep) const {
  return cond_net.forward(params, y_prep);
}

Vector FlowModel::cond_features(const Spectrum& spectrum) const {
  return cond_features_rows(Matrix(preprocess_spectrum(spectrum))).row(0).transpose();
}

std::pair<Matrix, Matrix> FlowModel::subnet_st(int block, const Matrix& x2,
                                               const Matrix& c) const {
  Matrix sub_in(x2.rows(), kHalf + c.cols());
  sub_in << x2, c;
  const Matrix out = subnets[static_cast<std::size_t>(block)].forward(params, sub_in);
  if (!out.allFinite()) {
    throw std::runtime_error("FlowModel: block " + std::to_string(block) +
                             " subnet produced non-finite output");
  }
  const double a = config.clamp_alpha;
  Matrix s = ((2.0 * a / std::numbers::pi) * (out.leftCols(kHalf) / a).array().atan()).matrix();
  return {std::move(s), out.rightCols(kHalf)};
}

std::pair<Vector, double> FlowModel::coupling_forward(int block, const Vector& x,
                                                      const Vector& c) const {
  if (x.size() != kDim) throw std::invalid_argument("coupling_forward: x must have 4 entries");
  auto [s, t] = subnet_st(block, Matrix(x.tail(kHalf).transpose()), Matrix(c.transpose()));
  Vector u(kDim);
  u.head(kHalf) =
      x.head(kHalf).cwiseProduct(s.row(0).transpose().array().exp().matrix()) +
      t.row(0).transpose();
  u.tail(kHalf) = x.tail(kHalf);
  return {std::move(u), s.sum()};
}

Vector FlowModel::coupling_inverse(int block, const Vector& u, const Vector& c) const {
  if (u.size() != kDim) throw std::invalid_argument("coupling_inverse: u must have 4 entries");
  auto [s, t] = subnet_st(block, Matrix(u.tail(kHalf).transpose()), Matrix(c.transpose()));
  Vector x(kDim);
  x.head(kHalf) = (u.head(kHalf) - t.row(0).transpose())
                      .cwiseProduct((-s.row(0).transpose().array()).exp().matrix());
  x.tail(kHalf) = u.tail(kHalf);
  return x;
}

std::pair<Matrix, Vector> FlowModel::flow_forward_rows(const Matrix& x_norm,
                                                       const Matrix& c) const {
  if (x_norm.cols() != kDim || c.rows() != x_norm.rows() || c.cols() != config.cond_dim) {
    throw std::invalid_argument("flow_forward: batch shapes disagree");
  }
  Matrix cur = x_norm;
  Vector log_det = Vector::Zero(x_norm.rows());
  Matrix permuted(cur.rows(), kDim);
  for (int k = 0; k < config.num_blocks; ++k) {
    for (int j = 0; j < kDim; ++j) permuted.col(j) = cur.col(perms[k][j]);
    auto [s, t] = subnet_st(k, permuted.rightCols(kHalf), c);
    cur.leftCols(kHalf) =
        permuted.leftCols(kHalf).cwiseProduct(s.array().exp().matrix()) + t;
    cur.rightCols(kHalf) = permuted.rightCols(kHalf);
    log_det += s.rowwise().sum();
  }
  return {std::move(cur), std::move(log_det)};
}

Matrix FlowModel::flow_inverse_rows(const Matrix& z, const Matrix& c) const {
  if (z.cols() != kDim || c.rows() != z.rows() || c.cols() != config.cond_dim) {
    throw std::invalid_argument("flow_inverse: batch shapes disagree");
  }
  Matrix cur = z;
  Matrix unpermuted(cur.rows(), kDim);
  for (int k = config.num_blocks - 1; k >= 0; --k) {
    auto [s, t] = subnet_st(k, cur.rightCols(kHalf), c);
    cur.leftCols(kHalf) =
        (cur.leftCols(kHalf) - t).cwiseProduct((-s.array()).exp().matrix());
    for (int j = 0; j < kDim; ++j) unpermuted.col(perms[k][j]) = cur.col(j);
    cur = unpermuted;
  }
  return cur;
}

FlowOutput FlowModel::flow_forward(const Vector& x_norm, const Vector& c) const {
  auto [z, ld] = flow_forward_rows(Matrix(x_norm.transpose()), Matrix(c.transpose()));
  return {z.row(0).transpose(), ld[0]};
}

Vector FlowModel::flow_inverse(const Vector& z, const Vector& c) const {
  return flow_inverse_rows(Matrix(z.transpose()), Matrix(c.transpose())).row(0).transpose();
}

Var FlowModel::loss(Tape& tape, const Matrix& x_norm, const Matrix& y_prep) const {
  const Index b = x_norm.rows();
  if (b < 1) throw std::invalid_argument("FlowModel::loss: empty batch");
  if (x_norm.cols() != kDim || y_prep.rows() != b || y_prep.cols() != config.spectrum_size) {
    throw std::invalid_argument("FlowModel::loss: batch shapes disagree");
  }
  const double a = config.clamp_alpha;
  const Var c = cond_net.forward(tape, tape.constant(y_prep));
  Var x = tape.constant(x_norm);
  Var total_s = tape.constant(Matrix::Zero(1, 1));
  for (int k = 0; k < config.num_blocks; ++k) {
    x = tape.permute_cols(x, perms[k]);
    const Var x1 = tape.slice_cols(x, 0, kHalf);
    const Var x2 = tape.slice_cols(x, kHalf, kHalf);
    const Var h = subnets[static_cast<std::size_t>(k)].forward(tape, tape.concat_cols(x2, c));
    const Var s = tape.scale(tape.atan(tape.scale(tape.slice_cols(h, 0, kHalf), 1.0 / a)),
                             2.0 * a / std::numbers::pi);
    const Var t = tape.slice_cols(h, kHalf, kHalf);
    const Var u1 = tape.add(tape.cmul(x1, tape.exp(s)), t);
    x = tape.concat_cols(u1, x2);
    total_s = tape.add(total_s, tape.sum(s));
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  return tape.sub(tape.scale(tape.sum(tape.square(x)), 0.5 * inv_b),
                  tape.scale(total_s, inv_b));
}

double FlowModel::loss_plain(const Matrix& x_norm, const Matrix& y_prep) const {
  if (x_norm.rows() < 1) throw std::invalid_argument("FlowModel::loss_plain: empty batch");
  auto [z, log_det] = flow_forward_rows(x_norm, cond_features_rows(y_prep));
  return (0.5 * z.rowwise().squaredNorm() - log_det).mean();
}

PosteriorSamples FlowModel::sample_posterior(const Spectrum& target, Index n, Rng& rng) const {
  if (n < 0) throw std::invalid_argument("sample_posterior: n must be >= 0");
  PosteriorSamples out;
  out.devices.resize(n, kDim);
  out.z.resize(n, kDim);
  out.in_bounds.assign(static_cast<std::size_t>(n), 1);
  if (n == 0) return out;

  const Vector c = cond_features(target);
  const Matrix c_rows = c.transpose().replicate(n, 1);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < kDim; ++j) out.z(i, j) = rng.normal();
  }
  out.devices = x_std.invert(flow_inverse_rows(out.z, c_rows));
  for (Index i = 0; i < n; ++i) {
    out.in_bounds[static_cast<std::size_t>(i)] =
        device_in_bounds(DeviceParams::from_row(out.devices.row(i)), optics) ? 1 : 0;
  }
  return out;
}

void FlowModel::save(const std::string& path) const {
  nlohmann::json cfg = config.to_json();
  cfg["permutations"] = perms;
  nlohmann::json meta = {{"kind", "cinn"},
                         {"config", cfg},
                         {"seed", seed},
                         {"init_scheme", config.identity_init
                              ? "uniform(+-1/sqrt(fan_in)), zeroed subnet output layers"
                              : "uniform(+-1/sqrt(fan_in))"},
                         {"optics", optics.to_json()},
                         {"normalization", {{"x", x_std.to_json()}, {"y", y_std.to_json()}}}};
  checkpoint_save(params, meta, path);
}

FlowModel FlowModel::load(const std::string& path) {
  LoadedCheckpoint ck = checkpoint_load(path);
  if (ck.header.at("kind").get<std::string>() != "cinn") {
    throw std::runtime_error("FlowModel::load: checkpoint kind is '" +
                             ck.header.at("kind").get<std::string>() + "', expected 'cinn'");
  }
  FlowModel fm;
  fm.config = FlowConfig::from_json(ck.header.at("config"));
  fm.perms = ck.header.at("config").at("permutations").get<std::vector<std::vector<int>>>();
  if (static_cast<int>(fm.perms.size()) != fm.config.num_blocks) {
    throw std::runtime_error("FlowModel::load: permutation count does not match num_blocks");
  }
  fm.optics = OpticsConfig::from_json(ck.header.at("optics"));
  fm.x_std = Standardizer::from_json(ck.header.at("normalization").at("x"));
  fm.y_std = Standardizer::from_json(ck.header.at("normalization").at("y"));
  fm.seed = ck.header.at("seed").get<std::uint64_t>();
  fm.build_nets();
  fm.params = std::move(ck.params);
  for (int l = 0; l < fm.cond_net.num_layers(); ++l) {
    if (!fm.params.contains(fm.cond_net.weight_name(l))) {
      throw std::runtime_error("FlowModel::load: checkpoint is missing conditioning layer " +
                               std::to_string(l));
    }
  }
  for (const Mlp& net : fm.subnets) {
    for (int l = 0; l < net.num_layers(); ++l) {
      if (!fm.params.contains(net.weight_name(l))) {
        throw std::runtime_error("FlowModel::load: checkpoint is missing parameters of " +
                                 net.prefix());
      }
    }
  }
  return fm;
}

}  // namespace slitflow
