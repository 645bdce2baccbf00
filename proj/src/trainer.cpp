#include "slitflow/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <stdexcept>
#include <utility>

#include "slitflow/adam.hpp"
#include "slitflow/wavelet.hpp"

namespace slitflow {

namespace {

// Substream tags; record-level dataset streams use fold(seed, i) with
// i < 2^32, so bases at or above 2^32 cannot collide with them.
constexpr std::uint64_t kShuffleBase = 1ull << 32;
constexpr std::uint64_t kNoiseBase = 2ull << 32;
constexpr std::uint64_t kValNoise = 3ull << 32;

std::vector<Index> shuffled_indices(Index n, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

Matrix gather_rows(const Matrix& src, const std::vector<Index>& idx, Index first, Index count) {
  Matrix out(count, src.cols());
  for (Index r = 0; r < count; ++r) {
    out.row(r) = src.row(idx[static_cast<std::size_t>(first + r)]);
  }
  return out;
}

Matrix normal_matrix(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

}  // namespace

TrainConfig TrainConfig::defaults(const std::string& model) {
  TrainConfig cfg;
  cfg.model = model;
  if (model == "forward") {
    cfg.wavelet_cond = false;
    cfg.hidden_width = 512;
    cfg.hidden_layers = 3;
  } else if (model == "cinn") {
    cfg.wavelet_cond = true;
  } else if (model == "cvae") {
    cfg.wavelet_cond = false;
    cfg.hidden_width = 256;
    cfg.hidden_layers = 5;
  } else {
    throw std::invalid_argument("TrainConfig: unknown model kind '" + model + "'");
  }
  return cfg;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.contains("model")) throw std::invalid_argument("TrainConfig: missing 'model'");
  const auto model = j.at("model").get<std::string>();
  TrainConfig cfg = defaults(model);

  std::set<std::string> allowed = {"model",     "epochs",         "batch_size", "lr_initial",
                                   "lr_drop_factor", "lr_drop_epoch", "seed"};
  if (model == "forward") {
    allowed.insert({"hidden_width", "hidden_layers"});
  } else if (model == "cinn") {
    allowed.insert({"sigma_aug", "wavelet_cond", "cond_dim", "num_blocks", "subnet_hidden",
                    "cond_hidden", "clamp_alpha", "identity_init"});
  } else if (model == "cvae") {
    allowed.insert({"wavelet_cond", "beta", "hidden_width", "hidden_layers"});
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.contains(key)) {
      throw std::invalid_argument("TrainConfig: unknown key '" + key + "' for model '" + model +
                                  "'");
    }
  }

  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<Index>();
  if (j.contains("lr_initial")) cfg.lr_initial = j.at("lr_initial").get<double>();
  if (j.contains("lr_drop_factor")) cfg.lr_drop_factor = j.at("lr_drop_factor").get<double>();
  if (j.contains("lr_drop_epoch")) cfg.lr_drop_epoch = j.at("lr_drop_epoch").get<int>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("sigma_aug")) cfg.sigma_aug = j.at("sigma_aug").get<double>();
  if (j.contains("wavelet_cond")) cfg.wavelet_cond = j.at("wavelet_cond").get<bool>();
  if (j.contains("cond_dim")) cfg.cond_dim = j.at("cond_dim").get<Index>();
  if (j.contains("num_blocks")) cfg.num_blocks = j.at("num_blocks").get<int>();
  if (j.contains("subnet_hidden")) cfg.subnet_hidden = j.at("subnet_hidden").get<Index>();
  if (j.contains("cond_hidden")) cfg.cond_hidden = j.at("cond_hidden").get<std::vector<Index>>();
  if (j.contains("clamp_alpha")) cfg.clamp_alpha = j.at("clamp_alpha").get<double>();
  if (j.contains("identity_init")) cfg.identity_init = j.at("identity_init").get<bool>();
  if (j.contains("hidden_width")) cfg.hidden_width = j.at("hidden_width").get<Index>();
  if (j.contains("hidden_layers")) cfg.hidden_layers = j.at("hidden_layers").get<int>();
  if (j.contains("beta")) cfg.beta = j.at("beta").get<double>();

  cfg.validate();
  return cfg;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"model", model},
                      {"epochs", epochs},
                      {"batch_size", batch_size},
                      {"lr_initial", lr_initial},
                      {"lr_drop_factor", lr_drop_factor},
                      {"lr_drop_epoch", lr_drop_epoch},
                      {"seed", seed}};
  if (model == "forward") {
    j["hidden_width"] = hidden_width;
    j["hidden_layers"] = hidden_layers;
  } else if (model == "cinn") {
    j["sigma_aug"] = sigma_aug;
    j["wavelet_cond"] = wavelet_cond;
    j["cond_dim"] = cond_dim;
    j["num_blocks"] = num_blocks;
    j["subnet_hidden"] = subnet_hidden;
    j["cond_hidden"] = cond_hidden;
    j["clamp_alpha"] = clamp_alpha;
    j["identity_init"] = identity_init;
  } else if (model == "cvae") {
    j["wavelet_cond"] = wavelet_cond;
    j["beta"] = beta;
    j["hidden_width"] = hidden_width;
    j["hidden_layers"] = hidden_layers;
  }
  return j;
}

void TrainConfig::validate() const {
  if (model != "forward" && model != "cinn" && model != "cvae") {
    throw std::invalid_argument("TrainConfig: unknown model kind '" + model + "'");
  }
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (lr_initial <= 0.0 || lr_drop_factor <= 0.0) {
    throw std::invalid_argument("TrainConfig: learning rates must be positive");
  }
  if (effective_lr_drop_epoch() > epochs) {
    throw std::invalid_argument("TrainConfig: lr_drop_epoch exceeds epochs");
  }
  if (sigma_aug < 0.0) throw std::invalid_argument("TrainConfig: sigma_aug must be >= 0");
  if (beta < 0.0) throw std::invalid_argument("TrainConfig: beta must be >= 0");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(cfg.epochs) + ")");
  }
  return epoch >= cfg.effective_lr_drop_epoch() ? cfg.lr_initial * cfg.lr_drop_factor
                                                : cfg.lr_initial;
}

namespace {

struct SplitViews {
  Matrix x_train, x_val;  // standardized devices
  Matrix y_train, y_val;  // model-ready targets (raw or preprocessed spectra)
};

void check_split(const Dataset& ds, const TrainConfig& cfg) {
  if (ds.split_train < 1 || ds.val_size() < 1) {
    throw std::invalid_argument("train: dataset needs nonempty train and validation splits");
  }
  if (ds.split_train < cfg.batch_size) {
    throw std::invalid_argument("train: training split (" + std::to_string(ds.split_train) +
                                ") is smaller than one batch (" +
                                std::to_string(cfg.batch_size) + ")");
  }
}

}  // namespace

double evaluate_validation(const ForwardNet& model, const Dataset& ds) {
  if (ds.val_size() < 1) throw std::invalid_argument("evaluate_validation: empty split");
  const Matrix x = model.x_std.apply(ds.devices.bottomRows(ds.val_size()));
  return model.loss_plain(x, ds.spectra.bottomRows(ds.val_size()));
}

double evaluate_validation(const FlowModel& model, const Dataset& ds) {
  if (ds.val_size() < 1) throw std::invalid_argument("evaluate_validation: empty split");
  const Matrix x = model.x_std.apply(ds.devices.bottomRows(ds.val_size()));
  return model.loss_plain(x, model.preprocess_spectra(ds.spectra.bottomRows(ds.val_size())));
}

double evaluate_validation(const CvaeModel& model, const Dataset& ds) {
  if (ds.val_size() < 1) throw std::invalid_argument("evaluate_validation: empty split");
  const Matrix x = model.x_std.apply(ds.devices.bottomRows(ds.val_size()));
  Rng eps_rng(Rng::fold(model.seed, kValNoise));
  const Matrix eps = normal_matrix(x.rows(), 4, eps_rng);
  return model.loss_plain(x, model.preprocess_spectra(ds.spectra.bottomRows(ds.val_size())),
                          eps);
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg, const std::string& checkpoint_path,
                  const std::string& metrics_path) {
  cfg.validate();
  check_split(ds, cfg);
  ds.optics.validate();

  const Index n_train = ds.split_train;
  const Standardizer x_std = Standardizer::fit(ds.devices.topRows(n_train));
  const Matrix x_all = x_std.apply(ds.devices);

  // Model-ready target rows plus the three loss closures; everything below
  // the switch is model-agnostic.
  Matrix y_all;
  ParamStore* params = nullptr;
  std::function<Var(Tape&, const Matrix&, const Matrix&, Rng&)> batch_loss;
  std::function<double()> val_loss;
  std::function<void()> save_model;

  ForwardNet fwd;
  FlowModel flow;
  CvaeModel cvae;

  if (cfg.model == "forward") {
    ForwardConfig fc;
    fc.hidden_width = cfg.hidden_width;
    fc.hidden_layers = cfg.hidden_layers;
    fwd = ForwardNet::create(fc, ds.optics, x_std, cfg.seed);
    fwd.init_output_mean(ds.spectra.topRows(n_train));
    y_all = ds.spectra;
    params = &fwd.params;
    batch_loss = [&](Tape& tape, const Matrix& xb, const Matrix& yb, Rng&) {
      return fwd.loss(tape, xb, yb);
    };
    val_loss = [&] { return evaluate_validation(fwd, ds); };
    save_model = [&] { fwd.save(checkpoint_path); };
  } else if (cfg.model == "cinn") {
    const Matrix prep =
        cfg.wavelet_cond ? haar_forward_rows(ds.spectra) : ds.spectra;
    const Standardizer y_std = Standardizer::fit(prep.topRows(n_train));
    FlowConfig fc;
    fc.spectrum_size = ds.optics.grid_points;
    fc.cond_dim = cfg.cond_dim;
    fc.num_blocks = cfg.num_blocks;
    fc.subnet_hidden = cfg.subnet_hidden;
    fc.cond_hidden = cfg.cond_hidden;
    fc.clamp_alpha = cfg.clamp_alpha;
    fc.wavelet_cond = cfg.wavelet_cond;
    fc.identity_init = cfg.identity_init;
    flow = FlowModel::create(fc, ds.optics, x_std, y_std, cfg.seed);
    y_all = y_std.apply(prep);
    params = &flow.params;
    batch_loss = [&, sigma = cfg.sigma_aug](Tape& tape, const Matrix& xb, const Matrix& yb,
                                            Rng& noise) {
      Matrix x_noisy = xb;
      if (sigma > 0.0) x_noisy += sigma * normal_matrix(xb.rows(), xb.cols(), noise);
      return flow.loss(tape, x_noisy, yb);
    };
    val_loss = [&] { return evaluate_validation(flow, ds); };
    save_model = [&] { flow.save(checkpoint_path); };
  } else {
    const Matrix prep =
        cfg.wavelet_cond ? haar_forward_rows(ds.spectra) : ds.spectra;
    const Standardizer y_std = Standardizer::fit(prep.topRows(n_train));
    CvaeConfig cc;
    cc.spectrum_size = ds.optics.grid_points;
    cc.hidden_width = cfg.hidden_width;
    cc.hidden_layers = cfg.hidden_layers;
    cc.beta = cfg.beta;
    cc.wavelet_cond = cfg.wavelet_cond;
    cvae = CvaeModel::create(cc, ds.optics, x_std, y_std, cfg.seed);
    y_all = y_std.apply(prep);
    params = &cvae.params;
    batch_loss = [&](Tape& tape, const Matrix& xb, const Matrix& yb, Rng& noise) {
      const Matrix eps = normal_matrix(xb.rows(), 4, noise);
      return cvae.loss(tape, xb, yb, eps);
    };
    val_loss = [&] { return evaluate_validation(cvae, ds); };
    save_model = [&] { cvae.save(checkpoint_path); };
  }

  AdamState adam = adam_init(*params);
  const Index batches = n_train / cfg.batch_size;

  TrainResult result;
  result.checkpoint_path = checkpoint_path;
  result.metrics.reserve(static_cast<std::size_t>(cfg.epochs));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    Rng shuffle_rng(Rng::fold(cfg.seed, kShuffleBase + static_cast<std::uint64_t>(epoch)));
    Rng noise_rng(Rng::fold(cfg.seed, kNoiseBase + static_cast<std::uint64_t>(epoch)));
    const std::vector<Index> order = shuffled_indices(n_train, shuffle_rng);

    double loss_sum = 0.0;
    for (Index b = 0; b < batches; ++b) {
      const Matrix xb = gather_rows(x_all, order, b * cfg.batch_size, cfg.batch_size);
      const Matrix yb = gather_rows(y_all, order, b * cfg.batch_size, cfg.batch_size);
      Tape tape(params);
      const Var loss = batch_loss(tape, xb, yb, noise_rng);
      const double value = tape.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        throw std::runtime_error("train: non-finite loss " + std::to_string(value) +
                                 " at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(b));
      }
      loss_sum += value;
      tape.backward(loss);
      adam_step(*params, adam, lr);
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(batches);
    em.val_loss = val_loss();
    em.lr = lr;
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(em);
  }

  save_model();
  result.final_val_loss = result.metrics.back().val_loss;

  if (!metrics_path.empty()) {
    std::ofstream mf(metrics_path, std::ios::trunc);
    if (!mf) throw std::runtime_error("train: cannot write metrics to '" + metrics_path + "'");
    for (const EpochMetrics& em : result.metrics) {
      nlohmann::json line = {{"epoch", em.epoch},
                             {"train_loss", em.train_loss},
                             {"val_loss", em.val_loss},
                             {"lr", em.lr},
                             {"seconds", em.seconds}};
      mf << line.dump() << "\n";
    }
  }
  return result;
}

}  // namespace slitflow
