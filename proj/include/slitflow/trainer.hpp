#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slitflow/cinn.hpp"
#include "slitflow/cvae.hpp"
#include "slitflow/forward_net.hpp"
#include "slitflow/optics.hpp"

namespace slitflow {

/// One JSON document drives a whole run; unknown keys are rejected so typos
/// fail loudly. Architecture defaults depend on the model kind.
struct TrainConfig {
  std::string model;  // "forward" | "cinn" | "cvae"
  int epochs = 300;
  Index batch_size = 128;
  double lr_initial = 1e-3;
  double lr_drop_factor = 0.1;
  int lr_drop_epoch = -1;  // -1 resolves to floor(2/3 * epochs)
  std::uint64_t seed = 1;

  // cinn only: std of the Gaussian noise added to x during training
  double sigma_aug = 0.01;
  bool wavelet_cond = true;  // default true for cinn, false otherwise

  // architecture overrides
  Index cond_dim = 512;
  int num_blocks = 6;
  Index subnet_hidden = 512;
  std::vector<Index> cond_hidden = {256, 256, 256};
  double clamp_alpha = 2.0;
  bool identity_init = true;
  Index hidden_width = 512;  // forward 512, cvae 256
  int hidden_layers = 3;     // forward 3, cvae 5
  double beta = 1.0;

  static TrainConfig defaults(const std::string& model);
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
  int effective_lr_drop_epoch() const {
    return lr_drop_epoch >= 0 ? lr_drop_epoch : (2 * epochs) / 3;
  }
};

/// Step schedule: lr_initial before the drop epoch, lr_initial*factor from it.
double lr_at(int epoch, const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::vector<EpochMetrics> metrics;
  double final_val_loss = 0.0;
};

/// Full run: fit normalizers on the training split, train with seeded
/// per-epoch shuffles (last incomplete batch dropped), log one metrics line
/// per epoch, write the final checkpoint. Deterministic given (dataset,
/// config). Pass an empty metrics_path to skip the log file.
TrainResult train(const Dataset& ds, const TrainConfig& cfg, const std::string& checkpoint_path,
                  const std::string& metrics_path);

/// Mean validation loss, no parameter updates, no augmentation noise. The
/// cVAE variant uses a fixed noise substream so repeated calls agree.
double evaluate_validation(const ForwardNet& model, const Dataset& ds);
double evaluate_validation(const FlowModel& model, const Dataset& ds);
double evaluate_validation(const CvaeModel& model, const Dataset& ds);

}  // namespace slitflow
