#include "slitflow/cli.hpp"

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "slitflow/checkpoint.hpp"
#include "slitflow/cinn.hpp"
#include "slitflow/cvae.hpp"
#include "slitflow/eval.hpp"
#include "slitflow/forward_net.hpp"
#include "slitflow/gradcheck.hpp"
#include "slitflow/optics.hpp"
#include "slitflow/trainer.hpp"

namespace slitflow::cli {

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

TrainConfig load_train_config(const std::string& kind, const std::string& config_path,
                              std::optional<std::uint64_t> seed_override) {
  TrainConfig cfg;
  if (config_path.empty()) {
    cfg = TrainConfig::defaults(kind);
  } else {
    std::ifstream f(config_path);
    if (!f) throw std::runtime_error("cannot open config '" + config_path + "'");
    nlohmann::json j;
    f >> j;
    if (!j.contains("model")) {
      j["model"] = kind;
    } else if (j.at("model").get<std::string>() != kind) {
      throw std::runtime_error("config is for model '" + j.at("model").get<std::string>() +
                               "', this command trains '" + kind + "'");
    }
    cfg = TrainConfig::from_json(j);
  }
  if (seed_override.has_value()) cfg.seed = *seed_override;
  return cfg;
}

int run_train(const std::string& kind, const std::string& data_dir, const std::string& out,
              const std::string& config_path, const std::string& metrics,
              std::optional<std::uint64_t> seed_override) {
  const Dataset ds = dataset_read(data_dir);
  const TrainConfig cfg = load_train_config(kind, config_path, seed_override);
  const std::string metrics_path = metrics.empty() ? out + ".metrics.jsonl" : metrics;
  const TrainResult result = train(ds, cfg, out, metrics_path);
  std::cout << kind << ": " << cfg.epochs << " epochs, final val loss "
            << fmt17(result.final_val_loss) << ", checkpoint " << out << "\n";
  return 0;
}

std::string checkpoint_kind(const std::string& path) {
  return checkpoint_load(path).header.at("kind").get<std::string>();
}

Spectrum validation_spectrum(const Dataset& ds, Index index, DeviceParams* device_out) {
  if (index < 0 || index >= ds.val_size()) {
    throw std::runtime_error("validation index " + std::to_string(index) + " outside [0, " +
                             std::to_string(ds.val_size()) + ")");
  }
  const Index row = ds.split_train + index;
  if (device_out != nullptr) *device_out = ds.device(row);
  return ds.spectra.row(row).transpose();
}

void write_samples_csv(const std::string& path, const PosteriorSamples& samples) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << "lambda1_nm,lambda2_nm,h1_nm,h2_nm,in_bounds\n";
  for (Index i = 0; i < samples.size(); ++i) {
    f << fmt17(samples.devices(i, 0)) << ',' << fmt17(samples.devices(i, 1)) << ','
      << fmt17(samples.devices(i, 2)) << ',' << fmt17(samples.devices(i, 3)) << ','
      << int(samples.in_bounds[static_cast<std::size_t>(i)]) << "\n";
  }
}

}  // namespace

Spectrum read_spectrum_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open spectrum file '" + path + "'");
  std::string header, row;
  if (!std::getline(f, header) || !std::getline(f, row)) {
    throw std::runtime_error("spectrum file '" + path + "' needs a header and one data row");
  }
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos <= row.size()) {
    std::size_t comma = row.find(',', pos);
    if (comma == std::string::npos) comma = row.size();
    double v = 0.0;
    const char* first = row.data() + pos;
    const char* last = row.data() + comma;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
      throw std::runtime_error("bad float in spectrum file '" + path + "'");
    }
    values.push_back(v);
    pos = comma + 1;
  }
  // count the header columns so a device-parameter CSV is rejected early
  const auto n_cols = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  if (n_cols != values.size()) {
    throw std::runtime_error("spectrum file '" + path + "' header and row widths differ");
  }
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

int dispatch(std::vector<std::string> args) {
  CLI::App app{"Inverse photonic design: surrogate physics, conditional flows, and a cVAE "
               "baseline over slit-grating transmission spectra"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_out;
  Index gd_n = 0;
  std::uint64_t gd_seed = 1;
  auto* gen = app.add_subcommand("gen-data", "Generate a simulated dataset directory");
  gen->add_option("--out", gd_out, "output directory")->required();
  gen->add_option("--n", gd_n, "number of records (>= 4)")->required();
  gen->add_option("--seed", gd_seed, "generation seed");

  // train-*
  struct TrainArgs {
    std::string data, out, config, metrics;
    std::optional<std::uint64_t> seed;
  };
  TrainArgs targs[3];
  const char* kinds[3] = {"forward", "cinn", "cvae"};
  CLI::App* tcmds[3];
  const char* tdesc[3] = {"Train the forward surrogate network",
                          "Train the conditional invertible network",
                          "Train the conditional VAE baseline"};
  for (int i = 0; i < 3; ++i) {
    auto* cmd = app.add_subcommand(std::string("train-") + kinds[i], tdesc[i]);
    cmd->add_option("--data", targs[i].data, "dataset directory")->required();
    cmd->add_option("--out", targs[i].out, "checkpoint output path")->required();
    cmd->add_option("--config", targs[i].config, "training config JSON");
    cmd->add_option("--metrics", targs[i].metrics,
                    "metrics JSONL path (default: <out>.metrics.jsonl)");
    cmd->add_option("--seed", targs[i].seed, "override the config seed");
    tcmds[i] = cmd;
  }

  // sample
  std::string sm_model, sm_spectrum, sm_data, sm_out;
  Index sm_n = 10000;
  std::uint64_t sm_seed = 1;
  std::optional<Index> sm_val_index;
  auto* smp = app.add_subcommand("sample", "Draw posterior device samples for a target spectrum");
  smp->add_option("--model", sm_model, "cinn or cvae checkpoint")->required();
  smp->add_option("--spectrum", sm_spectrum, "one-row CSV with the target spectrum");
  smp->add_option("--from-validation", sm_val_index, "validation record index (needs --data)");
  smp->add_option("--data", sm_data, "dataset directory for --from-validation");
  smp->add_option("--n", sm_n, "number of samples");
  smp->add_option("--seed", sm_seed, "sampling seed");
  smp->add_option("--out", sm_out, "samples CSV path")->required();

  // evaluate
  std::string ev_model, ev_data, ev_spectrum, ev_out, ev_respim = "surrogate", ev_forward;
  std::vector<double> ev_device;
  Index ev_n = 10000;
  std::uint64_t ev_seed = 1;
  std::optional<Index> ev_val_index;
  auto* ev = app.add_subcommand("evaluate",
                                "Posterior study for one target: clusters, bands, report");
  ev->add_option("--model", ev_model, "cinn or cvae checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--from-validation", ev_val_index, "validation record index as target");
  ev->add_option("--spectrum", ev_spectrum, "target spectrum CSV (needs --device)");
  ev->add_option("--device", ev_device, "true device for --spectrum: L1 L2 H1 H2")->expected(4);
  ev->add_option("--n", ev_n, "number of posterior samples");
  ev->add_option("--seed", ev_seed, "sampling seed");
  ev->add_option("--respim", ev_respim, "re-simulation engine")
      ->check(CLI::IsMember({"surrogate", "oracle"}));
  ev->add_option("--forward", ev_forward, "forward checkpoint for --respim surrogate");
  ev->add_option("--out", ev_out, "report output directory")->required();

  // gradcheck
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of all model gradients");
  gc->add_option("--seed", gc_seed, "instance seed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      const Dataset ds = generate_dataset(gd_n, gd_seed, OpticsConfig{});
      dataset_write(ds, gd_out);
      std::cout << "wrote " << ds.size() << " records (" << ds.split_train << " train / "
                << ds.val_size() << " val) to " << gd_out << "\n";
      return 0;
    }
    for (int i = 0; i < 3; ++i) {
      if (tcmds[i]->parsed()) {
        return run_train(kinds[i], targs[i].data, targs[i].out, targs[i].config,
                         targs[i].metrics, targs[i].seed);
      }
    }
    if (smp->parsed()) {
      if (sm_spectrum.empty() == !sm_val_index.has_value()) {
        throw std::runtime_error("sample: pass exactly one of --spectrum / --from-validation");
      }
      Spectrum target;
      if (sm_val_index.has_value()) {
        if (sm_data.empty()) throw std::runtime_error("sample: --from-validation needs --data");
        target = validation_spectrum(dataset_read(sm_data), *sm_val_index, nullptr);
      } else {
        target = read_spectrum_csv(sm_spectrum);
      }
      Rng rng(sm_seed);
      const std::string kind = checkpoint_kind(sm_model);
      PosteriorSamples samples;
      if (kind == "cinn") {
        samples = FlowModel::load(sm_model).sample_posterior(target, sm_n, rng);
      } else if (kind == "cvae") {
        samples = CvaeModel::load(sm_model).sample(target, sm_n, rng);
      } else {
        throw std::runtime_error("sample: checkpoint kind '" + kind + "' cannot sample");
      }
      write_samples_csv(sm_out, samples);
      std::cout << "wrote " << samples.size() << " samples to " << sm_out << "\n";
      return 0;
    }
    if (ev->parsed()) {
      if (ev_spectrum.empty() == !ev_val_index.has_value()) {
        throw std::runtime_error("evaluate: pass exactly one of --spectrum / --from-validation");
      }
      const Dataset ds = dataset_read(ev_data);
      Spectrum target;
      DeviceParams true_device;
      if (ev_val_index.has_value()) {
        target = validation_spectrum(ds, *ev_val_index, &true_device);
      } else {
        if (ev_device.size() != 4) {
          throw std::runtime_error("evaluate: --spectrum needs --device L1 L2 H1 H2");
        }
        target = read_spectrum_csv(ev_spectrum);
        true_device = {ev_device[0], ev_device[1], ev_device[2], ev_device[3]};
      }
      Resimulator respim;
      if (ev_respim == "oracle") {
        respim = make_oracle_resim(ds.optics);
      } else {
        if (ev_forward.empty()) {
          throw std::runtime_error("evaluate: --respim surrogate needs --forward CKPT");
        }
        respim = make_surrogate_resim(ForwardNet::load(ev_forward));
      }
      const std::string kind = checkpoint_kind(ev_model);
      EvaluationOutput out;
      if (kind == "cinn") {
        out = evaluate_inverse(FlowModel::load(ev_model), target, true_device, ev_n, respim,
                               ev_seed);
      } else if (kind == "cvae") {
        out = evaluate_inverse(CvaeModel::load(ev_model), target, true_device, ev_n, respim,
                               ev_seed);
      } else {
        throw std::runtime_error("evaluate: checkpoint kind '" + kind + "' cannot sample");
      }
      export_report(out, ev_out);
      const auto& rep = out.report;
      std::cout << "k=" << rep.k << " centroid_err=[";
      for (Index i = 0; i < rep.centroid_err_true.size(); ++i) {
        std::cout << (i ? " " : "") << fmt17(rep.centroid_err_true[i]);
      }
      std::cout << "] mean_mse=" << fmt17(rep.mean_mse) << " oob=" << fmt17(rep.oob_fraction);
      if (rep.bridge.has_value()) std::cout << " bridge=" << fmt17(*rep.bridge);
      std::cout << " -> " << ev_out << "\n";
      return 0;
    }
    if (gc->parsed()) {
      bool all_pass = true;
      for (const GradCheckResult& r : run_gradient_suite(gc_seed)) {
        all_pass = all_pass && r.pass;
        std::cout << r.name << ": " << r.scalars_checked << " scalars, max rel err "
                  << fmt17(r.max_rel_err) << (r.pass ? " PASS" : " FAIL (worst ")
                  << (r.pass ? "" : r.worst_param + ")") << "\n";
      }
      return all_pass ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no command handled\n";
  return 2;
}

}  // namespace slitflow::cli
