#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "slitflow/param_store.hpp"

namespace slitflow {

/// Binary model file: magic "FDCK", u32 LE version (=1), u64 LE header byte
/// count, UTF-8 JSON header, then every parameter's entries as little-endian
/// f64 in row-major order, concatenated in manifest order.
///
/// `meta` supplies the model-specific header fields (kind, config, seed,
/// normalization); the parameter manifest ("params": [{name, shape}]) is
/// filled in from the store.
void checkpoint_save(const ParamStore& params, const nlohmann::json& meta,
                     const std::string& path);

struct LoadedCheckpoint {
  nlohmann::json header;
  ParamStore params;
};

LoadedCheckpoint checkpoint_load(const std::string& path);

}  // namespace slitflow
