#pragma once

#include <string>
#include <vector>

#include "slitflow/types.hpp"

namespace slitflow::cli {

/// Routes one command line (without argv[0]) to the pipeline stages.
/// Exit codes: 0 success, 2 usage error, 1 runtime failure.
int dispatch(std::vector<std::string> args);

/// One-row CSV with the dataset's spectrum columns (T0000,...).
Spectrum read_spectrum_csv(const std::string& path);

}  // namespace slitflow::cli
