#pragma once

#include <Eigen/Dense>

namespace slitflow {

using Scalar = double;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Eigen::Index;

/// Transmission samples on the simulator's fixed wavelength grid.
using Spectrum = Eigen::VectorXd;

}  // namespace slitflow
