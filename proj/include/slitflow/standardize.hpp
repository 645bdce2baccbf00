#pragma once

#include <nlohmann/json.hpp>

#include "slitflow/types.hpp"

namespace slitflow {

/// Per-column mean/std transform. Fit on the training split only; the
/// statistics travel inside model checkpoints so sampling reuses the exact
/// training normalization. Population standard deviation, clamped from below
/// so constant columns map to zeros instead of NaNs.
class Standardizer {
 public:
  static constexpr double kMinStd = 1e-8;

  Standardizer() = default;

  [[nodiscard]] static Standardizer fit(const Matrix& rows);

  Matrix apply(const Matrix& rows) const;
  Matrix invert(const Matrix& rows) const;
  RowVector apply_row(const RowVector& row) const;
  RowVector invert_row(const RowVector& row) const;

  Index dims() const { return mean_.size(); }
  const RowVector& mean() const { return mean_; }
  const RowVector& std() const { return std_; }

  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);

  bool operator==(const Standardizer& other) const {
    return mean_ == other.mean_ && std_ == other.std_;
  }

 private:
  RowVector mean_;
  RowVector std_;
};

}  // namespace slitflow
