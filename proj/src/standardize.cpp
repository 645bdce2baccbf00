#include "slitflow/standardize.hpp"

#include <stdexcept>

namespace slitflow {

Standardizer Standardizer::fit(const Matrix& rows) {
  if (rows.rows() < 2) {
    throw std::invalid_argument("Standardizer::fit: needs at least 2 rows, got " +
                                std::to_string(rows.rows()));
  }
  Standardizer s;
  s.mean_ = rows.colwise().mean();
  const Matrix centered = rows.rowwise() - s.mean_;
  s.std_ = (centered.array().square().colwise().mean()).sqrt().matrix().cwiseMax(kMinStd);
  return s;
}

Matrix Standardizer::apply(const Matrix& rows) const {
  if (rows.cols() != dims()) {
    throw std::invalid_argument("Standardizer::apply: got " + std::to_string(rows.cols()) +
                                " columns, fitted on " + std::to_string(dims()));
  }
  return ((rows.rowwise() - mean_).array().rowwise() / std_.array()).matrix();
}

Matrix Standardizer::invert(const Matrix& rows) const {
  if (rows.cols() != dims()) {
    throw std::invalid_argument("Standardizer::invert: got " + std::to_string(rows.cols()) +
                                " columns, fitted on " + std::to_string(dims()));
  }
  return ((rows.array().rowwise() * std_.array()).matrix().rowwise() + mean_);
}

RowVector Standardizer::apply_row(const RowVector& row) const {
  return apply(Matrix(row)).row(0);
}

RowVector Standardizer::invert_row(const RowVector& row) const {
  return invert(Matrix(row)).row(0);
}

nlohmann::json Standardizer::to_json() const {
  std::vector<double> m(mean_.begin(), mean_.end());
  std::vector<double> s(std_.begin(), std_.end());
  return {{"mean", m}, {"std", s}};
}

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("std").get<std::vector<double>>();
  if (m.size() != s.size()) {
    throw std::invalid_argument("Standardizer::from_json: mean/std length mismatch");
  }
  Standardizer out;
  out.mean_ = Eigen::Map<const RowVector>(m.data(), static_cast<Index>(m.size()));
  out.std_ = Eigen::Map<const RowVector>(s.data(), static_cast<Index>(s.size()));
  return out;
}

}  // namespace slitflow
