#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "slitflow/types.hpp"

namespace slitflow {

/// Ordered map of parameter name -> (value, gradient accumulator). The
/// insertion order is the manifest order used by checkpoints, so it must be
/// deterministic for a given architecture.
class ParamStore {
 public:
  int add(const std::string& name, Matrix value) {
    if (index_.count(name) != 0) {
      throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    }
    const int idx = static_cast<int>(values_.size());
    index_.emplace(name, idx);
    names_.push_back(name);
    grads_.emplace_back(Matrix::Zero(value.rows(), value.cols()));
    values_.push_back(std::move(value));
    return idx;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  int index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    }
    return it->second;
  }

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int idx) const { return names_.at(idx); }

  const Matrix& value(int idx) const { return values_.at(idx); }
  Matrix& value(int idx) { return values_.at(idx); }
  const Matrix& value(const std::string& name) const { return values_.at(index(name)); }
  Matrix& value(const std::string& name) { return values_.at(index(name)); }

  const Matrix& grad(int idx) const { return grads_.at(idx); }
  Matrix& grad(int idx) { return grads_.at(idx); }
  const Matrix& grad(const std::string& name) const { return grads_.at(index(name)); }
  Matrix& grad(const std::string& name) { return grads_.at(index(name)); }

  void zero_grads() {
    for (auto& g : grads_) g.setZero();
  }

  /// Total number of scalar entries across all parameters.
  Index scalar_count() const {
    Index n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::vector<Matrix> grads_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace slitflow
