#include "slitflow/wavelet.hpp"

#include <cmath>
#include <stdexcept>

namespace slitflow {

namespace {

const double kInvSqrt2 = 1.0 / std::sqrt(2.0);

void require_power_of_two(Index n, const char* who) {
  if (n < 1 || (n & (n - 1)) != 0) {
    throw std::invalid_argument(std::string(who) + ": length " + std::to_string(n) +
                                " is not a power of two");
  }
}

}  // namespace

Vector haar_forward(const Vector& signal) {
  require_power_of_two(signal.size(), "haar_forward");
  Vector out = signal;
  Vector tmp(signal.size());
  for (Index len = signal.size(); len > 1; len /= 2) {
    const Index half = len / 2;
    for (Index k = 0; k < half; ++k) {
      tmp[k] = (out[2 * k] + out[2 * k + 1]) * kInvSqrt2;
      tmp[half + k] = (out[2 * k] - out[2 * k + 1]) * kInvSqrt2;
    }
    out.head(len) = tmp.head(len);
  }
  return out;
}

Vector haar_inverse(const Vector& coeffs) {
  require_power_of_two(coeffs.size(), "haar_inverse");
  Vector out = coeffs;
  Vector tmp(coeffs.size());
  for (Index len = 2; len <= coeffs.size(); len *= 2) {
    const Index half = len / 2;
    for (Index k = 0; k < half; ++k) {
      tmp[2 * k] = (out[k] + out[half + k]) * kInvSqrt2;
      tmp[2 * k + 1] = (out[k] - out[half + k]) * kInvSqrt2;
    }
    out.head(len) = tmp.head(len);
  }
  return out;
}

Matrix haar_forward_rows(const Matrix& signals) {
  Matrix out(signals.rows(), signals.cols());
  for (Index r = 0; r < signals.rows(); ++r) {
    out.row(r) = haar_forward(signals.row(r).transpose()).transpose();
  }
  return out;
}

}  // namespace slitflow
