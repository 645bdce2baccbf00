#pragma once

#include "slitflow/types.hpp"

namespace slitflow {

/// Full orthonormal Haar pyramid of a power-of-two-length signal. At each
/// level a_k = (x_{2k}+x_{2k+1})/sqrt2, d_k = (x_{2k}-x_{2k+1})/sqrt2 and the
/// recursion continues on a. Output layout: [final scaling coefficient,
/// details coarsest -> finest].
Vector haar_forward(const Vector& signal);

/// Exact inverse of haar_forward.
Vector haar_inverse(const Vector& coeffs);

/// haar_forward applied to every row (spectra are stored row-wise).
Matrix haar_forward_rows(const Matrix& signals);

}  // namespace slitflow
