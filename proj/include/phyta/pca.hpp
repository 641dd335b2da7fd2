#pragma once

// Principal-component bases over flattened grids / joint-angle vectors, with
// deterministic component signs and an SVD-based fit.

#include "phyta/types.hpp"

namespace phyta {

/// Linear statistical basis: x ~ mean + components^T c. Rows of `components`
/// are orthonormal; `variances` are the nonincreasing sample variances
/// captured by each component.
struct PcaBasis {
  int dim = 0;
  int k = 0;
  VecX mean;        // dim
  MatX components;  // k x dim
  VecX variances;   // k

  /// Standard deviation of component i (sqrt of its variance).
  double sigma(int i) const { return std::sqrt(variances[i]); }
};

/// Fits a k-component basis to row-major sample data (N x dim).
/// mean = column mean; components = top-k right singular vectors of the
/// centered data; variances = squared singular values / (N - 1). The sign of
/// each component is fixed by making its largest-magnitude entry positive.
/// Requires k <= min(N - 1, dim); all-identical data yields zero variances.
PcaBasis pca_fit(const MatX& data, int k);

/// Coefficients of x against the basis: components * (x - mean).
VecX pca_encode(const PcaBasis& basis, const VecX& x);

/// Reconstruction from coefficients: mean + components^T c.
VecX pca_decode(const PcaBasis& basis, const VecX& c);

/// Offset-only reconstruction: components^T c, without the mean. Used where
/// the basis models a displacement field around an externally supplied rest
/// state, so zero coefficients must decode to exactly zero offset.
VecX pca_decode_offset(const PcaBasis& basis, const VecX& c);

/// Structural check used when loading serialized bases.
ValidationResult validate_basis(const PcaBasis& basis);

}  // namespace phyta
