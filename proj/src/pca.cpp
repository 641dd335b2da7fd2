#include "phyta/pca.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>
#include <string>

namespace phyta {

PcaBasis pca_fit(const MatX& data, int k) {
  const int n = static_cast<int>(data.rows());
  const int dim = static_cast<int>(data.cols());
  if (n < 2) throw std::invalid_argument("pca_fit: need at least 2 samples");
  if (!data.allFinite()) throw std::invalid_argument("pca_fit: non-finite data");
  if (k < 1 || k > std::min(n - 1, dim)) {
    throw std::invalid_argument("pca_fit: k must satisfy 1 <= k <= min(N-1, dim)");
  }

  PcaBasis basis;
  basis.dim = dim;
  basis.k = k;
  basis.mean = data.colwise().mean();
  MatX centered = data.rowwise() - basis.mean.transpose();

  Eigen::JacobiSVD<MatX> svd(centered, Eigen::ComputeThinV);
  const VecX& sv = svd.singularValues();
  basis.components = svd.matrixV().leftCols(k).transpose();
  basis.variances =
      sv.head(k).array().square() / static_cast<double>(n - 1);

  // Deterministic sign convention: largest-magnitude entry of each component
  // is positive (PCA components are sign-ambiguous).
  for (int i = 0; i < k; ++i) {
    int arg_max = 0;
    basis.components.row(i).cwiseAbs().maxCoeff(&arg_max);
    if (basis.components(i, arg_max) < 0.0) basis.components.row(i) *= -1.0;
  }
  return basis;
}

VecX pca_encode(const PcaBasis& basis, const VecX& x) {
  if (x.size() != basis.dim) {
    throw std::invalid_argument("pca_encode: dimension mismatch");
  }
  return basis.components * (x - basis.mean);
}

VecX pca_decode(const PcaBasis& basis, const VecX& c) {
  if (c.size() != basis.k) {
    throw std::invalid_argument("pca_decode: coefficient count mismatch");
  }
  return basis.mean + basis.components.transpose() * c;
}

VecX pca_decode_offset(const PcaBasis& basis, const VecX& c) {
  if (c.size() != basis.k) {
    throw std::invalid_argument("pca_decode_offset: coefficient count mismatch");
  }
  return basis.components.transpose() * c;
}

ValidationResult validate_basis(const PcaBasis& basis) {
  ValidationResult res;
  auto fail = [&res](const std::string& msg) {
    res.ok = false;
    res.violations.push_back(msg);
  };
  if (basis.dim <= 0 || basis.k <= 0) fail("non-positive dimensions");
  if (basis.mean.size() != basis.dim) fail("mean size mismatch");
  if (basis.components.rows() != basis.k ||
      basis.components.cols() != basis.dim) {
    fail("component matrix shape mismatch");
    return res;
  }
  if (basis.variances.size() != basis.k) fail("variance count mismatch");
  for (int i = 0; i + 1 < basis.k; ++i) {
    if (basis.variances[i] + 1e-12 < basis.variances[i + 1]) {
      fail("variances not nonincreasing");
      break;
    }
  }
  const MatX gram =
      basis.components * basis.components.transpose() -
      MatX::Identity(basis.k, basis.k);
  if (gram.cwiseAbs().maxCoeff() > 1e-8) fail("components not orthonormal");
  return res;
}

}  // namespace phyta
