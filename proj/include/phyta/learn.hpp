#pragma once

// Learning of the leaf shape basis from scanned contours and the deformation
// basis from fitted joint-angle fields.

#include "phyta/pca.hpp"
#include "phyta/templates.hpp"

#include <string>
#include <vector>

namespace phyta {

/// One scanned leaf outline: left/right contour polylines ordered base to
/// tip (shared endpoints) plus the scan's metric scale.
struct ContourSample {
  std::vector<Vec2> left;
  std::vector<Vec2> right;
  double mm_per_unit = 1.0;
  std::string name;
};

/// Training matrix with per-sample provenance tags.
struct AlignedSampleSet {
  MatX samples;  // N x dim
  std::vector<std::string> provenance;
};

/// Result of shape learning: the PCA basis over flattened grids plus the
/// species mean grid as the leaf template.
struct ShapeLearnResult {
  PcaBasis basis;
  LeafTemplate tmpl;
  int used_samples = 0;
  std::vector<std::string> skipped;  // per-sample failure diagnostics
};

/// Aligns each contour (base at the origin, base-to-tip along +y, metric
/// scale applied), builds the m1 x m2 grid (oval shortcut first, harmonic
/// mapping as fallback), and fits PCA over the flattened grids.
/// Throws when fewer than 2 samples survive grid construction.
ShapeLearnResult learn_shape_basis(const std::vector<ContourSample>& contours,
                                   int m1, int m2, int k,
                                   int laplace_resolution = 129);

/// PCA over per-leaf joint-angle vectors (N x 2*m1*m2); angle space is what
/// the leaf kinematics consume, and decoded deformations stay
/// rigidity-preserving by construction.
PcaBasis learn_deform_basis(const MatX& angle_sets, int k);

/// Rigid alignment used by learn_shape_basis, exposed for reuse: maps base
/// to the origin and the base-to-tip direction onto +y.
std::vector<Vec2> align_contour(const std::vector<Vec2>& side, const Vec2& base,
                                const Vec2& tip, double scale);

}  // namespace phyta
