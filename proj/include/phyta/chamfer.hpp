#pragma once

// Chamfer distances between point sets (exact kd-tree nearest neighbors) and
// deterministic area-weighted surface sampling of triangle meshes.

#include "phyta/types.hpp"

#include <cstdint>
#include <vector>

namespace phyta {

/// Distance variant: L2 uses squared nearest distances, L1 unsquared.
enum class CdVariant { L1, L2 };

/// Static exact nearest-neighbor index over 3D points (median-split kd-tree).
/// Query results equal brute force exactly.
class KdTree3 {
 public:
  explicit KdTree3(const std::vector<Vec3>& points);

  /// Squared distance from q to its nearest indexed point.
  double nearest_squared(const Vec3& q) const;
  /// Index of the nearest indexed point (ties keep the first found).
  int nearest_index(const Vec3& q) const;
  std::size_t size() const { return pts_.size(); }

 private:
  struct Node {
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
    int axis = 0;
    double split = 0.0;
  };
  int build(int begin, int end);
  void query(int node, const Vec3& q, double& best, int* best_index) const;

  std::vector<Vec3> pts_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Chamfer distance: mean nearest distance from a to b plus mean nearest
/// distance from b to a (squared for L2, plain Euclidean for L1).
/// Throws std::invalid_argument on an empty set.
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
               CdVariant variant);

/// Variant reusing a prebuilt index over b and precomputed index over a.
double chamfer_indexed(const std::vector<Vec3>& a, const KdTree3& tree_a,
                       const std::vector<Vec3>& b, const KdTree3& tree_b,
                       CdVariant variant);

/// Diagonal of the axis-aligned bounding box of the points.
double bbox_diagonal(const std::vector<Vec3>& points);

/// Chamfer distance after scaling both sets by the reference diagonal
/// (divide by diag^2 for L2, by diag for L1).
double normalized_chamfer(double raw_cd, double reference_diagonal,
                          CdVariant variant);

/// Frozen surface-sampling pattern: face indices plus barycentric coordinates
/// drawn once, re-evaluated against moving vertices so that the sampled point
/// set varies smoothly with mesh deformation.
struct SurfacePattern {
  std::vector<int> face;
  std::vector<Vec2> bary;  // (u,v); w = 1-u-v
};

/// Draws an area-weighted uniform pattern of `count` samples (deterministic
/// for a fixed seed). Throws on empty or zero-area meshes.
SurfacePattern make_surface_pattern(const TriMesh& mesh, int count,
                                    std::uint64_t seed);

/// Positions of a pattern against the current mesh vertices.
std::vector<Vec3> eval_surface_pattern(const TriMesh& mesh,
                                       const SurfacePattern& pattern);

/// Convenience: make + eval in one call.
std::vector<Vec3> sample_surface_points(const TriMesh& mesh, int count,
                                        std::uint64_t seed);

}  // namespace phyta
