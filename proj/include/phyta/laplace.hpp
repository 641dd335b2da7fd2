#pragma once

// Harmonic UV parameterization of leaf domains: solves the Laplace equation
// on a rasterized leaf interior with arc-length boundary conditions mapping
// the outline onto the unit disk (base at (0.5,0), tip at (0.5,1)).

#include "phyta/templates.hpp"
#include "phyta/types.hpp"

#include <vector>

namespace phyta {

/// Discrete harmonic map between a leaf domain and the unit disk. Holds the
/// solved UV fields on a regular node grid plus the boundary polylines, and
/// answers forward/inverse point queries with bilinear interpolation.
class UvMapping {
 public:
  /// Maps a domain point to UV coordinates. Points outside bilinear coverage
  /// (a thin rim near the boundary) fall back to the boundary map at the
  /// closest outline point.
  Vec2 forward(const Vec2& p) const;

  /// Maps a UV point back into the leaf domain. UV points outside the solved
  /// image (at or beyond the disk rim) fall back to the inverse boundary map.
  Vec2 inverse(const Vec2& uv) const;

  /// Maximum deviation of any solved node from its stencil average; this is
  /// the discrete-harmonicity residual reported by the solver.
  double stencil_residual() const;

  int grid_nx() const { return nx_; }
  int grid_ny() const { return ny_; }
  double cell_size() const { return h_; }

 private:
  friend UvMapping solve_laplace_uv(const std::vector<Vec2>& contour_left,
                                    const std::vector<Vec2>& contour_right,
                                    int grid_resolution);

  struct NodeArm {
    double len = 0.0;   // arm length toward this direction (<= h)
    int neighbor = -1;  // node index when the full arm reaches a grid node
    Vec2 bval = Vec2::Zero();  // boundary UV value for cut arms
  };
  struct SolvedNode {
    int index = 0;  // flat node index
    NodeArm arm[4];  // +x, -x, +y, -y
  };

  int node_index(int i, int j) const { return j * nx_ + i; }
  Vec2 node_pos(int i, int j) const {
    return Vec2(x0_ + i * h_, y0_ + j * h_);
  }
  bool node_valued(int idx) const { return mask_[idx] != 0; }
  Vec2 boundary_uv_at_closest(const Vec2& p) const;
  double stencil_average(const SolvedNode& node, bool v_field) const;

  // grid geometry
  int nx_ = 0, ny_ = 0;
  double x0_ = 0.0, y0_ = 0.0, h_ = 0.0;
  // per-node: 0 = outside/unvalued, 1 = solved interior, 2 = fixed boundary
  std::vector<int> mask_;
  std::vector<double> u_, v_;
  std::vector<SolvedNode> solved_;

  // outline (base -> tip per side) with cumulative arc length
  std::vector<Vec2> left_, right_;
  std::vector<double> left_cum_, right_cum_;

  // inverse lookup acceleration: UV-space bucket grid over cell bboxes
  struct CellRef {
    int i, j;
  };
  int bucket_res_ = 64;
  std::vector<std::vector<CellRef>> buckets_;
  void build_inverse_buckets();
  friend class UvMappingTestPeer;
};

/// Solves the discrete Laplace equation (cut-cell 5-point stencil, SOR) for
/// the UV fields over the closed region between the two contours. Boundary
/// conditions place the base at (0.5,0), the tip at (0.5,1) and intermediate
/// outline points on the disk rim proportionally to arc length per side.
/// Residual tolerance 1e-8; throws on self-intersecting or zero-area domains.
UvMapping solve_laplace_uv(const std::vector<Vec2>& contour_left,
                           const std::vector<Vec2>& contour_right,
                           int grid_resolution = 129);

/// Builds an m1 x m2 control grid through the harmonic map: target UV points
/// lie on m1 uniformly spaced disk chords (m2 points each, pole rows collapse
/// to the base/tip), pulled back into the leaf domain via the inverse map.
Grid2 build_grid_laplace(const std::vector<Vec2>& contour_left,
                         const std::vector<Vec2>& contour_right, int m1,
                         int m2, int grid_resolution = 129);

}  // namespace phyta
