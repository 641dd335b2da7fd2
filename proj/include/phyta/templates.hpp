#pragma once

// Canonical part templates and per-part mesh generation: the leaf control
// grid with PCA shape offsets, the unit stem tube, grid construction from
// scanned contours (oval shortcut), and quad-grid / swept-tube triangulation.

#include "phyta/pca.hpp"
#include "phyta/types.hpp"

#include <vector>

namespace phyta {

/// Row-major m1 x m2 grid of 2D control points (index r * m2 + c).
struct Grid2 {
  int m1 = 0;
  int m2 = 0;
  std::vector<Vec2> pts;

  Vec2& at(int r, int c) { return pts[static_cast<std::size_t>(r) * m2 + c]; }
  const Vec2& at(int r, int c) const {
    return pts[static_cast<std::size_t>(r) * m2 + c];
  }
};

/// Row-major m1 x m2 grid of 3D points.
struct Grid3 {
  int m1 = 0;
  int m2 = 0;
  std::vector<Vec3> pts;

  Vec3& at(int r, int c) { return pts[static_cast<std::size_t>(r) * m2 + c]; }
  const Vec3& at(int r, int c) const {
    return pts[static_cast<std::size_t>(r) * m2 + c];
  }
};

/// Flattens a 2D grid to a 2*m1*m2 vector (x,y per point, row-major points).
VecX flatten_grid(const Grid2& grid);

/// Inverse of flatten_grid.
Grid2 unflatten_grid(const VecX& flat, int m1, int m2);

/// Lifts a 2D grid into the z = 0 plane.
Grid3 lift_grid(const Grid2& grid);

/// Species mean leaf: an m1 x m2 control grid with the base (row-0 midpoint)
/// at the origin and the tip (last-row midpoint) on the +y axis. m2 is odd so
/// a center column exists to serve as the main vein.
struct LeafTemplate {
  int m1 = 7;
  int m2 = 5;
  Grid2 grid;

  int center_column() const { return (m2 - 1) / 2; }
};

/// Canonical stem: m_s control points uniformly spaced on the +y axis from
/// the origin to (0,1,0), extruded as a tube of circular cross-section.
struct StemTemplate {
  int m_s = 8;
  double default_radius = 0.025;  // canonical units; beta[0] overrides

  std::vector<Vec3> axis() const;
};

/// Applies the PCA shape offset: template grid + components^T beta, reshaped
/// to m1 x m2. beta = 0 returns the template grid exactly.
Grid2 apply_shape(const LeafTemplate& tmpl, const PcaBasis& basis,
                  const VecX& beta);

/// Builds an m1 x m2 grid from a scanned leaf outline by intersecting m1
/// uniformly spaced horizontal lines (base height through tip height,
/// inclusive) with the left/right contours and placing m2 points by linear
/// interpolation across each chord. Throws std::runtime_error when any
/// sampled height crosses a contour side in more than one run (multi-lobed
/// outline); callers fall back to the harmonic mapping in that case.
Grid2 build_grid_oval(const std::vector<Vec2>& contour_left,
                      const std::vector<Vec2>& contour_right, int m1, int m2);

/// Triangulates a (possibly deformed) control grid. `subdivision` >= 1 is the
/// Catmull-Rom refinement factor per grid cell along both axes; the refined
/// grid keeps the original control points and each quad splits into two
/// triangles, giving (m1'-1)(m2'-1)*2 faces for the refined sizes m'.
TriMesh leaf_mesh(const Grid3& grid, int subdivision);

/// Sweeps a circular tube of the given radius along the Catmull-Rom-smoothed
/// axis. Ring orientation comes from parallel-transported skeleton frames;
/// both ends are capped, so vertex count = rings * radial_segments + 2.
TriMesh stem_mesh(const std::vector<Vec3>& axis, double radius,
                  int radial_segments, int samples_per_segment = 4);

}  // namespace phyta
