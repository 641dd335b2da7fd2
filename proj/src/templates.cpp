#include "phyta/templates.hpp"

#include "phyta/kinematics.hpp"
#include "phyta/spline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace phyta {

VecX flatten_grid(const Grid2& grid) {
  VecX flat(2 * grid.m1 * grid.m2);
  for (std::size_t i = 0; i < grid.pts.size(); ++i) {
    flat[2 * i] = grid.pts[i].x();
    flat[2 * i + 1] = grid.pts[i].y();
  }
  return flat;
}

Grid2 unflatten_grid(const VecX& flat, int m1, int m2) {
  if (flat.size() != 2 * m1 * m2) {
    throw std::invalid_argument("unflatten_grid: size mismatch");
  }
  Grid2 grid;
  grid.m1 = m1;
  grid.m2 = m2;
  grid.pts.resize(static_cast<std::size_t>(m1) * m2);
  for (std::size_t i = 0; i < grid.pts.size(); ++i) {
    grid.pts[i] = Vec2(flat[2 * i], flat[2 * i + 1]);
  }
  return grid;
}

Grid3 lift_grid(const Grid2& grid) {
  Grid3 out;
  out.m1 = grid.m1;
  out.m2 = grid.m2;
  out.pts.reserve(grid.pts.size());
  for (const auto& p : grid.pts) out.pts.emplace_back(p.x(), p.y(), 0.0);
  return out;
}

std::vector<Vec3> StemTemplate::axis() const {
  std::vector<Vec3> pts(m_s);
  for (int i = 0; i < m_s; ++i) {
    pts[i] = Vec3(0.0, static_cast<double>(i) / (m_s - 1), 0.0);
  }
  return pts;
}

Grid2 apply_shape(const LeafTemplate& tmpl, const PcaBasis& basis,
                  const VecX& beta) {
  const int dim = 2 * tmpl.m1 * tmpl.m2;
  if (basis.dim != dim) {
    throw std::invalid_argument("apply_shape: basis dimension mismatch");
  }
  if (beta.size() != basis.k) {
    throw std::invalid_argument("apply_shape: coefficient count mismatch");
  }
  const VecX flat = flatten_grid(tmpl.grid) + pca_decode_offset(basis, beta);
  return unflatten_grid(flat, tmpl.m1, tmpl.m2);
}

namespace {

// One merged run [lo, hi] of x-positions where a contour side meets a
// horizontal line.
struct CrossRun {
  double lo;
  double hi;
};

// All x-crossings of the polyline with the line y = h, merged into runs.
// Horizontal segments contribute their full x-interval.
std::vector<CrossRun> horizontal_crossings(const std::vector<Vec2>& poly,
                                           double h, double merge_tol) {
  std::vector<CrossRun> runs;
  for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[i + 1];
    const double da = a.y() - h;
    const double db = b.y() - h;
    if (da == 0.0 && db == 0.0) {
      runs.push_back({std::min(a.x(), b.x()), std::max(a.x(), b.x())});
    } else if ((da <= 0.0 && db >= 0.0) || (da >= 0.0 && db <= 0.0)) {
      const double t = da / (da - db);
      const double x = a.x() + t * (b.x() - a.x());
      runs.push_back({x, x});
    }
  }
  std::sort(runs.begin(), runs.end(),
            [](const CrossRun& u, const CrossRun& v) { return u.lo < v.lo; });
  std::vector<CrossRun> merged;
  for (const auto& r : runs) {
    if (!merged.empty() && r.lo <= merged.back().hi + merge_tol) {
      merged.back().hi = std::max(merged.back().hi, r.hi);
    } else {
      merged.push_back(r);
    }
  }
  return merged;
}

double contour_diag(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  Vec2 lo = a.front(), hi = a.front();
  auto grow = [&](const Vec2& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };
  for (const auto& p : a) grow(p);
  for (const auto& p : b) grow(p);
  return (hi - lo).norm();
}

}  // namespace

Grid2 build_grid_oval(const std::vector<Vec2>& contour_left,
                      const std::vector<Vec2>& contour_right, int m1, int m2) {
  if (contour_left.size() < 2 || contour_right.size() < 2) {
    throw std::invalid_argument("build_grid_oval: contour side too short");
  }
  if (m1 < 3 || m2 < 3) {
    throw std::invalid_argument("build_grid_oval: grid dims must be >= 3");
  }
  const double diag = contour_diag(contour_left, contour_right);
  const double endpoint_tol = 1e-6 * diag + 1e-12;
  if ((contour_left.front() - contour_right.front()).norm() > endpoint_tol ||
      (contour_left.back() - contour_right.back()).norm() > endpoint_tol) {
    throw std::runtime_error(
        "build_grid_oval: contours do not share base/tip endpoints");
  }

  const double y_base = contour_left.front().y();
  const double y_tip = contour_left.back().y();
  const double merge_tol = 1e-7 * diag + 1e-12;

  Grid2 grid;
  grid.m1 = m1;
  grid.m2 = m2;
  grid.pts.resize(static_cast<std::size_t>(m1) * m2);
  for (int r = 0; r < m1; ++r) {
    const double y = y_base + (y_tip - y_base) * r / (m1 - 1);
    const auto left_runs = horizontal_crossings(contour_left, y, merge_tol);
    const auto right_runs = horizontal_crossings(contour_right, y, merge_tol);
    if (left_runs.size() != 1 || right_runs.size() != 1) {
      throw std::runtime_error(
          "build_grid_oval: contour is not oval at sampled height " +
          std::to_string(y) + " (multi-lobed outline)");
    }
    const double xl = left_runs.front().lo;
    const double xr = right_runs.front().hi;
    for (int c = 0; c < m2; ++c) {
      const double t = static_cast<double>(c) / (m2 - 1);
      grid.at(r, c) = Vec2(xl + (xr - xl) * t, y);
    }
  }
  return grid;
}

namespace {

// Catmull-Rom tensor refinement of the grid by an integer factor along both
// axes. The refined grid retains the original control points exactly.
Grid3 refine_grid(const Grid3& grid, int factor) {
  const int m1p = (grid.m1 - 1) * factor + 1;
  const int m2p = (grid.m2 - 1) * factor + 1;

  // Rows first.
  Grid3 rows;
  rows.m1 = grid.m1;
  rows.m2 = m2p;
  rows.pts.resize(static_cast<std::size_t>(grid.m1) * m2p);
  std::vector<Vec3> line;
  for (int r = 0; r < grid.m1; ++r) {
    line.assign(grid.pts.begin() + static_cast<std::size_t>(r) * grid.m2,
                grid.pts.begin() + static_cast<std::size_t>(r + 1) * grid.m2);
    const auto samples = sample_open_curve(line, factor);
    for (int c = 0; c < m2p; ++c) rows.at(r, c) = samples[c];
  }

  // Then columns of the row-refined grid.
  Grid3 out;
  out.m1 = m1p;
  out.m2 = m2p;
  out.pts.resize(static_cast<std::size_t>(m1p) * m2p);
  for (int c = 0; c < m2p; ++c) {
    line.clear();
    for (int r = 0; r < grid.m1; ++r) line.push_back(rows.at(r, c));
    const auto samples = sample_open_curve(line, factor);
    for (int r = 0; r < m1p; ++r) out.at(r, c) = samples[r];
  }
  return out;
}

}  // namespace

TriMesh leaf_mesh(const Grid3& grid, int subdivision) {
  if (grid.m1 < 2 || grid.m2 < 2) {
    throw std::invalid_argument("leaf_mesh: grid must be at least 2x2");
  }
  if (subdivision < 1) {
    throw std::invalid_argument("leaf_mesh: subdivision must be >= 1");
  }
  Grid3 refined;
  const Grid3* g = &grid;
  if (subdivision > 1) {
    refined = refine_grid(grid, subdivision);
    g = &refined;
  }

  TriMesh mesh;
  mesh.vertices = g->pts;
  mesh.vertex_node_id.assign(g->pts.size(), 0);
  mesh.faces.reserve(static_cast<std::size_t>(g->m1 - 1) * (g->m2 - 1) * 2);
  auto vid = [g](int r, int c) { return r * g->m2 + c; };
  for (int r = 0; r + 1 < g->m1; ++r) {
    for (int c = 0; c + 1 < g->m2; ++c) {
      mesh.faces.emplace_back(vid(r, c), vid(r, c + 1), vid(r + 1, c + 1));
      mesh.faces.emplace_back(vid(r, c), vid(r + 1, c + 1), vid(r + 1, c));
    }
  }
  return mesh;
}

TriMesh stem_mesh(const std::vector<Vec3>& axis, double radius,
                  int radial_segments, int samples_per_segment) {
  if (radius <= 0.0) throw std::invalid_argument("stem_mesh: radius <= 0");
  if (radial_segments < 3) {
    throw std::invalid_argument("stem_mesh: radial_segments < 3");
  }
  if (axis.size() < 2) {
    throw std::invalid_argument("stem_mesh: need >= 2 axis points");
  }
  const auto samples = sample_open_curve(axis, samples_per_segment);
  const FrameSequence frames = stem_frames(samples);
  const int rings = static_cast<int>(samples.size());
  const int n = radial_segments;

  TriMesh mesh;
  mesh.vertices.reserve(static_cast<std::size_t>(rings) * n + 2);
  for (int i = 0; i < rings; ++i) {
    const Mat3& frame = frames.frames[i];
    const Vec3 ex = frame.col(0);
    const Vec3 ez = frame.col(2);
    for (int j = 0; j < n; ++j) {
      const double angle = 2.0 * M_PI * j / n;
      mesh.vertices.push_back(samples[i] + radius * (std::cos(angle) * ex +
                                                     std::sin(angle) * ez));
    }
  }
  const int bottom_center = rings * n;
  const int top_center = rings * n + 1;
  mesh.vertices.push_back(samples.front());
  mesh.vertices.push_back(samples.back());
  mesh.vertex_node_id.assign(mesh.vertices.size(), 0);

  auto vid = [n](int ring, int j) { return ring * n + j % n; };
  for (int i = 0; i + 1 < rings; ++i) {
    for (int j = 0; j < n; ++j) {
      mesh.faces.emplace_back(vid(i, j), vid(i + 1, j), vid(i + 1, j + 1));
      mesh.faces.emplace_back(vid(i, j), vid(i + 1, j + 1), vid(i, j + 1));
    }
  }
  for (int j = 0; j < n; ++j) {
    mesh.faces.emplace_back(bottom_center, vid(0, j + 1), vid(0, j));
    mesh.faces.emplace_back(top_center, vid(rings - 1, j), vid(rings - 1, j + 1));
  }
  return mesh;
}

}  // namespace phyta
