#include "phyta/laplace.hpp"

#include "phyta/spline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace phyta {

namespace {

constexpr int kLeftSide = 0;
constexpr int kRightSide = 1;

// Prescribed boundary mapping onto the unit disk: each side covers one half
// of the rim, parameterized by its arc-length fraction from base to tip.
Vec2 disk_boundary_uv(int side, double f) {
  const double phi = side == kLeftSide ? (1.5 * M_PI - f * M_PI)
                                       : (-0.5 * M_PI + f * M_PI);
  return Vec2(0.5 + 0.5 * std::cos(phi), 0.5 + 0.5 * std::sin(phi));
}

double cross2(const Vec2& a, const Vec2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

bool point_in_polygon(const Vec2& p, const std::vector<Vec2>& poly) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = poly[j];
    const Vec2& b = poly[i];
    if ((b.y() > p.y()) != (a.y() > p.y())) {
      const double x =
          b.x() + (p.y() - b.y()) / (a.y() - b.y()) * (a.x() - b.x());
      if (x > p.x()) inside = !inside;
    }
  }
  return inside;
}

// One directed boundary edge with its side id and arc-length range.
struct BoundaryEdge {
  Vec2 a, b;
  int side;
  double s0, s1;
};

// Intersection parameter t along p -> q with the edge, or -1 when none.
double segment_edge_intersection(const Vec2& p, const Vec2& q,
                                 const BoundaryEdge& e, double& edge_t) {
  const Vec2 d1 = q - p;
  const Vec2 d2 = e.b - e.a;
  const double denom = cross2(d1, d2);
  if (std::abs(denom) < 1e-300) return -1.0;
  const Vec2 ap = e.a - p;
  const double t = cross2(ap, d2) / denom;
  const double s = cross2(ap, d1) / denom;
  const double eps = 1e-12;
  if (t < -eps || t > 1.0 + eps || s < -eps || s > 1.0 + eps) return -1.0;
  edge_t = std::clamp(s, 0.0, 1.0);
  return std::clamp(t, 0.0, 1.0);
}

struct ClosestHit {
  double dist2 = std::numeric_limits<double>::max();
  int side = kLeftSide;
  double arc = 0.0;
};

void closest_on_polyline(const Vec2& p, const std::vector<Vec2>& poly,
                         const std::vector<double>& cum, int side,
                         ClosestHit& best) {
  for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
    const Vec2 d = poly[i + 1] - poly[i];
    const double len2 = d.squaredNorm();
    double t = len2 > 0.0 ? (p - poly[i]).dot(d) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec2 proj = poly[i] + t * d;
    const double dist2 = (p - proj).squaredNorm();
    if (dist2 < best.dist2) {
      best.dist2 = dist2;
      best.side = side;
      best.arc = cum[i] + t * (cum[i + 1] - cum[i]);
    }
  }
}

std::vector<double> cumulative_lengths(const std::vector<Vec2>& poly) {
  std::vector<double> cum(poly.size(), 0.0);
  for (std::size_t i = 1; i < poly.size(); ++i) {
    cum[i] = cum[i - 1] + (poly[i] - poly[i - 1]).norm();
  }
  return cum;
}

}  // namespace

Vec2 UvMapping::boundary_uv_at_closest(const Vec2& p) const {
  ClosestHit best;
  closest_on_polyline(p, left_, left_cum_, kLeftSide, best);
  closest_on_polyline(p, right_, right_cum_, kRightSide, best);
  const auto& cum = best.side == kLeftSide ? left_cum_ : right_cum_;
  const double total = cum.back();
  return disk_boundary_uv(best.side, total > 0.0 ? best.arc / total : 0.0);
}

double UvMapping::stencil_average(const SolvedNode& node, bool v_field) const {
  const std::vector<double>& field = v_field ? v_ : u_;
  double num = 0.0;
  double den = 0.0;
  // Opposite arm pairs share the (a_i + a_j) normalization of the cut-cell
  // five-point stencil; full arms reduce it to the plain four-neighbor mean.
  for (int pair = 0; pair < 2; ++pair) {
    const NodeArm& fwd = node.arm[2 * pair];
    const NodeArm& bwd = node.arm[2 * pair + 1];
    const double sum = fwd.len + bwd.len;
    const double cf = 2.0 / (fwd.len * sum);
    const double cb = 2.0 / (bwd.len * sum);
    const double vf = fwd.neighbor >= 0 ? field[fwd.neighbor]
                                        : (v_field ? fwd.bval.y() : fwd.bval.x());
    const double vb = bwd.neighbor >= 0 ? field[bwd.neighbor]
                                        : (v_field ? bwd.bval.y() : bwd.bval.x());
    num += cf * vf + cb * vb;
    den += cf + cb;
  }
  return num / den;
}

double UvMapping::stencil_residual() const {
  double worst = 0.0;
  for (const auto& node : solved_) {
    worst = std::max(worst,
                     std::abs(stencil_average(node, false) - u_[node.index]));
    worst = std::max(worst,
                     std::abs(stencil_average(node, true) - v_[node.index]));
  }
  return worst;
}

Vec2 UvMapping::forward(const Vec2& p) const {
  const double fx = (p.x() - x0_) / h_;
  const double fy = (p.y() - y0_) / h_;
  const int i = std::clamp(static_cast<int>(std::floor(fx)), 0, nx_ - 2);
  const int j = std::clamp(static_cast<int>(std::floor(fy)), 0, ny_ - 2);
  const int i00 = node_index(i, j);
  const int i10 = node_index(i + 1, j);
  const int i01 = node_index(i, j + 1);
  const int i11 = node_index(i + 1, j + 1);
  if (node_valued(i00) && node_valued(i10) && node_valued(i01) &&
      node_valued(i11)) {
    const double s = std::clamp(fx - i, 0.0, 1.0);
    const double t = std::clamp(fy - j, 0.0, 1.0);
    const double w00 = (1 - s) * (1 - t), w10 = s * (1 - t);
    const double w01 = (1 - s) * t, w11 = s * t;
    return Vec2(
        w00 * u_[i00] + w10 * u_[i10] + w01 * u_[i01] + w11 * u_[i11],
        w00 * v_[i00] + w10 * v_[i10] + w01 * v_[i01] + w11 * v_[i11]);
  }
  return boundary_uv_at_closest(p);
}

void UvMapping::build_inverse_buckets() {
  buckets_.assign(static_cast<std::size_t>(bucket_res_) * bucket_res_, {});
  auto bucket_range = [this](double lo, double hi, int& b0, int& b1) {
    b0 = std::clamp(static_cast<int>(std::floor(lo * bucket_res_)), 0,
                    bucket_res_ - 1);
    b1 = std::clamp(static_cast<int>(std::floor(hi * bucket_res_)), 0,
                    bucket_res_ - 1);
  };
  for (int j = 0; j + 1 < ny_; ++j) {
    for (int i = 0; i + 1 < nx_; ++i) {
      const int c[4] = {node_index(i, j), node_index(i + 1, j),
                        node_index(i, j + 1), node_index(i + 1, j + 1)};
      if (!node_valued(c[0]) || !node_valued(c[1]) || !node_valued(c[2]) ||
          !node_valued(c[3])) {
        continue;
      }
      double ulo = 1e300, uhi = -1e300, vlo = 1e300, vhi = -1e300;
      for (int k = 0; k < 4; ++k) {
        ulo = std::min(ulo, u_[c[k]]);
        uhi = std::max(uhi, u_[c[k]]);
        vlo = std::min(vlo, v_[c[k]]);
        vhi = std::max(vhi, v_[c[k]]);
      }
      int bu0, bu1, bv0, bv1;
      bucket_range(ulo, uhi, bu0, bu1);
      bucket_range(vlo, vhi, bv0, bv1);
      for (int bv = bv0; bv <= bv1; ++bv) {
        for (int bu = bu0; bu <= bu1; ++bu) {
          buckets_[static_cast<std::size_t>(bv) * bucket_res_ + bu].push_back(
              {i, j});
        }
      }
    }
  }
}

Vec2 UvMapping::inverse(const Vec2& uv) const {
  const int bu = std::clamp(static_cast<int>(std::floor(uv.x() * bucket_res_)),
                            0, bucket_res_ - 1);
  const int bv = std::clamp(static_cast<int>(std::floor(uv.y() * bucket_res_)),
                            0, bucket_res_ - 1);
  const auto& cands =
      buckets_[static_cast<std::size_t>(bv) * bucket_res_ + bu];

  // Prefer cells made purely of solved/boundary nodes; rim-extrapolated cells
  // are a second-choice fallback.
  for (int pass = 0; pass < 2; ++pass) {
    for (const CellRef& cell : cands) {
      const int c00 = node_index(cell.i, cell.j);
      const int c10 = node_index(cell.i + 1, cell.j);
      const int c01 = node_index(cell.i, cell.j + 1);
      const int c11 = node_index(cell.i + 1, cell.j + 1);
      const bool strict = mask_[c00] != 3 && mask_[c10] != 3 &&
                          mask_[c01] != 3 && mask_[c11] != 3;
      if ((pass == 0) != strict) continue;

      const Vec2 q00(u_[c00], v_[c00]), q10(u_[c10], v_[c10]);
      const Vec2 q01(u_[c01], v_[c01]), q11(u_[c11], v_[c11]);
      // Newton inversion of the bilinear map.
      double s = 0.5, t = 0.5;
      bool ok = false;
      for (int it = 0; it < 20; ++it) {
        const Vec2 f = (1 - s) * (1 - t) * q00 + s * (1 - t) * q10 +
                       (1 - s) * t * q01 + s * t * q11 - uv;
        if (f.norm() < 1e-11) {
          ok = true;
          break;
        }
        const Vec2 fs = (1 - t) * (q10 - q00) + t * (q11 - q01);
        const Vec2 ft = (1 - s) * (q01 - q00) + s * (q11 - q10);
        const double det = cross2(fs, ft);
        if (std::abs(det) < 1e-18) break;
        const double ds = (f.x() * ft.y() - f.y() * ft.x()) / det;
        const double dt = (fs.x() * f.y() - fs.y() * f.x()) / det;
        s -= ds;
        t -= dt;
        if (s < -0.5 || s > 1.5 || t < -0.5 || t > 1.5) break;
      }
      if (ok && s > -0.02 && s < 1.02 && t > -0.02 && t < 1.02) {
        return node_pos(cell.i, cell.j) +
               Vec2(std::clamp(s, 0.0, 1.0) * h_, std::clamp(t, 0.0, 1.0) * h_);
      }
    }
  }

  // Rim fallback: map the UV angle back to a boundary arc position.
  const Vec2 r = uv - Vec2(0.5, 0.5);
  double phi = std::atan2(r.y(), r.x());
  if (phi < -0.5 * M_PI) phi += 2.0 * M_PI;  // normalize to [-pi/2, 3pi/2)
  int side;
  double f;
  if (phi >= 0.5 * M_PI) {
    side = kLeftSide;
    f = (1.5 * M_PI - phi) / M_PI;
  } else {
    side = kRightSide;
    f = (phi + 0.5 * M_PI) / M_PI;
  }
  f = std::clamp(f, 0.0, 1.0);
  const auto& poly = side == kLeftSide ? left_ : right_;
  const auto& cum = side == kLeftSide ? left_cum_ : right_cum_;
  ArcTable table;
  table.cumulative = cum;
  table.total = cum.back();
  return point_at_fraction(poly, table, f);
}

UvMapping solve_laplace_uv(const std::vector<Vec2>& contour_left,
                           const std::vector<Vec2>& contour_right,
                           int grid_resolution) {
  if (contour_left.size() < 2 || contour_right.size() < 2) {
    throw std::invalid_argument("solve_laplace_uv: contour side too short");
  }
  if (grid_resolution < 9) {
    throw std::invalid_argument("solve_laplace_uv: resolution too small");
  }

  // Closed polygon: left side base->tip, right side tip->base (interior
  // vertices only, endpoints are shared).
  std::vector<Vec2> poly = contour_left;
  for (std::size_t i = contour_right.size() - 1; i-- > 1;) {
    poly.push_back(contour_right[i]);
  }

  double area2 = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    area2 += cross2(poly[j], poly[i]);
  }
  Vec2 lo = poly[0], hi = poly[0];
  for (const auto& p : poly) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double diag = (hi - lo).norm();
  if (std::abs(area2) * 0.5 < 1e-12 * diag * diag + 1e-300) {
    throw std::runtime_error("solve_laplace_uv: degenerate zero-area domain");
  }

  // Edge list with per-side arc-length ranges.
  std::vector<BoundaryEdge> edges;
  const auto left_cum = cumulative_lengths(contour_left);
  const auto right_cum = cumulative_lengths(contour_right);
  for (std::size_t i = 0; i + 1 < contour_left.size(); ++i) {
    edges.push_back({contour_left[i], contour_left[i + 1], kLeftSide,
                     left_cum[i], left_cum[i + 1]});
  }
  for (std::size_t i = 0; i + 1 < contour_right.size(); ++i) {
    edges.push_back({contour_right[i], contour_right[i + 1], kRightSide,
                     right_cum[i], right_cum[i + 1]});
  }

  // Self-intersection scan (non-adjacent edge pairs of the closed outline).
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a0 = poly[i];
    const Vec2& a1 = poly[(i + 1) % poly.size()];
    for (std::size_t j = i + 2; j < poly.size(); ++j) {
      if (i == 0 && j + 1 == poly.size()) continue;  // shares the base vertex
      const Vec2& b0 = poly[j];
      const Vec2& b1 = poly[(j + 1) % poly.size()];
      const Vec2 d1 = a1 - a0, d2 = b1 - b0;
      const double denom = cross2(d1, d2);
      if (std::abs(denom) < 1e-300) continue;
      const Vec2 ab = b0 - a0;
      const double t = cross2(ab, d2) / denom;
      const double s = cross2(ab, d1) / denom;
      const double eps = 1e-9;
      if (t > eps && t < 1.0 - eps && s > eps && s < 1.0 - eps) {
        throw std::runtime_error("solve_laplace_uv: self-intersecting boundary");
      }
    }
  }

  UvMapping map;
  map.left_ = contour_left;
  map.right_ = contour_right;
  map.left_cum_ = left_cum;
  map.right_cum_ = right_cum;

  const double width = hi.x() - lo.x();
  const double height = hi.y() - lo.y();
  map.h_ = std::max(width, height) / (grid_resolution - 1);
  map.nx_ = std::max(2, static_cast<int>(std::ceil(width / map.h_ - 1e-12)) + 1);
  map.ny_ =
      std::max(2, static_cast<int>(std::ceil(height / map.h_ - 1e-12)) + 1);
  map.x0_ = lo.x();
  map.y0_ = lo.y();

  const int total_nodes = map.nx_ * map.ny_;
  map.mask_.assign(total_nodes, 0);
  map.u_.assign(total_nodes, 0.5);
  map.v_.assign(total_nodes, 0.5);

  std::vector<char> inside(total_nodes, 0);
  for (int j = 0; j < map.ny_; ++j) {
    for (int i = 0; i < map.nx_; ++i) {
      inside[map.node_index(i, j)] =
          point_in_polygon(map.node_pos(i, j), poly) ? 1 : 0;
    }
  }

  const int di[4] = {1, -1, 0, 0};
  const int dj[4] = {0, 0, 1, -1};
  auto arc_fraction_uv = [&](const BoundaryEdge& e, double et) {
    const double s = e.s0 + et * (e.s1 - e.s0);
    const double tot = e.side == kLeftSide ? left_cum.back() : right_cum.back();
    return disk_boundary_uv(e.side, tot > 0.0 ? s / tot : 0.0);
  };

  std::vector<UvMapping::SolvedNode> tentative;
  std::vector<char> dirichlet(total_nodes, 0);
  for (int j = 0; j < map.ny_; ++j) {
    for (int i = 0; i < map.nx_; ++i) {
      const int idx = map.node_index(i, j);
      if (!inside[idx]) continue;
      UvMapping::SolvedNode node;
      node.index = idx;
      bool on_boundary = false;
      for (int d = 0; d < 4; ++d) {
        const int ni = i + di[d];
        const int nj = j + dj[d];
        const bool have_nbr = ni >= 0 && ni < map.nx_ && nj >= 0 && nj < map.ny_;
        const int nidx = have_nbr ? map.node_index(ni, nj) : -1;
        if (have_nbr && inside[nidx]) {
          node.arm[d].len = map.h_;
          node.arm[d].neighbor = nidx;
          continue;
        }
        // Cut arm: nearest outline crossing along the grid segment.
        const Vec2 p = map.node_pos(i, j);
        const Vec2 q = p + Vec2(di[d] * map.h_, dj[d] * map.h_);
        double best_t = -1.0;
        Vec2 best_uv = Vec2::Zero();
        for (const auto& e : edges) {
          double et = 0.0;
          const double t = segment_edge_intersection(p, q, e, et);
          if (t >= 0.0 && (best_t < 0.0 || t < best_t)) {
            best_t = t;
            best_uv = arc_fraction_uv(e, et);
          }
        }
        if (best_t < 0.0) {
          // Robustness fallback: no crossing found for an inside->outside
          // arm; value the arm at the closest outline point.
          node.arm[d].len = 0.5 * map.h_;
          node.arm[d].bval = map.boundary_uv_at_closest(0.5 * (p + q));
          continue;
        }
        if (best_t < 1e-6) {
          on_boundary = true;
          break;
        }
        node.arm[d].len = best_t * map.h_;
        node.arm[d].bval = best_uv;
      }
      if (on_boundary) {
        dirichlet[idx] = 1;
        const Vec2 buv = map.boundary_uv_at_closest(map.node_pos(i, j));
        map.u_[idx] = buv.x();
        map.v_[idx] = buv.y();
        map.mask_[idx] = 2;
      } else {
        tentative.push_back(node);
      }
    }
  }
  for (const auto& node : tentative) {
    if (!dirichlet[node.index]) {
      map.mask_[node.index] = 1;
      map.solved_.push_back(node);
    }
  }
  if (map.solved_.empty() && tentative.empty()) {
    throw std::runtime_error("solve_laplace_uv: empty rasterized interior");
  }

  // SOR sweeps with the overrelaxation factor tuned to the grid size.
  const int n_max = std::max(map.nx_, map.ny_);
  const double omega = 2.0 / (1.0 + std::sin(M_PI / n_max));
  const int max_sweeps = 200 * n_max;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (const auto& node : map.solved_) {
      const double au = map.stencil_average(node, false);
      const double av = map.stencil_average(node, true);
      map.u_[node.index] += omega * (au - map.u_[node.index]);
      map.v_[node.index] += omega * (av - map.v_[node.index]);
    }
    if (sweep % 32 == 31 && map.stencil_residual() < 1e-9) break;
  }

  // Rim extrapolation: outside nodes bordering the interior get boundary
  // values so bilinear cells exist all the way to the outline.
  for (int j = 0; j < map.ny_; ++j) {
    for (int i = 0; i < map.nx_; ++i) {
      const int idx = map.node_index(i, j);
      if (map.mask_[idx] != 0) continue;
      bool rim = false;
      for (int dy = -1; dy <= 1 && !rim; ++dy) {
        for (int dx = -1; dx <= 1 && !rim; ++dx) {
          const int ni = i + dx;
          const int nj = j + dy;
          if (ni < 0 || ni >= map.nx_ || nj < 0 || nj >= map.ny_) continue;
          rim = inside[map.node_index(ni, nj)] != 0;
        }
      }
      if (rim) {
        const Vec2 buv = map.boundary_uv_at_closest(map.node_pos(i, j));
        map.u_[idx] = buv.x();
        map.v_[idx] = buv.y();
        map.mask_[idx] = 3;
      }
    }
  }

  map.build_inverse_buckets();
  return map;
}

Grid2 build_grid_laplace(const std::vector<Vec2>& contour_left,
                         const std::vector<Vec2>& contour_right, int m1,
                         int m2, int grid_resolution) {
  if (m1 < 3 || m2 < 3) {
    throw std::invalid_argument("build_grid_laplace: grid dims must be >= 3");
  }
  const UvMapping map =
      solve_laplace_uv(contour_left, contour_right, grid_resolution);
  Grid2 grid;
  grid.m1 = m1;
  grid.m2 = m2;
  grid.pts.resize(static_cast<std::size_t>(m1) * m2);
  for (int r = 0; r < m1; ++r) {
    const double vcoord = static_cast<double>(r) / (m1 - 1);
    const double chord =
        std::sqrt(std::max(0.0, 0.25 - (vcoord - 0.5) * (vcoord - 0.5)));
    for (int c = 0; c < m2; ++c) {
      const double span = m2 > 1 ? 2.0 * c / (m2 - 1) - 1.0 : 0.0;
      grid.at(r, c) = map.inverse(Vec2(0.5 + span * chord, vcoord));
    }
  }
  return grid;
}

}  // namespace phyta
