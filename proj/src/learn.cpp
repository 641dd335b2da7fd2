#include "phyta/learn.hpp"

#include "phyta/laplace.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace phyta {

std::vector<Vec2> align_contour(const std::vector<Vec2>& side, const Vec2& base,
                                const Vec2& tip, double scale) {
  const Vec2 dir = tip - base;
  const double n = dir.norm();
  if (n < 1e-12) {
    throw std::invalid_argument("align_contour: base and tip coincide");
  }
  // Rotation sending (tip - base) onto +y.
  const double c = dir.y() / n;
  const double s = dir.x() / n;
  std::vector<Vec2> out;
  out.reserve(side.size());
  for (const auto& p : side) {
    const Vec2 q = p - base;
    out.emplace_back(scale * (c * q.x() - s * q.y()),
                     scale * (s * q.x() + c * q.y()));
  }
  return out;
}

ShapeLearnResult learn_shape_basis(const std::vector<ContourSample>& contours,
                                   int m1, int m2, int k,
                                   int laplace_resolution) {
  if (m2 % 2 == 0 || m2 < 3 || m1 < 3) {
    throw std::invalid_argument("learn_shape_basis: need m1 >= 3, odd m2 >= 3");
  }
  ShapeLearnResult result;
  std::vector<VecX> rows;
  for (std::size_t i = 0; i < contours.size(); ++i) {
    const ContourSample& sample = contours[i];
    const std::string label =
        sample.name.empty() ? "sample " + std::to_string(i) : sample.name;
    try {
      if (sample.left.size() < 2 || sample.right.size() < 2) {
        throw std::runtime_error("contour side too short");
      }
      const Vec2 base = sample.left.front();
      const Vec2 tip = sample.left.back();
      const double scale = sample.mm_per_unit / 1000.0;  // store meters
      const auto left = align_contour(sample.left, base, tip, scale);
      const auto right = align_contour(sample.right, base, tip, scale);
      Grid2 grid;
      try {
        grid = build_grid_oval(left, right, m1, m2);
      } catch (const std::exception&) {
        grid = build_grid_laplace(left, right, m1, m2, laplace_resolution);
      }
      rows.push_back(flatten_grid(grid));
    } catch (const std::exception& e) {
      result.skipped.push_back(label + ": " + e.what());
    }
  }
  if (rows.size() < 2) {
    throw std::runtime_error(
        "learn_shape_basis: fewer than 2 usable leaves (" +
        std::to_string(rows.size()) + " of " +
        std::to_string(contours.size()) + ")");
  }

  MatX data(static_cast<int>(rows.size()), 2 * m1 * m2);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    data.row(static_cast<int>(r)) = rows[r].transpose();
  }
  result.basis = pca_fit(data, k);
  result.tmpl.m1 = m1;
  result.tmpl.m2 = m2;
  result.tmpl.grid = unflatten_grid(result.basis.mean, m1, m2);
  result.used_samples = static_cast<int>(rows.size());
  return result;
}

PcaBasis learn_deform_basis(const MatX& angle_sets, int k) {
  if (!angle_sets.allFinite()) {
    throw std::invalid_argument("learn_deform_basis: non-finite angles");
  }
  return pca_fit(angle_sets, k);
}

}  // namespace phyta
