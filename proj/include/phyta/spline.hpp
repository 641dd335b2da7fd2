#pragma once

// Catmull-Rom curve evaluation, open-curve sampling with virtual end control
// points, and arc-length tables. Dimension-generic (2D leaf contours and
// 3D skeletons share the same kernel).

#include "phyta/types.hpp"

#include <stdexcept>
#include <vector>

namespace phyta {

/// Blending weights (C0,C1,C2,C3) of the cubic Catmull-Rom segment at
/// parameter t with curvature parameter alpha. The weights sum to 1 for any
/// (t, alpha). Throws std::invalid_argument when t is outside [0,1].
Vec4 catmull_weights(double t, double alpha);

/// Evaluates one Catmull-Rom segment spanned by four consecutive control
/// points; eval_segment(...,0) == p1 and eval_segment(...,1) == p2 exactly.
template <typename Vec>
Vec eval_segment(const Vec& p0, const Vec& p1, const Vec& p2, const Vec& p3,
                 double t, double alpha) {
  const Vec4 w = catmull_weights(t, alpha);
  return w[0] * p0 + w[1] * p1 + w[2] * p2 + w[3] * p3;
}

/// Default curvature parameter used throughout the library.
inline constexpr double kCatmullAlpha = 0.5;

/// Samples an open control polyline through every control point. Virtual end
/// control points p_{-1} = 2 p_0 - p_1 and p_{K} = 2 p_{K-1} - p_{K-2} make
/// the end segments evaluable. Each of the K-1 segments contributes
/// `samples_per_segment` samples plus the final endpoint, so the result has
/// (K-1) * samples_per_segment + 1 points and segment joins are C1.
template <typename Vec>
std::vector<Vec> sample_open_curve(const std::vector<Vec>& points,
                                   int samples_per_segment,
                                   double alpha = kCatmullAlpha) {
  if (points.size() < 2) {
    throw std::invalid_argument("sample_open_curve: need at least 2 points");
  }
  if (samples_per_segment < 1) {
    throw std::invalid_argument("sample_open_curve: samples_per_segment < 1");
  }
  const std::size_t k = points.size();
  std::vector<Vec> ext;
  ext.reserve(k + 2);
  ext.push_back(Vec(2.0 * points[0] - points[1]));
  ext.insert(ext.end(), points.begin(), points.end());
  ext.push_back(Vec(2.0 * points[k - 1] - points[k - 2]));

  std::vector<Vec> out;
  out.reserve((k - 1) * samples_per_segment + 1);
  for (std::size_t seg = 0; seg + 1 < k; ++seg) {
    for (int i = 0; i < samples_per_segment; ++i) {
      const double t = static_cast<double>(i) / samples_per_segment;
      out.push_back(eval_segment(ext[seg], ext[seg + 1], ext[seg + 2],
                                 ext[seg + 3], t, alpha));
    }
  }
  out.push_back(points.back());
  return out;
}

/// Cumulative arc-length table over a sampled polyline.
struct ArcTable {
  std::vector<double> cumulative;  // cumulative[0] == 0, monotone
  double total = 0.0;
};

/// Builds the cumulative table of consecutive Euclidean distances.
/// Throws std::invalid_argument for fewer than 2 samples.
template <typename Vec>
ArcTable polyline_arc_length(const std::vector<Vec>& samples) {
  if (samples.size() < 2) {
    throw std::invalid_argument("polyline_arc_length: need >= 2 samples");
  }
  ArcTable table;
  table.cumulative.resize(samples.size());
  table.cumulative[0] = 0.0;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    table.cumulative[i] =
        table.cumulative[i - 1] + (samples[i] - samples[i - 1]).norm();
  }
  table.total = table.cumulative.back();
  return table;
}

/// Index of the segment containing arc-length fraction f in [0,1], using the
/// later segment when f lands exactly on an interior sample. Also returns the
/// local interpolation parameter within that segment through `local_t`.
std::size_t segment_at_fraction(const ArcTable& table, double f,
                                double& local_t);

/// Point at arc-length fraction f along the sampled polyline.
template <typename Vec>
Vec point_at_fraction(const std::vector<Vec>& samples, const ArcTable& table,
                      double f) {
  double t = 0.0;
  const std::size_t seg = segment_at_fraction(table, f, t);
  return Vec((1.0 - t) * samples[seg] + t * samples[seg + 1]);
}

}  // namespace phyta
