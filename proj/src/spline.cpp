#include "phyta/spline.hpp"

#include <algorithm>
#include <cmath>

namespace phyta {

Vec4 catmull_weights(double t, double alpha) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument("catmull_weights: t outside [0,1]");
  }
  const double t2 = t * t;
  const double t3 = t2 * t;
  Vec4 w;
  w[0] = -alpha * t + 2.0 * alpha * t2 - alpha * t3;
  w[1] = 1.0 + (alpha - 3.0) * t2 + (2.0 - alpha) * t3;
  w[2] = alpha * t + (3.0 - 2.0 * alpha) * t2 + (alpha - 2.0) * t3;
  w[3] = -alpha * t2 + alpha * t3;
  return w;
}

std::size_t segment_at_fraction(const ArcTable& table, double f,
                                double& local_t) {
  const double target = std::clamp(f, 0.0, 1.0) * table.total;
  const auto& cum = table.cumulative;
  // First segment whose far end passes the target; exact hits on an interior
  // sample fall into the *later* segment so that frames taken at a bend use
  // the post-bend orientation.
  auto it = std::upper_bound(cum.begin(), cum.end(), target);
  std::size_t seg = (it == cum.begin())
                        ? 0
                        : static_cast<std::size_t>(it - cum.begin()) - 1;
  seg = std::min(seg, cum.size() - 2);
  const double seg_len = cum[seg + 1] - cum[seg];
  local_t = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
  return seg;
}

}  // namespace phyta
