#include "phyta/chamfer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace phyta {

KdTree3::KdTree3(const std::vector<Vec3>& points) : pts_(points) {
  if (pts_.empty()) throw std::invalid_argument("KdTree3: empty point set");
  order_.resize(pts_.size());
  for (std::size_t i = 0; i < pts_.size(); ++i) order_[i] = static_cast<int>(i);
  nodes_.reserve(2 * pts_.size() / 8 + 8);
  root_ = build(0, static_cast<int>(pts_.size()));
}

int KdTree3::build(int begin, int end) {
  Node node;
  node.begin = begin;
  node.end = end;
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= 8) return id;

  Vec3 lo = pts_[order_[begin]], hi = lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(pts_[order_[i]]);
    hi = hi.cwiseMax(pts_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end, [&](int a, int b) {
                     return pts_[a][axis] < pts_[b][axis];
                   });
  const double split = pts_[order_[mid]][axis];

  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree3::query(int node_id, const Vec3& q, double& best,
                    int* best_index) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const double d2 = (pts_[order_[i]] - q).squaredNorm();
      if (d2 < best) {
        best = d2;
        if (best_index) *best_index = order_[i];
      }
    }
    return;
  }
  const double delta = q[node.axis] - node.split;
  const int near = delta < 0.0 ? node.left : node.right;
  const int far = delta < 0.0 ? node.right : node.left;
  query(near, q, best, best_index);
  if (delta * delta < best) query(far, q, best, best_index);
}

double KdTree3::nearest_squared(const Vec3& q) const {
  double best = std::numeric_limits<double>::max();
  query(root_, q, best, nullptr);
  return best;
}

int KdTree3::nearest_index(const Vec3& q) const {
  double best = std::numeric_limits<double>::max();
  int index = 0;
  query(root_, q, best, &index);
  return index;
}

namespace {

double directed_mean(const std::vector<Vec3>& from, const KdTree3& to,
                     CdVariant variant) {
  double sum = 0.0;
  for (const auto& p : from) {
    const double d2 = to.nearest_squared(p);
    sum += variant == CdVariant::L2 ? d2 : std::sqrt(d2);
  }
  return sum / static_cast<double>(from.size());
}

}  // namespace

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
               CdVariant variant) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("chamfer: empty point set");
  }
  const KdTree3 tree_a(a);
  const KdTree3 tree_b(b);
  return chamfer_indexed(a, tree_a, b, tree_b, variant);
}

double chamfer_indexed(const std::vector<Vec3>& a, const KdTree3& tree_a,
                       const std::vector<Vec3>& b, const KdTree3& tree_b,
                       CdVariant variant) {
  return directed_mean(a, tree_b, variant) + directed_mean(b, tree_a, variant);
}

double bbox_diagonal(const std::vector<Vec3>& points) {
  if (points.empty()) {
    throw std::invalid_argument("bbox_diagonal: empty point set");
  }
  Vec3 lo = points[0], hi = points[0];
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

double normalized_chamfer(double raw_cd, double reference_diagonal,
                          CdVariant variant) {
  if (!(reference_diagonal > 0.0)) {
    throw std::invalid_argument("normalized_chamfer: non-positive diagonal");
  }
  return variant == CdVariant::L2
             ? raw_cd / (reference_diagonal * reference_diagonal)
             : raw_cd / reference_diagonal;
}

SurfacePattern make_surface_pattern(const TriMesh& mesh, int count,
                                    std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_surface_pattern: count < 1");
  if (mesh.faces.empty()) {
    throw std::invalid_argument("make_surface_pattern: empty mesh");
  }
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    const Vec3& a = mesh.vertices[face[0]];
    const Vec3& b = mesh.vertices[face[1]];
    const Vec3& c = mesh.vertices[face[2]];
    total += 0.5 * (b - a).cross(c - a).norm();
    cumulative[f] = total;
  }
  if (!(total > 0.0)) {
    throw std::invalid_argument("make_surface_pattern: zero-area mesh");
  }

  SurfacePattern pattern;
  pattern.face.resize(count);
  pattern.bary.resize(count);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    const double pick = uniform(rng) * total;
    const auto it =
        std::lower_bound(cumulative.begin(), cumulative.end(), pick);
    pattern.face[i] = static_cast<int>(it - cumulative.begin());
    // Uniform barycentric sampling via the square-root trick.
    const double r1 = std::sqrt(uniform(rng));
    const double r2 = uniform(rng);
    pattern.bary[i] = Vec2(1.0 - r1, r1 * (1.0 - r2));
  }
  return pattern;
}

std::vector<Vec3> eval_surface_pattern(const TriMesh& mesh,
                                       const SurfacePattern& pattern) {
  std::vector<Vec3> out(pattern.face.size());
  for (std::size_t i = 0; i < pattern.face.size(); ++i) {
    const auto& face = mesh.faces[pattern.face[i]];
    const double u = pattern.bary[i].x();
    const double v = pattern.bary[i].y();
    const double w = 1.0 - u - v;
    out[i] = u * mesh.vertices[face[0]] + v * mesh.vertices[face[1]] +
             w * mesh.vertices[face[2]];
  }
  return out;
}

std::vector<Vec3> sample_surface_points(const TriMesh& mesh, int count,
                                        std::uint64_t seed) {
  return eval_surface_pattern(mesh, make_surface_pattern(mesh, count, seed));
}

}  // namespace phyta
