#include "phyta/kinematics.hpp"

#include <cmath>
#include <stdexcept>

namespace phyta {

FrameSequence stem_frames(const std::vector<Vec3>& axis_samples) {
  const std::size_t n = axis_samples.size();
  if (n < 2) {
    throw std::invalid_argument("stem_frames: need >= 2 samples");
  }
  std::vector<Vec3> dirs(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    dirs[i] = axis_samples[i + 1] - axis_samples[i];
    const double len = dirs[i].norm();
    if (len <= 0.0) {
      throw std::invalid_argument(
          "stem_frames: repeated consecutive points at index " +
          std::to_string(i));
    }
    dirs[i] /= len;
  }

  FrameSequence seq;
  seq.positions = axis_samples;
  seq.frames.resize(n);
  seq.frames[0] =
      Quat::FromTwoVectors(Vec3::UnitY(), dirs[0]).toRotationMatrix();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const Quat step = Quat::FromTwoVectors(dirs[i - 1], dirs[i]);
    seq.frames[i] = step.toRotationMatrix() * seq.frames[i - 1];
  }
  seq.frames[n - 1] = seq.frames[n - 2];
  seq.arcs = polyline_arc_length(axis_samples);
  return seq;
}

FramePoint frame_at_fraction(const FrameSequence& frames, double f) {
  double t = 0.0;
  const std::size_t seg = segment_at_fraction(frames.arcs, f, t);
  FramePoint fp;
  fp.position =
      (1.0 - t) * frames.positions[seg] + t * frames.positions[seg + 1];
  fp.frame = frames.frames[seg];
  return fp;
}

SimilarityTransform attachment_transform(const FrameSequence& parent_frames,
                                         const NodeArticulation& art) {
  if (!(art.d >= 0.0 && art.d <= 1.0)) {
    throw std::invalid_argument("attachment_transform: d outside [0,1]");
  }
  if (!(art.s > 0.0)) {
    throw std::invalid_argument("attachment_transform: scale must be > 0");
  }
  const FramePoint fp = frame_at_fraction(parent_frames, art.d);
  SimilarityTransform t;
  t.rotation = Quat(fp.frame) * art.tau;
  t.translation = fp.position;
  t.scale = art.s;
  return t;
}

std::unordered_map<int, SimilarityTransform> forward_chain(
    const Topology& topo,
    const std::unordered_map<int, NodeArticulation>& articulations,
    const std::unordered_map<int, FrameSequence>& deformed_skeletons) {
  std::unordered_map<int, SimilarityTransform> chain;
  for (int id : topo.topological_order()) {
    const TopologyNode& node = topo.nodes[topo.index_of(id)];
    const auto art_it = articulations.find(id);
    if (art_it == articulations.end()) {
      throw std::invalid_argument("forward_chain: missing articulation for node " +
                                  std::to_string(id));
    }
    const NodeArticulation& art = art_it->second;
    if (node.parent < 0) {
      SimilarityTransform root;
      root.rotation = art.tau;
      root.translation = Vec3::Zero();
      root.scale = art.s;
      chain[id] = root;
    } else {
      const auto skel_it = deformed_skeletons.find(node.parent);
      if (skel_it == deformed_skeletons.end()) {
        throw std::invalid_argument(
            "forward_chain: node " + std::to_string(id) +
            " attaches to node " + std::to_string(node.parent) +
            " which has no stem skeleton (leaf parent?)");
      }
      chain[id] = compose_similarity(
          chain.at(node.parent), attachment_transform(skel_it->second, art));
    }
  }
  return chain;
}

LeafSkeleton build_leaf_skeleton(int m1, int m2) {
  if (m1 < 2 || m2 < 3 || m2 % 2 == 0) {
    throw std::invalid_argument(
        "build_leaf_skeleton: need m1 >= 2 and odd m2 >= 3");
  }
  LeafSkeleton skel;
  skel.m1 = m1;
  skel.m2 = m2;
  skel.parent.assign(static_cast<std::size_t>(m1) * m2, -1);
  const int c0 = (m2 - 1) / 2;
  auto jid = [m2](int r, int c) { return r * m2 + c; };
  for (int r = 0; r < m1; ++r) {
    for (int c = 0; c < m2; ++c) {
      if (c == c0) {
        skel.parent[jid(r, c)] = r == 0 ? -1 : jid(r - 1, c0);
      } else if (c < c0) {
        skel.parent[jid(r, c)] = jid(r, c + 1);
      } else {
        skel.parent[jid(r, c)] = jid(r, c - 1);
      }
    }
  }
  return skel;
}

namespace {

// Right-handed base frame spanned by the grid's vein direction (column c0,
// mapped to the frame's y-axis) and row direction (x-axis). Joint rotations
// are conjugated through this frame, which makes the leaf kinematics
// equivariant under rigid motions of the input grid. Falls back to identity
// for degenerate grids.
Mat3 grid_base_frame(const Grid3& grid) {
  const int c0 = (grid.m2 - 1) / 2;
  Vec3 y_dir = grid.at(grid.m1 - 1, c0) - grid.at(0, c0);
  if (y_dir.norm() < 1e-12) return Mat3::Identity();
  y_dir.normalize();

  Vec3 x_raw = Vec3::Zero();
  double best = 0.0;
  for (int r = 0; r < grid.m1; ++r) {
    const Vec3 row = grid.at(r, grid.m2 - 1) - grid.at(r, 0);
    if (row.norm() > best) {
      best = row.norm();
      x_raw = row;
    }
  }
  Vec3 x_dir = x_raw - x_raw.dot(y_dir) * y_dir;
  if (x_dir.norm() < 1e-12) return Mat3::Identity();
  x_dir.normalize();

  Mat3 frame;
  frame.col(0) = x_dir;
  frame.col(1) = y_dir;
  frame.col(2) = x_dir.cross(y_dir);
  return frame;
}

std::vector<int> skeleton_order(const LeafSkeleton& skel) {
  // Parents always precede children when joints are visited center column
  // outward, rows ascending.
  std::vector<int> order;
  order.reserve(skel.joint_count());
  const int c0 = (skel.m2 - 1) / 2;
  for (int r = 0; r < skel.m1; ++r) order.push_back(r * skel.m2 + c0);
  for (int off = 1; off <= c0; ++off) {
    for (int r = 0; r < skel.m1; ++r) {
      order.push_back(r * skel.m2 + (c0 - off));
      order.push_back(r * skel.m2 + (c0 + off));
    }
  }
  return order;
}

}  // namespace

namespace {

// Per-joint conjugation frame: the leaf base frame yawed (about the leaf
// normal) so its y-axis follows the joint's rest chain direction. This makes
// the x-angle an out-of-plane bend and the z-angle an in-plane splay for
// every chain, main vein and sub-veins alike.
Mat3 joint_frame(const Mat3& base, const Vec2& chain_dir) {
  const double n = chain_dir.norm();
  if (n < 1e-12) return base;
  const double dx = chain_dir.x() / n;
  const double dy = chain_dir.y() / n;
  Mat3 yaw;
  yaw.col(0) = Vec3(dy, -dx, 0.0);
  yaw.col(1) = Vec3(dx, dy, 0.0);
  yaw.col(2) = Vec3(0.0, 0.0, 1.0);
  return base * yaw;
}

}  // namespace

Grid3 deform_leaf_angles(const Grid3& grid, const LeafSkeleton& skeleton,
                         const VecX& angles) {
  if (grid.m1 != skeleton.m1 || grid.m2 != skeleton.m2) {
    throw std::invalid_argument("deform_leaf_angles: grid/skeleton mismatch");
  }
  if (angles.size() != skeleton.angle_count()) {
    throw std::invalid_argument("deform_leaf_angles: angle count mismatch");
  }

  const Mat3 base = grid_base_frame(grid);
  const int c0 = (skeleton.m2 - 1) / 2;

  Grid3 out = grid;
  std::vector<Mat3> acc(skeleton.joint_count());
  for (int j : skeleton_order(skeleton)) {
    const int p = skeleton.parent[j];
    // Rest chain direction; the root joint takes its direction from the
    // first main-vein segment.
    Vec3 rest_offset;
    if (p >= 0) {
      rest_offset = grid.pts[j] - grid.pts[p];
    } else if (skeleton.m1 > 1) {
      rest_offset = grid.at(1, c0) - grid.at(0, c0);
    } else {
      rest_offset = Vec3::UnitY();
    }
    const Vec3 in_plane = base.transpose() * rest_offset;
    const Mat3 frame = joint_frame(base, Vec2(in_plane.x(), in_plane.y()));
    const Mat3 local =
        frame *
        (Eigen::AngleAxisd(angles[2 * j], Vec3::UnitX()) *
         Eigen::AngleAxisd(angles[2 * j + 1], Vec3::UnitZ()))
            .toRotationMatrix() *
        frame.transpose();
    if (p < 0) {
      acc[j] = local;
      out.pts[j] = grid.pts[j];
    } else {
      acc[j] = acc[p] * local;
      out.pts[j] = out.pts[p] + acc[j] * (grid.pts[j] - grid.pts[p]);
    }
  }
  return out;
}

Grid3 deform_leaf(const Grid3& grid, const LeafSkeleton& skeleton,
                  const PcaBasis& deform_basis, const VecX& gamma) {
  if (deform_basis.dim != skeleton.angle_count()) {
    throw std::invalid_argument("deform_leaf: basis dimension mismatch");
  }
  return deform_leaf_angles(grid, skeleton,
                            pca_decode_offset(deform_basis, gamma));
}

std::vector<Vec3> deform_stem(const std::vector<Vec3>& axis,
                              const VecX& angles) {
  const int m_s = static_cast<int>(axis.size());
  if (m_s < 2) throw std::invalid_argument("deform_stem: need >= 2 points");
  if (angles.size() != 2 * (m_s - 1)) {
    throw std::invalid_argument("deform_stem: expected 2*(m_s-1) angles");
  }

  const FrameSequence rest = stem_frames(axis);
  std::vector<Vec3> out(axis.size());
  out[0] = axis[0];
  Mat3 acc = Mat3::Identity();
  for (int k = 0; k + 1 < m_s; ++k) {
    if (k >= 1) {
      const Mat3& f = rest.frames[k];
      acc = acc * f *
            (Eigen::AngleAxisd(angles[2 * (k - 1)], Vec3::UnitX()) *
             Eigen::AngleAxisd(angles[2 * (k - 1) + 1], Vec3::UnitZ()))
                .toRotationMatrix() *
            f.transpose();
    }
    out[k + 1] = out[k] + acc * (axis[k + 1] - axis[k]);
  }
  return out;
}

}  // namespace phyta
