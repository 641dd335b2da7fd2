#pragma once

// Skeleton frames, attachment transforms, the root-to-node kinematic chain,
// and rigidity-preserving skeletal deformation of leaves and stems.

#include "phyta/spline.hpp"
#include "phyta/templates.hpp"
#include "phyta/types.hpp"

#include <unordered_map>
#include <vector>

namespace phyta {

/// Orthonormal frames along a sampled stem skeleton, with positions and the
/// cumulative arc-length table. Frame i orients the segment that *starts* at
/// sample i (the last entry repeats the final segment frame), so a lookup at
/// an exact bend uses the post-bend orientation.
struct FrameSequence {
  std::vector<Vec3> positions;
  std::vector<Mat3> frames;
  ArcTable arcs;
};

/// Parallel-transported frames: the first frame's y-axis is aligned with the
/// first segment, and each subsequent frame is the previous one rotated by
/// the minimal rotation between consecutive segment directions. Throws on
/// repeated consecutive points.
FrameSequence stem_frames(const std::vector<Vec3>& axis_samples);

/// Position and frame at arc-length fraction f in [0,1] along the skeleton.
struct FramePoint {
  Vec3 position;
  Mat3 frame;
};
FramePoint frame_at_fraction(const FrameSequence& frames, double f);

/// Attachment of a child onto a parent stem skeleton: translation is the
/// arc-length-fraction-d point, rotation is the local frame there composed
/// with Rot(tau), scale is the articulation scale.
SimilarityTransform attachment_transform(const FrameSequence& parent_frames,
                                         const NodeArticulation& art);

/// Root-to-node chain of similarity transforms for every node. The root's
/// transform is {tau_root, origin, s_root}; each child composes its parent's
/// transform with the attachment onto the parent's *deformed* local skeleton
/// (passed per stem node id in `deformed_skeletons`). Returned transforms are
/// keyed by node id.
std::unordered_map<int, SimilarityTransform> forward_chain(
    const Topology& topo,
    const std::unordered_map<int, NodeArticulation>& articulations,
    const std::unordered_map<int, FrameSequence>& deformed_skeletons);

/// Kinematic skeleton over a leaf control grid: every grid point is a joint
/// with two rotational degrees of freedom. The main vein runs down the center
/// column (root joint at the base row); sub-vein joints chain outward, column
/// by column, from their row's main-vein joint.
struct LeafSkeleton {
  int m1 = 0;
  int m2 = 0;
  std::vector<int> parent;  // per joint (row-major), -1 for the root joint

  int joint_count() const { return m1 * m2; }
  int angle_count() const { return 2 * m1 * m2; }
};

/// Builds the vein-parenting structure for an m1 x m2 grid (m2 odd).
LeafSkeleton build_leaf_skeleton(int m1, int m2);

/// Forward kinematics over the leaf skeleton with two angles per joint
/// (rotation about the local x-axis — out-of-plane bend — then the local
/// z-axis — in-plane splay), ordered [ax_0, az_0, ax_1, az_1, ...] by joint
/// index. Rest offsets come from the input grid, so zero angles return the
/// grid unchanged and every skeletal segment keeps its rest length exactly.
Grid3 deform_leaf_angles(const Grid3& grid, const LeafSkeleton& skeleton,
                         const VecX& angles);

/// Decodes gamma through the deformation basis (offset-only, so gamma = 0 is
/// exactly flat) and applies deform_leaf_angles.
Grid3 deform_leaf(const Grid3& grid, const LeafSkeleton& skeleton,
                  const PcaBasis& deform_basis, const VecX& gamma);

/// Forward kinematics along a 1D stem skeleton. `angles` holds 2 angles per
/// non-root control point (joints 1..m_s-1; the joint at the free tip is a
/// geometric no-op but keeps the count at 2*(m_s-1)). Joint axes are the
/// parallel-transported rest frames' x/z axes; segment lengths are preserved
/// exactly and zero angles return the axis unchanged.
std::vector<Vec3> deform_stem(const std::vector<Vec3>& axis,
                              const VecX& angles);

}  // namespace phyta
