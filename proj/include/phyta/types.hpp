#pragma once

// Core value types shared across the library: linear-algebra aliases,
// plant topology, articulation, similarity transforms and triangle meshes.
// All types are immutable values after construction; every free function in
// this library is pure and safe to call concurrently.

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cstdint>
#include <string>
#include <vector>

namespace phyta {

using Scalar = double;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using VecX = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using MatX = Eigen::MatrixXd;
using Quat = Eigen::Quaterniond;

/// Kind of a plant node. Stems carry a tubular skeleton and may parent other
/// nodes; leaves are terminal surface patches.
enum class NodeKind { Stem, Leaf };

inline const char* to_string(NodeKind k) {
  return k == NodeKind::Stem ? "stem" : "leaf";
}

/// One node of the plant topology. `parent < 0` marks the root.
struct TopologyNode {
  int id = 0;
  NodeKind kind = NodeKind::Stem;
  int parent = -1;
};

/// Rooted tree of typed nodes. Invariants (checked by validate_topology):
/// exactly one root, the root is a stem, parent links are acyclic and
/// connected, and no leaf ever appears as a parent.
struct Topology {
  std::vector<TopologyNode> nodes;

  /// Index into `nodes` of the node with the given id, or -1.
  int index_of(int id) const;
  /// Id of the unique root node. Requires a valid topology.
  int root_id() const;
  /// Ids of the direct children of `id`, in node-array order.
  std::vector<int> children_of(int id) const;
  /// Node ids ordered root-first so that every parent precedes its children.
  std::vector<int> topological_order() const;
};

/// Result of a structural validation pass. Violations are data, not errors.
struct ValidationResult {
  bool ok = true;
  std::vector<std::string> violations;
};

/// Checks all Topology invariants; each violation names the offending node.
ValidationResult validate_topology(const Topology& topo);

/// Per-node articulation: rotation relative to the parent frame, attachment
/// fraction d in [0,1] along the parent stem's arc length, and a positive
/// uniform scale. For the root, d is ignored (fixed 0) and s carries the
/// overall plant scale in meters per canonical unit.
struct NodeArticulation {
  Quat tau = Quat::Identity();
  double d = 0.0;
  double s = 1.0;
};

/// Orientation-preserving similarity: p -> scale * R(p) + translation.
struct SimilarityTransform {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const {
    return scale * (rotation * p) + translation;
  }
};

/// Composition such that compose(a, b).apply(p) == a.apply(b.apply(p)).
SimilarityTransform compose_similarity(const SimilarityTransform& a,
                                       const SimilarityTransform& b);

/// Inverse transform: inverse(t).apply(t.apply(p)) == p.
SimilarityTransform inverse_similarity(const SimilarityTransform& t);

/// Full parameter set of one plant. The per-node arrays are parallel to
/// `topology.nodes`. For leaves, beta/gamma are PCA coefficients against the
/// species bases; for stems, beta is a single canonical radius and gamma is
/// the raw per-joint bend-angle vector (2 angles per non-root skeleton joint).
struct PlantParams {
  Topology topology;
  std::vector<NodeArticulation> articulations;
  std::vector<VecX> beta;
  std::vector<VecX> gamma;
  std::string species;
};

/// Indexed triangle mesh with a per-vertex id of the node that produced it.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Eigen::Vector3i> faces;
  std::vector<int> vertex_node_id;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t face_count() const { return faces.size(); }
};

/// Checks mesh invariants: finite coordinates, in-range face indices,
/// no face repeating a vertex, label array parallel to the vertices.
ValidationResult validate_mesh(const TriMesh& mesh);

/// Appends `part` to `mesh`, shifting face indices and labeling all new
/// vertices with `node_id`.
void append_mesh(TriMesh& mesh, const TriMesh& part, int node_id);

/// Total surface area (sum of triangle areas).
double mesh_area(const TriMesh& mesh);

}  // namespace phyta
