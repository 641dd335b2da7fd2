#pragma once

// Recovers the plant topology from an instance-labeled point cloud as the
// minimum-cost spanning arborescence of the cluster graph.

#include "phyta/chamfer.hpp"
#include "phyta/types.hpp"

#include <optional>
#include <vector>

namespace phyta {

/// Cloud point semantics. Main-stem points are stems that also identify the
/// root cluster.
enum class PointSemantic { Stem = 0, Leaf = 1, MainStem = 2 };

/// Instance- and semantic-labeled point cloud. Instance ids are contiguous
/// from 0 and every instance carries a single semantic label.
struct LabeledCloud {
  std::vector<Vec3> points;
  std::vector<PointSemantic> semantic;
  std::vector<int> instance;

  std::size_t size() const { return points.size(); }
};

ValidationResult validate_cloud(const LabeledCloud& cloud);

/// One cluster of the cloud (an instance).
struct Cluster {
  int id = 0;
  NodeKind kind = NodeKind::Stem;
  bool main_stem = false;
  std::vector<Vec3> points;
  Vec3 centroid = Vec3::Zero();
};

/// Directed connection-cost graph over clusters: weight[i][j] is the cost of
/// cluster i parenting cluster j — infinity whenever i is a leaf, otherwise
/// the minimum inter-cluster point distance (symmetric for stem-stem pairs).
struct ClusterGraph {
  std::vector<Cluster> clusters;
  MatX weights;  // n x n, +inf on leaf rows, 0 on the diagonal
  int root = 0;  // cluster id of the root stem
};

/// Groups the cloud into clusters and computes all pairwise minimum
/// inter-cluster distances (kd-tree accelerated, equal to brute force).
ClusterGraph build_cluster_graph(const LabeledCloud& cloud,
                                 std::optional<int> root_id = std::nullopt);

/// Total parent-edge cost of a topology under the graph weights.
double topology_cost(const ClusterGraph& graph, const Topology& topo);

/// Minimum spanning arborescence rooted at the graph root. Because leaves
/// are pure sinks and stem-stem weights are symmetric, this equals the
/// undirected MST over stems (oriented away from the root) plus each leaf
/// attached to its nearest stem — which is how it is computed. Ties break
/// toward the smaller cluster id. When `prune_bare_stems` is set, non-root
/// stems without children are removed iteratively.
Topology infer_topology(const LabeledCloud& cloud,
                        std::optional<int> root_id = std::nullopt,
                        bool prune_bare_stems = false);

/// As infer_topology but over a prebuilt graph.
Topology infer_topology_from_graph(const ClusterGraph& graph,
                                   bool prune_bare_stems = false);

}  // namespace phyta
