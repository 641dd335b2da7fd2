#include "phyta/topology_infer.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace phyta {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

ValidationResult validate_cloud(const LabeledCloud& cloud) {
  ValidationResult res;
  auto fail = [&res](const std::string& msg) {
    res.ok = false;
    res.violations.push_back(msg);
  };
  if (cloud.points.empty()) fail("empty cloud");
  if (cloud.semantic.size() != cloud.points.size() ||
      cloud.instance.size() != cloud.points.size()) {
    fail("label arrays must parallel the points");
    return res;
  }
  int max_id = -1;
  for (int id : cloud.instance) {
    if (id < 0) {
      fail("negative instance id");
      return res;
    }
    max_id = std::max(max_id, id);
  }
  std::vector<int> first_sem(max_id + 1, -1);
  std::vector<char> seen(max_id + 1, 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int id = cloud.instance[i];
    seen[id] = 1;
    const int sem = static_cast<int>(cloud.semantic[i]);
    // Stem and main-stem labels agree on the cluster kind.
    const int kind = cloud.semantic[i] == PointSemantic::Leaf ? 1 : 0;
    if (first_sem[id] < 0) {
      first_sem[id] = kind;
    } else if (first_sem[id] != kind) {
      fail("instance " + std::to_string(id) + " mixes stem and leaf labels");
      return res;
    }
    (void)sem;
  }
  for (int id = 0; id <= max_id; ++id) {
    if (!seen[id]) {
      fail("instance ids not contiguous: missing " + std::to_string(id));
      break;
    }
  }
  return res;
}

ClusterGraph build_cluster_graph(const LabeledCloud& cloud,
                                 std::optional<int> root_id) {
  const ValidationResult check = validate_cloud(cloud);
  if (!check.ok) {
    throw std::invalid_argument("build_cluster_graph: " + check.violations[0]);
  }

  int n = 0;
  for (int id : cloud.instance) n = std::max(n, id + 1);

  ClusterGraph graph;
  graph.clusters.resize(n);
  for (int id = 0; id < n; ++id) graph.clusters[id].id = id;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Cluster& cl = graph.clusters[cloud.instance[i]];
    cl.points.push_back(cloud.points[i]);
    if (cloud.semantic[i] == PointSemantic::Leaf) cl.kind = NodeKind::Leaf;
    if (cloud.semantic[i] == PointSemantic::MainStem) cl.main_stem = true;
  }
  for (auto& cl : graph.clusters) {
    cl.centroid = Vec3::Zero();
    for (const auto& p : cl.points) cl.centroid += p;
    cl.centroid /= static_cast<double>(cl.points.size());
  }

  // Pairwise minimum inter-cluster distances: query the smaller cluster
  // against a kd-tree over the larger one (exact nearest neighbors).
  MatX dist = MatX::Zero(n, n);
  std::vector<std::unique_ptr<KdTree3>> trees(n);
  for (int i = 0; i < n; ++i) {
    trees[i] = std::make_unique<KdTree3>(graph.clusters[i].points);
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const bool query_i = graph.clusters[i].points.size() <=
                           graph.clusters[j].points.size();
      const auto& from = query_i ? graph.clusters[i].points
                                 : graph.clusters[j].points;
      const KdTree3& tree = query_i ? *trees[j] : *trees[i];
      double best = std::numeric_limits<double>::max();
      for (const auto& p : from) {
        best = std::min(best, tree.nearest_squared(p));
      }
      dist(i, j) = dist(j, i) = std::sqrt(best);
    }
  }

  graph.weights = MatX::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      graph.weights(i, j) =
          graph.clusters[i].kind == NodeKind::Leaf ? kInf : dist(i, j);
    }
  }

  // Root: explicit id when given; otherwise a main-stem-tagged cluster wins,
  // falling back to the stem with the lowest centroid (ties: smaller id).
  int root = -1;
  if (root_id) {
    root = *root_id;
    if (root < 0 || root >= n) {
      throw std::invalid_argument("build_cluster_graph: root id out of range");
    }
    if (graph.clusters[root].kind == NodeKind::Leaf) {
      throw std::invalid_argument("build_cluster_graph: root is a leaf");
    }
  } else {
    bool root_main = false;
    double root_y = std::numeric_limits<double>::max();
    for (const auto& cl : graph.clusters) {
      if (cl.kind == NodeKind::Leaf) continue;
      bool better = false;
      if (root < 0 || cl.main_stem != root_main) {
        better = root < 0 || cl.main_stem;
      } else {
        better = cl.centroid.y() < root_y;
      }
      if (better) {
        root = cl.id;
        root_main = cl.main_stem;
        root_y = cl.centroid.y();
      }
    }
    if (root < 0) {
      throw std::invalid_argument(
          "build_cluster_graph: no stem cluster to use as root");
    }
  }
  graph.root = root;
  return graph;
}

double topology_cost(const ClusterGraph& graph, const Topology& topo) {
  double cost = 0.0;
  for (const auto& node : topo.nodes) {
    if (node.parent >= 0) cost += graph.weights(node.parent, node.id);
  }
  return cost;
}

Topology infer_topology_from_graph(const ClusterGraph& graph,
                                   bool prune_bare_stems) {
  const int n = static_cast<int>(graph.clusters.size());
  std::vector<int> parent(n, -1);

  // Prim's algorithm over the stem clusters (weights are symmetric there);
  // ties resolve toward the smaller (attaching, then parent) cluster id.
  std::vector<char> in_tree(n, 0);
  in_tree[graph.root] = 1;
  std::vector<int> stems;
  for (const auto& cl : graph.clusters) {
    if (cl.kind == NodeKind::Stem) stems.push_back(cl.id);
  }
  for (std::size_t added = 1; added < stems.size(); ++added) {
    int best_child = -1, best_parent = -1;
    double best_w = kInf;
    for (int child : stems) {
      if (in_tree[child]) continue;
      for (int par : stems) {
        if (!in_tree[par]) continue;
        const double w = graph.weights(par, child);
        const bool better =
            w < best_w ||
            (w == best_w &&
             (child < best_child ||
              (child == best_child && par < best_parent)));
        if (better) {
          best_w = w;
          best_child = child;
          best_parent = par;
        }
      }
    }
    if (best_child < 0) break;  // unreachable with finite stem-stem weights
    parent[best_child] = best_parent;
    in_tree[best_child] = 1;
  }

  // Each leaf attaches to its globally nearest stem (ties: smaller stem id).
  for (const auto& cl : graph.clusters) {
    if (cl.kind != NodeKind::Leaf) continue;
    int best = -1;
    double best_w = kInf;
    for (int par : stems) {
      const double w = graph.weights(par, cl.id);
      if (w < best_w || (w == best_w && par < best)) {
        best_w = w;
        best = par;
      }
    }
    if (best < 0) {
      throw std::runtime_error("infer_topology: leaf cluster " +
                               std::to_string(cl.id) + " has no stem to join");
    }
    parent[cl.id] = best;
  }

  Topology topo;
  for (const auto& cl : graph.clusters) {
    topo.nodes.push_back({cl.id, cl.kind, parent[cl.id]});
  }

  if (prune_bare_stems) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (auto it = topo.nodes.begin(); it != topo.nodes.end(); ++it) {
        if (it->kind != NodeKind::Stem || it->parent < 0) continue;
        if (topo.children_of(it->id).empty()) {
          topo.nodes.erase(it);
          changed = true;
          break;
        }
      }
    }
  }
  return topo;
}

Topology infer_topology(const LabeledCloud& cloud, std::optional<int> root_id,
                        bool prune_bare_stems) {
  return infer_topology_from_graph(build_cluster_graph(cloud, root_id),
                                   prune_bare_stems);
}

}  // namespace phyta
