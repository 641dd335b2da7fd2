#include "phyta/types.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <unordered_map>
#include <unordered_set>

namespace phyta {

int Topology::index_of(int id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

int Topology::root_id() const {
  for (const auto& n : nodes) {
    if (n.parent < 0) return n.id;
  }
  return -1;
}

std::vector<int> Topology::children_of(int id) const {
  std::vector<int> out;
  for (const auto& n : nodes) {
    if (n.parent == id) out.push_back(n.id);
  }
  return out;
}

std::vector<int> Topology::topological_order() const {
  std::vector<int> order;
  order.reserve(nodes.size());
  std::queue<int> frontier;
  const int root = root_id();
  if (root < 0 && !nodes.empty()) return order;
  if (nodes.empty()) return order;
  frontier.push(root);
  while (!frontier.empty()) {
    const int id = frontier.front();
    frontier.pop();
    order.push_back(id);
    for (int c : children_of(id)) frontier.push(c);
  }
  return order;
}

ValidationResult validate_topology(const Topology& topo) {
  ValidationResult res;
  auto fail = [&res](const std::string& msg) {
    res.ok = false;
    res.violations.push_back(msg);
  };

  if (topo.nodes.empty()) {
    fail("empty topology");
    return res;
  }

  std::unordered_map<int, const TopologyNode*> by_id;
  for (const auto& n : topo.nodes) {
    if (!by_id.emplace(n.id, &n).second) {
      fail("duplicate node id " + std::to_string(n.id));
    }
  }

  int root_count = 0;
  for (const auto& n : topo.nodes) {
    if (n.parent < 0) {
      ++root_count;
      if (n.kind != NodeKind::Stem) {
        fail("root node " + std::to_string(n.id) + " is not a stem");
      }
    } else {
      auto it = by_id.find(n.parent);
      if (it == by_id.end()) {
        fail("node " + std::to_string(n.id) + " references missing parent " +
             std::to_string(n.parent));
      } else if (it->second->kind == NodeKind::Leaf) {
        fail("leaf-as-parent: node " + std::to_string(n.id) +
             " has leaf parent " + std::to_string(n.parent));
      }
    }
  }
  if (root_count == 0) fail("no root node (every node has a parent)");
  if (root_count > 1) fail("multiple root nodes");
  if (!res.ok) return res;

  // Reachability from the root establishes connectivity; with one parent per
  // node and |edges| = |nodes| - 1, reachability also rules out cycles.
  std::unordered_set<int> seen;
  std::queue<int> frontier;
  frontier.push(topo.root_id());
  seen.insert(topo.root_id());
  while (!frontier.empty()) {
    const int id = frontier.front();
    frontier.pop();
    for (const auto& n : topo.nodes) {
      if (n.parent == id && seen.insert(n.id).second) frontier.push(n.id);
    }
  }
  for (const auto& n : topo.nodes) {
    if (!seen.count(n.id)) {
      fail("node " + std::to_string(n.id) + " unreachable from root (cycle)");
    }
  }
  return res;
}

SimilarityTransform compose_similarity(const SimilarityTransform& a,
                                       const SimilarityTransform& b) {
  SimilarityTransform out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.scale * (a.rotation * b.translation) + a.translation;
  out.scale = a.scale * b.scale;
  return out;
}

SimilarityTransform inverse_similarity(const SimilarityTransform& t) {
  SimilarityTransform out;
  out.rotation = t.rotation.conjugate();
  out.scale = 1.0 / t.scale;
  out.translation = -(out.scale * (out.rotation * t.translation));
  return out;
}

ValidationResult validate_mesh(const TriMesh& mesh) {
  ValidationResult res;
  auto fail = [&res](const std::string& msg) {
    res.ok = false;
    res.violations.push_back(msg);
  };

  if (mesh.vertex_node_id.size() != mesh.vertices.size()) {
    fail("vertex_node_id size mismatch");
  }
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    if (!mesh.vertices[i].allFinite()) {
      fail("non-finite vertex " + std::to_string(i));
      break;
    }
  }
  const int n = static_cast<int>(mesh.vertices.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    for (int k = 0; k < 3; ++k) {
      if (face[k] < 0 || face[k] >= n) {
        fail("face " + std::to_string(f) + " index out of range");
        return res;
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      fail("face " + std::to_string(f) + " repeats a vertex");
    }
  }
  return res;
}

void append_mesh(TriMesh& mesh, const TriMesh& part, int node_id) {
  const int offset = static_cast<int>(mesh.vertices.size());
  mesh.vertices.insert(mesh.vertices.end(), part.vertices.begin(),
                       part.vertices.end());
  mesh.vertex_node_id.insert(mesh.vertex_node_id.end(), part.vertices.size(),
                             node_id);
  mesh.faces.reserve(mesh.faces.size() + part.faces.size());
  for (const auto& f : part.faces) {
    mesh.faces.push_back(
        Eigen::Vector3i(f[0] + offset, f[1] + offset, f[2] + offset));
  }
}

double mesh_area(const TriMesh& mesh) {
  double area = 0.0;
  for (const auto& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    area += 0.5 * (b - a).cross(c - a).norm();
  }
  return area;
}

}  // namespace phyta
