#include "phyta/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace phyta {
namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
}

json parse_json(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

const json& require(const json& j, const char* key, const std::string& ctx) {
  const auto it = j.find(key);
  if (it == j.end())
    throw std::runtime_error(ctx + ": missing field '" + key + "'");
  return *it;
}

NodeKind kind_from_string(const std::string& s, const std::string& ctx) {
  if (s == "stem") return NodeKind::Stem;
  if (s == "leaf") return NodeKind::Leaf;
  throw std::runtime_error(ctx + ": unknown node kind '" + s + "'");
}

json vecx_to_json(const VecX& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

VecX vecx_from_json(const json& a, const std::string& ctx) {
  if (!a.is_array())
    throw std::runtime_error(ctx + ": expected a numeric array");
  VecX v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number())
      throw std::runtime_error(ctx + ": expected a numeric array");
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  }
  return v;
}

void check_parallel_arrays(const PlantParams& p, const std::string& ctx) {
  const std::size_t n = p.topology.nodes.size();
  if (p.articulations.size() != n || p.beta.size() != n || p.gamma.size() != n)
    throw std::invalid_argument(
        ctx + ": articulation/beta/gamma arrays must parallel the topology");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string file_hash_hex(const std::string& path) {
  const std::string bytes = read_file(path);
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64 offset basis
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;  // FNV-1a 64 prime
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

void save_params(const ParamsFile& file, const std::string& path) {
  check_parallel_arrays(file.params, "save_params");
  json doc;
  doc["version"] = file.version;
  doc["species"] = file.species;
  doc["shape_basis"] = {{"path", file.shape_basis.path},
                        {"hash", file.shape_basis.hash}};
  doc["deform_basis"] = {{"path", file.deform_basis.path},
                         {"hash", file.deform_basis.hash}};
  json nodes = json::array();
  const PlantParams& p = file.params;
  for (std::size_t i = 0; i < p.topology.nodes.size(); ++i) {
    const TopologyNode& n = p.topology.nodes[i];
    const NodeArticulation& art = p.articulations[i];
    json rec;
    rec["id"] = n.id;
    rec["kind"] = to_string(n.kind);
    rec["parent"] = n.parent;
    rec["tau"] =
        json::array({art.tau.w(), art.tau.x(), art.tau.y(), art.tau.z()});
    rec["d"] = art.d;
    rec["s"] = art.s;
    rec["beta"] = vecx_to_json(p.beta[i]);
    rec["gamma"] = vecx_to_json(p.gamma[i]);
    nodes.push_back(std::move(rec));
  }
  doc["nodes"] = std::move(nodes);
  write_file(path, doc.dump(2) + "\n");
}

ParamsFile load_params(const std::string& path) {
  const json doc = parse_json(path);
  try {
    ParamsFile file;
    file.version = require(doc, "version", path).get<int>();
    if (file.version != 1)
      throw std::runtime_error(path + ": unsupported schema version " +
                               std::to_string(file.version));
    file.species = require(doc, "species", path).get<std::string>();
    for (const char* key : {"shape_basis", "deform_basis"}) {
      const json& ref = require(doc, key, path);
      BasisRef& target =
          std::string(key) == "shape_basis" ? file.shape_basis : file.deform_basis;
      target.path = require(ref, "path", path).get<std::string>();
      target.hash = require(ref, "hash", path).get<std::string>();
    }
    const json& nodes = require(doc, "nodes", path);
    if (!nodes.is_array())
      throw std::runtime_error(path + ": 'nodes' must be an array");
    PlantParams& p = file.params;
    p.species = file.species;
    for (const json& rec : nodes) {
      TopologyNode n;
      n.id = require(rec, "id", path).get<int>();
      n.kind = kind_from_string(require(rec, "kind", path).get<std::string>(),
                                path);
      n.parent = require(rec, "parent", path).get<int>();
      p.topology.nodes.push_back(n);
      const json& tau = require(rec, "tau", path);
      if (!tau.is_array() || tau.size() != 4)
        throw std::runtime_error(path + ": node tau must be [w,x,y,z]");
      NodeArticulation art;
      art.tau = Quat(tau[0].get<double>(), tau[1].get<double>(),
                     tau[2].get<double>(), tau[3].get<double>());
      art.d = require(rec, "d", path).get<double>();
      art.s = require(rec, "s", path).get<double>();
      p.articulations.push_back(art);
      p.beta.push_back(vecx_from_json(require(rec, "beta", path), path));
      p.gamma.push_back(vecx_from_json(require(rec, "gamma", path), path));
    }
    const ValidationResult vr = validate_topology(p.topology);
    if (!vr.ok)
      throw std::runtime_error(path + ": invalid topology: " +
                               vr.violations.front());
    return file;
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

std::size_t payload_bytes(const PlantParams& params) {
  check_parallel_arrays(params, "payload_bytes");
  std::size_t scalars = 0;
  for (std::size_t i = 0; i < params.topology.nodes.size(); ++i)
    scalars += 6 + static_cast<std::size_t>(params.beta[i].size()) +
               static_cast<std::size_t>(params.gamma[i].size());
  return scalars * 4;
}

void save_basis(const BasisFile& file, const std::string& path) {
  const ValidationResult vr = validate_basis(file.basis);
  if (!vr.ok)
    throw std::invalid_argument("save_basis: " + vr.violations.front());
  json doc;
  doc["version"] = file.version;
  doc["kind"] = file.kind;
  doc["node_kind"] = file.node_kind;
  doc["m1"] = file.m1;
  doc["m2"] = file.m2;
  doc["dim"] = file.basis.dim;
  doc["k"] = file.basis.k;
  doc["mean"] = vecx_to_json(file.basis.mean);
  json comps = json::array();
  for (int r = 0; r < file.basis.k; ++r)
    comps.push_back(vecx_to_json(file.basis.components.row(r)));
  doc["components"] = std::move(comps);
  doc["variances"] = vecx_to_json(file.basis.variances);
  write_file(path, doc.dump(2) + "\n");
}

BasisFile load_basis(const std::string& path) {
  const json doc = parse_json(path);
  try {
    BasisFile file;
    file.version = require(doc, "version", path).get<int>();
    if (file.version != 1)
      throw std::runtime_error(path + ": unsupported schema version " +
                               std::to_string(file.version));
    file.kind = require(doc, "kind", path).get<std::string>();
    if (file.kind != "shape" && file.kind != "deform")
      throw std::runtime_error(path + ": basis kind must be shape or deform");
    file.node_kind = require(doc, "node_kind", path).get<std::string>();
    file.m1 = require(doc, "m1", path).get<int>();
    file.m2 = require(doc, "m2", path).get<int>();
    PcaBasis& b = file.basis;
    b.dim = require(doc, "dim", path).get<int>();
    b.k = require(doc, "k", path).get<int>();
    b.mean = vecx_from_json(require(doc, "mean", path), path);
    const json& comps = require(doc, "components", path);
    if (!comps.is_array() || static_cast<int>(comps.size()) != b.k)
      throw std::runtime_error(path + ": 'components' must hold k rows");
    b.components.resize(b.k, b.dim);
    for (int r = 0; r < b.k; ++r) {
      const VecX row = vecx_from_json(comps[r], path);
      if (row.size() != b.dim)
        throw std::runtime_error(path + ": component row length != dim");
      b.components.row(r) = row;
    }
    b.variances = vecx_from_json(require(doc, "variances", path), path);
    if (b.dim != 2 * file.m1 * file.m2)
      throw std::runtime_error(path + ": dim does not match the grid size");
    const ValidationResult vr = validate_basis(b);
    if (!vr.ok)
      throw std::runtime_error(path + ": invalid basis: " +
                               vr.violations.front());
    return file;
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

BasisFile load_basis_checked(const BasisRef& ref) {
  BasisFile file = load_basis(ref.path);
  if (!ref.hash.empty()) {
    const std::string actual = file_hash_hex(ref.path);
    if (actual != ref.hash)
      throw std::runtime_error("basis hash mismatch for " + ref.path +
                               ": expected " + ref.hash + ", file hashes to " +
                               actual);
  }
  return file;
}

SpeciesModel species_from_bases(const BasisFile& shape,
                                const BasisFile& deform) {
  if (shape.kind != "shape")
    throw std::invalid_argument("species_from_bases: '" + shape.kind +
                                "' file given as the shape basis");
  if (deform.kind != "deform")
    throw std::invalid_argument("species_from_bases: '" + deform.kind +
                                "' file given as the deform basis");
  if (shape.m1 != deform.m1 || shape.m2 != deform.m2)
    throw std::invalid_argument(
        "species_from_bases: shape and deform grid dimensions disagree");
  SpeciesModel model;
  model.leaf.m1 = shape.m1;
  model.leaf.m2 = shape.m2;
  model.leaf.grid = unflatten_grid(shape.basis.mean, shape.m1, shape.m2);
  model.leaf_shape = shape.basis;
  model.leaf_deform = deform.basis;
  return model;
}

void save_cloud(const LabeledCloud& cloud, const std::string& path) {
  const ValidationResult vr = validate_cloud(cloud);
  if (!vr.ok)
    throw std::invalid_argument("save_cloud: " + vr.violations.front());
  std::ostringstream out;
  out << "# x y z semantic instance\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    out << format_double(p[0]) << ' ' << format_double(p[1]) << ' '
        << format_double(p[2]) << ' '
        << static_cast<int>(cloud.semantic[i]) << ' ' << cloud.instance[i]
        << '\n';
  }
  write_file(path, out.str());
}

LabeledCloud load_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  LabeledCloud cloud;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double x = 0.0, y = 0.0, z = 0.0;
    int sem = 0, inst = 0;
    if (!(ss >> x >> y >> z >> sem >> inst))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed point line (need x y z semantic "
                               "instance)");
    std::string extra;
    if (ss >> extra)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": trailing tokens after the point record");
    if (sem < 0 || sem > 2)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": semantic must be 0 (stem), 1 (leaf) or 2 "
                               "(main-stem)");
    if (inst < 0)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": instance id must be non-negative");
    cloud.points.emplace_back(x, y, z);
    cloud.semantic.push_back(static_cast<PointSemantic>(sem));
    cloud.instance.push_back(inst);
  }
  const ValidationResult vr = validate_cloud(cloud);
  if (!vr.ok)
    throw std::runtime_error(path + ": " + vr.violations.front());
  return cloud;
}

ContourSample load_contour(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  double scale = 0.0;
  bool have_scale = false;
  int base = -1, tip = -1;
  struct Row {
    char side;
    Vec2 p;
  };
  std::vector<Row> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    const std::string at = path + ":" + std::to_string(lineno);
    if (tok == "scale") {
      if (!(ss >> scale) || !(scale > 0.0))
        throw std::runtime_error(at + ": scale needs a positive mm-per-unit");
      have_scale = true;
    } else if (tok == "base" || tok == "tip") {
      int idx = -1;
      if (!(ss >> idx) || idx < 0)
        throw std::runtime_error(at + ": " + tok +
                                 " needs a non-negative row index");
      (tok == "base" ? base : tip) = idx;
    } else if (tok == "L" || tok == "R") {
      double x = 0.0, y = 0.0;
      if (!(ss >> x >> y))
        throw std::runtime_error(at + ": contour row needs two coordinates");
      rows.push_back({tok[0], Vec2(x, y)});
    } else {
      throw std::runtime_error(at + ": unknown directive '" + tok + "'");
    }
  }
  if (!have_scale) throw std::runtime_error(path + ": missing scale header");
  const int n = static_cast<int>(rows.size());
  if (base < 0 || base >= n)
    throw std::runtime_error(path + ": base row index " +
                             std::to_string(base) + " out of range");
  if (tip < 0 || tip >= n)
    throw std::runtime_error(path + ": tip row index " + std::to_string(tip) +
                             " out of range");
  if (base == tip)
    throw std::runtime_error(path + ": base and tip name the same row");

  ContourSample sample;
  sample.mm_per_unit = scale;
  sample.name = std::filesystem::path(path).stem().string();
  const Vec2 base_pt = rows[base].p;
  const Vec2 tip_pt = rows[tip].p;
  sample.left.push_back(base_pt);
  sample.right.push_back(base_pt);
  for (int i = 0; i < n; ++i) {
    if (i == base || i == tip) continue;
    (rows[i].side == 'L' ? sample.left : sample.right).push_back(rows[i].p);
  }
  sample.left.push_back(tip_pt);
  sample.right.push_back(tip_pt);
  return sample;
}

AngleSamples load_angle_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  AngleSamples out;
  std::vector<VecX> rows;
  bool have_dims = false;
  int dim = 0;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const std::string at = path + ":" + std::to_string(lineno);
    std::istringstream ss(line);
    if (!have_dims) {
      std::string tok;
      ss >> tok;
      if (tok != "dims" || !(ss >> out.m1 >> out.m2) || out.m1 < 2 ||
          out.m2 < 3 || out.m2 % 2 == 0)
        throw std::runtime_error(
            at + ": expected 'dims <m1> <m2>' (m1 >= 2, m2 odd >= 3)");
      dim = 2 * out.m1 * out.m2;
      have_dims = true;
      continue;
    }
    VecX row(dim);
    for (int i = 0; i < dim; ++i)
      if (!(ss >> row[i]))
        throw std::runtime_error(at + ": sample needs " + std::to_string(dim) +
                                 " angles");
    std::string extra;
    if (ss >> extra)
      throw std::runtime_error(at + ": trailing tokens after the sample");
    rows.push_back(std::move(row));
  }
  if (!have_dims) throw std::runtime_error(path + ": missing dims header");
  if (rows.empty()) throw std::runtime_error(path + ": no angle samples");
  out.samples.resize(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.samples.row(static_cast<Eigen::Index>(r)) = rows[r];
  return out;
}

void save_topology(const Topology& topo, const std::string& path) {
  const ValidationResult vr = validate_topology(topo);
  if (!vr.ok)
    throw std::invalid_argument("save_topology: " + vr.violations.front());
  json doc;
  doc["version"] = 1;
  json nodes = json::array();
  for (const TopologyNode& n : topo.nodes)
    nodes.push_back(
        {{"id", n.id}, {"kind", to_string(n.kind)}, {"parent", n.parent}});
  doc["nodes"] = std::move(nodes);
  write_file(path, doc.dump(2) + "\n");
}

Topology load_topology(const std::string& path) {
  const json doc = parse_json(path);
  try {
    const int version = require(doc, "version", path).get<int>();
    if (version != 1)
      throw std::runtime_error(path + ": unsupported schema version " +
                               std::to_string(version));
    const json& nodes = require(doc, "nodes", path);
    if (!nodes.is_array())
      throw std::runtime_error(path + ": 'nodes' must be an array");
    Topology topo;
    for (const json& rec : nodes) {
      TopologyNode n;
      n.id = require(rec, "id", path).get<int>();
      n.kind = kind_from_string(require(rec, "kind", path).get<std::string>(),
                                path);
      n.parent = require(rec, "parent", path).get<int>();
      topo.nodes.push_back(n);
    }
    const ValidationResult vr = validate_topology(topo);
    if (!vr.ok)
      throw std::runtime_error(path + ": invalid topology: " +
                               vr.violations.front());
    return topo;
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void export_obj(const TriMesh& mesh, const std::string& path) {
  const ValidationResult vr = validate_mesh(mesh);
  if (!vr.ok)
    throw std::invalid_argument("export_obj: " + vr.violations.front());

  // Group vertices/faces by node id in first-appearance order; a face
  // belongs to the group of its first vertex.
  std::vector<int> group_ids;
  std::unordered_map<int, int> group_of;
  const auto node_of_vertex = [&](std::size_t v) {
    return mesh.vertex_node_id.empty() ? -1 : mesh.vertex_node_id[v];
  };
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const int id = node_of_vertex(v);
    if (group_of.emplace(id, static_cast<int>(group_ids.size())).second)
      group_ids.push_back(id);
  }
  std::vector<std::vector<std::size_t>> verts(group_ids.size());
  std::vector<std::vector<std::size_t>> faces(group_ids.size());
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
    verts[group_of.at(node_of_vertex(v))].push_back(v);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f)
    faces[group_of.at(node_of_vertex(mesh.faces[f][0]))].push_back(f);

  std::vector<int> new_index(mesh.vertices.size(), 0);
  int next = 1;  // OBJ indices are 1-based
  for (const auto& group : verts)
    for (const std::size_t v : group) new_index[v] = next++;

  std::ostringstream out;
  out << "# " << mesh.vertices.size() << " vertices, " << mesh.faces.size()
      << " faces\n";
  for (std::size_t g = 0; g < group_ids.size(); ++g) {
    out << "o node_" << group_ids[g] << '\n';
    for (const std::size_t v : verts[g]) {
      const Vec3& p = mesh.vertices[v];
      out << "v " << format_double(p[0]) << ' ' << format_double(p[1]) << ' '
          << format_double(p[2]) << '\n';
    }
    for (const std::size_t f : faces[g]) {
      const Eigen::Vector3i& face = mesh.faces[f];
      out << "f " << new_index[face[0]] << ' ' << new_index[face[1]] << ' '
          << new_index[face[2]] << '\n';
    }
  }
  write_file(path, out.str());
}

TriMesh import_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  TriMesh mesh;
  int current_node = -1;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const std::string at = path + ":" + std::to_string(lineno);
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "v") {
      double x = 0.0, y = 0.0, z = 0.0;
      if (!(ss >> x >> y >> z))
        throw std::runtime_error(at + ": vertex needs three coordinates");
      mesh.vertices.emplace_back(x, y, z);
      mesh.vertex_node_id.push_back(current_node);
    } else if (tok == "o") {
      std::string name;
      ss >> name;
      current_node = -1;
      if (name.rfind("node_", 0) == 0) {
        try {
          current_node = std::stoi(name.substr(5));
        } catch (const std::exception&) {
          current_node = -1;
        }
      }
    } else if (tok == "f") {
      std::vector<int> idx;
      std::string ref;
      while (ss >> ref) {
        const std::string lead = ref.substr(0, ref.find('/'));
        int v = 0;
        try {
          v = std::stoi(lead);
        } catch (const std::exception&) {
          throw std::runtime_error(at + ": malformed face index '" + ref + "'");
        }
        if (v < 1 || v > static_cast<int>(mesh.vertices.size()))
          throw std::runtime_error(at + ": face index " + std::to_string(v) +
                                   " out of range");
        idx.push_back(v - 1);
      }
      if (idx.size() < 3)
        throw std::runtime_error(at + ": face needs at least three vertices");
      for (std::size_t i = 1; i + 1 < idx.size(); ++i)
        mesh.faces.emplace_back(idx[0], idx[i], idx[i + 1]);
    }
    // Other directives (vn, vt, g, s, usemtl, ...) are ignored.
  }
  if (mesh.vertices.empty())
    throw std::runtime_error(path + ": no vertices found");
  return mesh;
}

void save_report(const FitReport& report, const std::string& path) {
  json doc;
  doc["final_cd"] = report.final_cd;
  doc["wall_seconds"] = report.wall_seconds;
  doc["root_offset"] = json::array(
      {report.root_offset[0], report.root_offset[1], report.root_offset[2]});
  doc["stage1_cd"] = json::array();
  for (const double v : report.stage1_cd) doc["stage1_cd"].push_back(v);
  doc["stage2_cd"] = json::array();
  for (const double v : report.stage2_cd) doc["stage2_cd"].push_back(v);
  json per_node = json::array();
  for (const InstanceFit& f : report.per_node)
    per_node.push_back({{"instance", f.instance},
                        {"kind", to_string(f.kind)},
                        {"cd", f.cd},
                        {"normalized_cd", f.normalized_cd},
                        {"high_residual", f.high_residual}});
  doc["per_node"] = std::move(per_node);
  write_file(path, doc.dump(2) + "\n");
}

PlantParams interpolate_params(const PlantParams& params,
                               const SpeciesModel& model,
                               const InterpolateSpec& spec) {
  check_parallel_arrays(params, "interpolate_params");
  PlantParams out = params;
  const Topology& topo = out.topology;

  const auto selected = [&](int id) {
    return !spec.node.has_value() || *spec.node == id;
  };
  if (spec.node.has_value() && topo.index_of(*spec.node) < 0)
    throw std::invalid_argument("interpolate_params: unknown node id " +
                                std::to_string(*spec.node));

  if (spec.axis == "shape" || spec.axis == "leaf-deform") {
    const bool shape = spec.axis == "shape";
    const PcaBasis& basis = shape ? model.leaf_shape : model.leaf_deform;
    if (spec.component < 0 || spec.component >= basis.k)
      throw std::invalid_argument(
          "interpolate_params: component " + std::to_string(spec.component) +
          " out of range (basis has " + std::to_string(basis.k) +
          " components)");
    if (spec.sigma == 0.0) return out;
    const double shift = spec.sigma * basis.sigma(spec.component);
    bool touched = false;
    for (std::size_t i = 0; i < topo.nodes.size(); ++i) {
      if (!selected(topo.nodes[i].id)) continue;
      if (topo.nodes[i].kind != NodeKind::Leaf) {
        if (spec.node.has_value())
          throw std::invalid_argument("interpolate_params: node " +
                                      std::to_string(*spec.node) +
                                      " is a stem; axis '" + spec.axis +
                                      "' applies to leaves");
        continue;
      }
      VecX& target = shape ? out.beta[i] : out.gamma[i];
      if (target.size() == 0) target = VecX::Zero(basis.k);
      if (target.size() != basis.k)
        throw std::invalid_argument(
            "interpolate_params: node " + std::to_string(topo.nodes[i].id) +
            " carries " + std::to_string(target.size()) +
            " coefficients; the basis has " + std::to_string(basis.k));
      target[spec.component] += shift;
      touched = true;
    }
    if (!touched && !spec.node.has_value())
      throw std::invalid_argument(
          "interpolate_params: the plant has no leaf nodes");
    return out;
  }

  if (spec.axis == "stem-deform") {
    const int default_len = 2 * (model.stem.m_s - 1);
    if (spec.component < 0 || spec.component >= default_len)
      throw std::invalid_argument(
          "interpolate_params: component " + std::to_string(spec.component) +
          " out of range (stems carry " + std::to_string(default_len) +
          " angles)");
    if (spec.sigma == 0.0) return out;
    bool touched = false;
    for (std::size_t i = 0; i < topo.nodes.size(); ++i) {
      if (!selected(topo.nodes[i].id)) continue;
      if (topo.nodes[i].kind != NodeKind::Stem) {
        if (spec.node.has_value())
          throw std::invalid_argument("interpolate_params: node " +
                                      std::to_string(*spec.node) +
                                      " is a leaf; axis 'stem-deform' applies "
                                      "to stems");
        continue;
      }
      VecX& g = out.gamma[i];
      if (g.size() == 0) g = VecX::Zero(default_len);
      if (spec.component >= static_cast<int>(g.size()))
        throw std::invalid_argument(
            "interpolate_params: node " + std::to_string(topo.nodes[i].id) +
            " carries only " + std::to_string(g.size()) + " angles");
      g[spec.component] += spec.sigma;
      touched = true;
    }
    if (!touched && !spec.node.has_value())
      throw std::invalid_argument(
          "interpolate_params: the plant has no stem nodes");
    return out;
  }

  if (spec.axis == "cut" || spec.axis == "duplicate") {
    if (!spec.node.has_value())
      throw std::invalid_argument("interpolate_params: axis '" + spec.axis +
                                  "' needs a subtree root node id");
    const int target = *spec.node;
    const int target_idx = topo.index_of(target);
    if (topo.nodes[target_idx].parent < 0)
      throw std::invalid_argument("interpolate_params: cannot " + spec.axis +
                                  " the root node");

    // Subtree ids in BFS order (target first).
    std::vector<int> subtree;
    std::deque<int> frontier{target};
    while (!frontier.empty()) {
      const int id = frontier.front();
      frontier.pop_front();
      subtree.push_back(id);
      for (const int c : topo.children_of(id)) frontier.push_back(c);
    }

    if (spec.axis == "cut") {
      std::unordered_set<int> removed(subtree.begin(), subtree.end());
      PlantParams cut;
      cut.species = out.species;
      for (std::size_t i = 0; i < topo.nodes.size(); ++i) {
        if (removed.count(topo.nodes[i].id)) continue;
        cut.topology.nodes.push_back(topo.nodes[i]);
        cut.articulations.push_back(out.articulations[i]);
        cut.beta.push_back(out.beta[i]);
        cut.gamma.push_back(out.gamma[i]);
      }
      return cut;
    }

    // Duplicate: fresh contiguous ids above the current maximum.
    int max_id = 0;
    for (const TopologyNode& n : topo.nodes) max_id = std::max(max_id, n.id);
    std::unordered_map<int, int> clone_id;
    for (std::size_t i = 0; i < subtree.size(); ++i)
      clone_id[subtree[i]] = max_id + 1 + static_cast<int>(i);
    if (spec.at.has_value() && !(*spec.at >= 0.0 && *spec.at <= 1.0))
      throw std::invalid_argument(
          "interpolate_params: duplicate attachment fraction must lie in "
          "[0,1]");
    for (const int id : subtree) {
      const int idx = topo.index_of(id);
      TopologyNode n = topo.nodes[idx];
      const bool is_clone_root = id == target;
      n.id = clone_id.at(id);
      if (!is_clone_root) n.parent = clone_id.at(n.parent);
      NodeArticulation art = out.articulations[idx];
      if (is_clone_root && spec.at.has_value()) art.d = *spec.at;
      VecX beta_copy = out.beta[idx];
      VecX gamma_copy = out.gamma[idx];
      out.topology.nodes.push_back(n);
      out.articulations.push_back(art);
      out.beta.push_back(std::move(beta_copy));
      out.gamma.push_back(std::move(gamma_copy));
    }
    return out;
  }

  throw std::invalid_argument("interpolate_params: unknown axis '" +
                              spec.axis + "'");
}

}  // namespace phyta
