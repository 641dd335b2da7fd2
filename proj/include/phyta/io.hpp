#pragma once

// File formats and editing: parameter/basis/topology JSON, labeled-cloud and
// contour text files, Wavefront OBJ export/import, fit-report serialization,
// and latent-space parameter interpolation. All formats are plain text;
// parsers reject malformed input with line or byte diagnostics.

#include "phyta/assemble.hpp"
#include "phyta/fit.hpp"
#include "phyta/learn.hpp"
#include "phyta/pca.hpp"
#include "phyta/topology_infer.hpp"
#include "phyta/types.hpp"

#include <cstddef>
#include <optional>
#include <string>

namespace phyta {

/// Reference to a basis file plus the content hash recorded at save time.
struct BasisRef {
  std::string path;
  std::string hash;  // 16 hex digits (FNV-1a 64 over the file bytes)
};

/// Versioned parameter document: species id, basis references, node records.
struct ParamsFile {
  int version = 1;
  std::string species;
  BasisRef shape_basis;
  BasisRef deform_basis;
  PlantParams params;
};

/// FNV-1a 64-bit hash of a file's bytes as 16 lowercase hex digits.
std::string file_hash_hex(const std::string& path);

/// Lossless round trip: numeric fields survive save/load bitwise. Field
/// ordering is deterministic. Loading validates the schema version and the
/// embedded topology.
void save_params(const ParamsFile& file, const std::string& path);
ParamsFile load_params(const std::string& path);

/// Numeric payload size in bytes: 4 bytes per stored scalar
/// (tau[4], d, s, beta, gamma summed over nodes).
std::size_t payload_bytes(const PlantParams& params);

/// Persisted PCA basis plus the grid dimensions it was learned on.
struct BasisFile {
  int version = 1;
  std::string kind;       // "shape" | "deform"
  std::string node_kind;  // "leaf"
  int m1 = 0;
  int m2 = 0;
  PcaBasis basis;
};

void save_basis(const BasisFile& file, const std::string& path);
BasisFile load_basis(const std::string& path);

/// Loads a referenced basis and fails when the recorded content hash does
/// not match the file (empty recorded hash skips the check).
BasisFile load_basis_checked(const BasisRef& ref);

/// Species model assembled from persisted bases: the leaf template grid is
/// the shape-basis mean; the stem template keeps library defaults.
SpeciesModel species_from_bases(const BasisFile& shape, const BasisFile& deform);

/// Labeled cloud text: one "x y z semantic instance" line per point
/// (semantic 0=stem, 1=leaf, 2=main-stem), '#' comments.
void save_cloud(const LabeledCloud& cloud, const std::string& path);
LabeledCloud load_cloud(const std::string& path);

/// Scanned-leaf contour text: "scale <mm-per-unit>", "base <row>" and
/// "tip <row>" headers (row indices into the L/R rows in file order), then
/// one "L x y" or "R x y" row per contour point; the base and tip rows are
/// shared endpoints attached to both sides.
ContourSample load_contour(const std::string& path);

/// Deformation-angle samples: "dims <m1> <m2>" header, then one sample of
/// 2*m1*m2 angles per line.
struct AngleSamples {
  int m1 = 0;
  int m2 = 0;
  MatX samples;  // one row per sample
};
AngleSamples load_angle_samples(const std::string& path);

void save_topology(const Topology& topo, const std::string& path);
Topology load_topology(const std::string& path);

/// Wavefront OBJ with one "o node_<id>" group per node id and global
/// 1-based face indices.
void export_obj(const TriMesh& mesh, const std::string& path);

/// Minimal OBJ reader (v/f lines, polygon fan triangulation); node ids are
/// recovered from "o node_<id>" groups when present.
TriMesh import_obj(const std::string& path);

void save_report(const FitReport& report, const std::string& path);

/// Latent-space edit: shift one PCA coefficient by a multiple of the basis
/// standard deviation (shape | leaf-deform), shift one raw stem angle in
/// radians (stem-deform), or edit the topology (cut | duplicate a subtree).
struct InterpolateSpec {
  std::string axis;          // shape | leaf-deform | stem-deform | cut | duplicate
  int component = 0;         // coefficient / angle index for the shift axes
  double sigma = 0.0;        // multiples of sqrt(variance); radians for stems
  std::optional<int> node;   // restrict to one node / name the subtree root
  std::optional<double> at;  // attachment fraction for the duplicated subtree
};

PlantParams interpolate_params(const PlantParams& params,
                               const SpeciesModel& model,
                               const InterpolateSpec& spec);

}  // namespace phyta
