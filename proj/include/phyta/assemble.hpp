#pragma once

// Forward synthesis: per-node templates shaped, deformed, and placed along
// the kinematic chain into one labeled triangle mesh.

#include "phyta/kinematics.hpp"
#include "phyta/pca.hpp"
#include "phyta/templates.hpp"
#include "phyta/types.hpp"

#include <string>
#include <unordered_map>

namespace phyta {

/// Everything species-level needed to synthesize a plant: the canonical part
/// templates and the learned leaf shape/deformation bases. Stems carry no
/// bases (a single thickness scalar and raw joint angles instead).
struct SpeciesModel {
  std::string species = "default";
  LeafTemplate leaf;
  StemTemplate stem;
  PcaBasis leaf_shape;   // dim = 2 * m1 * m2
  PcaBasis leaf_deform;  // dim = 2 * m1 * m2, offset-only in synthesis
};

/// Tessellation quality knobs.
struct AssembleOptions {
  int leaf_subdivision = 2;
  int radial_segments = 8;
  int stem_samples_per_segment = 4;
};

/// Per-node intermediate state exposed for fitting: local deformed skeleton
/// (stems), local part mesh, and the world transform of the node.
struct AssembledNode {
  int id = -1;
  NodeKind kind = NodeKind::Stem;
  TriMesh local_mesh;
  SimilarityTransform world;
};

/// Synthesizes the plant mesh for the given parameters. Vertices of node i
/// are T_i(local part), where T_i composes attachment transforms along the
/// topology over the parents' deformed skeletons. Throws on invalid topology
/// or coefficient-length mismatches. Deterministic for fixed inputs.
TriMesh assemble_plant(const PlantParams& params, const SpeciesModel& model,
                       const AssembleOptions& options = {});

/// Like assemble_plant but also returns per-node local meshes and world
/// transforms (used by the fitting stages); `out_chain` may be null.
TriMesh assemble_plant_detailed(
    const PlantParams& params, const SpeciesModel& model,
    const AssembleOptions& options,
    std::vector<AssembledNode>* out_nodes,
    std::unordered_map<int, SimilarityTransform>* out_chain);

/// Stem axis for a node: the canonical template axis (point count implied by
/// the node's gamma length, falling back to the model default) bent by the
/// node's raw joint angles.
std::vector<Vec3> stem_deformed_axis(const StemTemplate& tmpl,
                                     const VecX& gamma);

/// Deterministic built-in species model: a handcrafted mean leaf grid plus
/// shape/deformation bases learned from seeded synthetic families. Intended
/// for demos and round-trip experiments when no scanned data is available.
SpeciesModel default_species_model(int m1 = 7, int m2 = 5, int shape_k = 8,
                                   int deform_k = 10);

}  // namespace phyta
