#include "phyta/assemble.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace phyta {

std::vector<Vec3> stem_deformed_axis(const StemTemplate& tmpl,
                                     const VecX& gamma) {
  StemTemplate local = tmpl;
  if (gamma.size() > 0) {
    if (gamma.size() % 2 != 0) {
      throw std::invalid_argument("stem gamma must hold 2 angles per joint");
    }
    local.m_s = static_cast<int>(gamma.size()) / 2 + 1;
    if (local.m_s < 2) {
      throw std::invalid_argument("stem gamma implies fewer than 2 points");
    }
    return deform_stem(local.axis(), gamma);
  }
  return local.axis();
}

TriMesh assemble_plant_detailed(
    const PlantParams& params, const SpeciesModel& model,
    const AssembleOptions& options, std::vector<AssembledNode>* out_nodes,
    std::unordered_map<int, SimilarityTransform>* out_chain) {
  const ValidationResult topo_check = validate_topology(params.topology);
  if (!topo_check.ok) {
    std::string msg = "assemble_plant: invalid topology:";
    for (const auto& v : topo_check.violations) msg += " " + v;
    throw std::invalid_argument(msg);
  }
  const std::size_t n = params.topology.nodes.size();
  if (params.articulations.size() != n || params.beta.size() != n ||
      params.gamma.size() != n) {
    throw std::invalid_argument(
        "assemble_plant: per-node arrays must parallel the topology");
  }

  // Per-node local geometry: deformed stem skeletons (smoothed, for both the
  // tube surface and child attachment) and deformed leaf grids.
  std::unordered_map<int, NodeArticulation> arts;
  std::unordered_map<int, FrameSequence> skeletons;
  std::unordered_map<int, TriMesh> local_meshes;
  for (std::size_t idx = 0; idx < n; ++idx) {
    const TopologyNode& node = params.topology.nodes[idx];
    const NodeArticulation& art = params.articulations[idx];
    if (std::abs(art.tau.norm() - 1.0) > 1e-9) {
      throw std::invalid_argument("assemble_plant: node " +
                                  std::to_string(node.id) +
                                  " has a non-unit quaternion");
    }
    arts[node.id] = art;

    if (node.kind == NodeKind::Stem) {
      const VecX& beta = params.beta[idx];
      double radius = model.stem.default_radius;
      if (beta.size() == 1) {
        radius = beta[0];
      } else if (beta.size() != 0) {
        throw std::invalid_argument(
            "assemble_plant: stem beta must be empty or a single radius");
      }
      if (!(radius > 0.0)) {
        throw std::invalid_argument("assemble_plant: stem radius must be > 0");
      }
      const std::vector<Vec3> axis =
          stem_deformed_axis(model.stem, params.gamma[idx]);
      const std::vector<Vec3> samples =
          sample_open_curve(axis, options.stem_samples_per_segment);
      skeletons[node.id] = stem_frames(samples);
      local_meshes[node.id] =
          stem_mesh(axis, radius, options.radial_segments,
                    options.stem_samples_per_segment);
    } else {
      if (params.beta[idx].size() != model.leaf_shape.k) {
        throw std::invalid_argument("assemble_plant: leaf node " +
                                    std::to_string(node.id) +
                                    " beta length mismatch");
      }
      if (params.gamma[idx].size() != model.leaf_deform.k) {
        throw std::invalid_argument("assemble_plant: leaf node " +
                                    std::to_string(node.id) +
                                    " gamma length mismatch");
      }
      const Grid2 shaped =
          apply_shape(model.leaf, model.leaf_shape, params.beta[idx]);
      const LeafSkeleton skel = build_leaf_skeleton(model.leaf.m1, model.leaf.m2);
      const Grid3 deformed = deform_leaf(lift_grid(shaped), skel,
                                         model.leaf_deform, params.gamma[idx]);
      local_meshes[node.id] = leaf_mesh(deformed, options.leaf_subdivision);
    }
  }

  const auto chain = forward_chain(params.topology, arts, skeletons);

  TriMesh mesh;
  if (out_nodes) out_nodes->clear();
  for (int id : params.topology.topological_order()) {
    const TopologyNode& node = params.topology.nodes[params.topology.index_of(id)];
    TriMesh part = local_meshes.at(id);
    const SimilarityTransform& world = chain.at(id);
    for (auto& vertex : part.vertices) vertex = world.apply(vertex);
    append_mesh(mesh, part, id);
    if (out_nodes) {
      out_nodes->push_back(
          {id, node.kind, std::move(local_meshes.at(id)), world});
    }
  }
  if (out_chain) *out_chain = chain;
  return mesh;
}

TriMesh assemble_plant(const PlantParams& params, const SpeciesModel& model,
                       const AssembleOptions& options) {
  return assemble_plant_detailed(params, model, options, nullptr, nullptr);
}

namespace {

// Handcrafted mean outline: ovate half-width profile over normalized height,
// strictly positive so the mean template has no degenerate rows. The widest
// point sits well below the middle (t ~ 0.35) with a long taper to the tip:
// the strong base/tip asymmetry keeps the profile outside what the family's
// taper range can turn into its own length-flip.
double default_half_width(double t) {
  return 0.03 + 0.25 * std::sin(M_PI * std::pow(t, 0.75)) * (1.0 - 0.45 * t);
}

// Unit-length outline family: size lives in the articulation scale, so the
// shape factors (width, skew arc, taper, S-bend) all change aspect rather
// than size and stay identifiable next to a free pose scale. Every factor
// displaces the outline laterally; rows are never slid along the length,
// since such a reparametrization leaves the surface unchanged and would give
// the basis a geometrically unobservable direction.
Grid2 synthetic_leaf_grid(int m1, int m2, double width_mul, double skew,
                          double taper, double sbend) {
  Grid2 grid;
  grid.m1 = m1;
  grid.m2 = m2;
  grid.pts.resize(static_cast<std::size_t>(m1) * m2);
  for (int r = 0; r < m1; ++r) {
    const double t = static_cast<double>(r) / (m1 - 1);
    const double half =
        width_mul * default_half_width(t) * (1.0 + taper * (t - 0.5));
    const double shift = skew * std::sin(M_PI * t) + sbend * std::sin(2.0 * M_PI * t);
    for (int c = 0; c < m2; ++c) {
      const double span = 2.0 * c / (m2 - 1) - 1.0;
      grid.at(r, c) = Vec2(span * half + shift, t);
    }
  }
  return grid;
}

}  // namespace

SpeciesModel default_species_model(int m1, int m2, int shape_k, int deform_k) {
  if (m2 % 2 == 0 || m2 < 3 || m1 < 3) {
    throw std::invalid_argument(
        "default_species_model: need m1 >= 3 and odd m2 >= 3");
  }
  SpeciesModel model;
  model.species = "default";
  model.leaf.m1 = m1;
  model.leaf.m2 = m2;

  std::mt19937_64 rng(0x5eed0001ULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  // Shape basis from a seeded synthetic outline family centered on the
  // handcrafted mean.
  const int n_shapes = 64;
  MatX shape_data(n_shapes, 2 * m1 * m2);
  for (int s = 0; s < n_shapes; ++s) {
    // The mean lean (skew centered off zero) keeps the template visibly
    // chiral, so a mirrored pose cannot imitate it within the clamped
    // coefficient range.
    // Factor amplitudes are chosen so every principal direction moves the
    // outline by several mesh spacings at one standard deviation; weakly
    // observable factors would let recovered coefficients drift at the
    // sampling floor of the point-cloud objective.
    const double width_mul = 1.0 + 0.45 * unit(rng);
    const double skew = 0.08 + 0.05 * unit(rng);
    const double sbend = 0.06 * unit(rng);
    shape_data.row(s) =
        flatten_grid(synthetic_leaf_grid(m1, m2, width_mul, skew, 0.0, sbend))
            .transpose();
    for (int d = 0; d < 2 * m1 * m2; ++d)
      shape_data(s, d) += 0.004 * unit(rng);
  }
  model.leaf_shape = pca_fit(shape_data, shape_k);
  model.leaf.grid = unflatten_grid(model.leaf_shape.mean, m1, m2);

  // Deformation basis from a seeded family of joint-angle fields. All factors
  // bend out of plane (x-rotations only): in-plane rotations would re-shape
  // the flat outline and make deformation degenerate with the shape basis.
  // A small residual keeps trailing components meaningful.
  const int dim = 2 * m1 * m2;
  const int c0 = (m2 - 1) / 2;
  const int n_deforms = 128;
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatX deform_data = MatX::Zero(n_deforms, dim);
  auto ax = [m2](int r, int c) { return 2 * (r * m2 + c); };
  for (int s = 0; s < n_deforms; ++s) {
    const double curl = 0.22 * gauss(rng);
    const double progressive = 0.25 * gauss(rng);
    const double tip_curl = 0.2 * gauss(rng);
    const double droop = 0.18 * gauss(rng);
    const double droop_asym = 0.08 * gauss(rng);
    for (int r = 0; r < m1; ++r) {
      const double t = static_cast<double>(r) / (m1 - 1);
      deform_data(s, ax(r, c0)) +=
          curl + progressive * t + tip_curl * std::max(0.0, 2.0 * t - 1.0);
      for (int c = 0; c < m2; ++c) {
        if (c == c0) continue;
        deform_data(s, ax(r, c)) +=
            droop + (c < c0 ? -1.0 : 1.0) * droop_asym;
      }
    }
    for (int d = 0; d < dim; ++d) deform_data(s, d) += 0.01 * gauss(rng);
  }
  model.leaf_deform = pca_fit(deform_data, deform_k);

  return model;
}

}  // namespace phyta
