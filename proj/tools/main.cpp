// Command-line interface over the plant-model library: forward synthesis,
// basis learning, topology inference, inverse fitting, Chamfer evaluation,
// and latent-space parameter editing. Exit codes: 0 success, 1 runtime
// error (diagnostic on stderr), 2 usage error.

#include "phyta/assemble.hpp"
#include "phyta/chamfer.hpp"
#include "phyta/fit.hpp"
#include "phyta/io.hpp"
#include "phyta/learn.hpp"
#include "phyta/topology_infer.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace phyta;

CdVariant parse_variant(const std::string& name) {
  if (name == "l1" || name == "L1") return CdVariant::L1;
  if (name == "l2" || name == "L2") return CdVariant::L2;
  throw std::runtime_error("unknown CD variant '" + name +
                           "' (expected l1 or l2)");
}

SpeciesModel load_species(const std::string& shape_path,
                          const std::string& deform_path) {
  const BasisFile shape = load_basis(shape_path);
  const BasisFile deform = load_basis(deform_path);
  return species_from_bases(shape, deform);
}

void verify_recorded_hash(const BasisRef& recorded, const std::string& path,
                          const std::string& what) {
  if (recorded.hash.empty()) return;
  const std::string actual = file_hash_hex(path);
  if (actual != recorded.hash)
    throw std::runtime_error(what + " hash mismatch: params file records " +
                             recorded.hash + ", " + path + " hashes to " +
                             actual);
}

/// Labeled surface sampling of an assembled plant: instance = node id,
/// semantic 2 for the root stem, 0 for other stems, 1 for leaves.
LabeledCloud sample_labeled_cloud(const TriMesh& mesh, const PlantParams& params,
                                  int count, std::uint64_t seed) {
  for (const TopologyNode& n : params.topology.nodes) {
    if (n.id < 0 || n.id >= static_cast<int>(params.topology.nodes.size()))
      throw std::runtime_error(
          "cloud sampling needs node ids contiguous from 0; found id " +
          std::to_string(n.id));
  }
  const int root = params.topology.root_id();
  const SurfacePattern pattern = make_surface_pattern(mesh, count, seed);
  const std::vector<Vec3> positions = eval_surface_pattern(mesh, pattern);
  LabeledCloud cloud;
  cloud.points = positions;
  cloud.semantic.reserve(positions.size());
  cloud.instance.reserve(positions.size());
  for (const int f : pattern.face) {
    const int node_id = mesh.vertex_node_id[mesh.faces[f][0]];
    const TopologyNode& node =
        params.topology.nodes[params.topology.index_of(node_id)];
    PointSemantic sem = PointSemantic::Leaf;
    if (node.kind == NodeKind::Stem)
      sem = node.id == root ? PointSemantic::MainStem : PointSemantic::Stem;
    cloud.semantic.push_back(sem);
    cloud.instance.push_back(node_id);
  }
  return cloud;
}

struct SynthArgs {
  std::string params, shape_basis, deform_basis, out, cloud_out;
  int cloud_points = 20000;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  const ParamsFile file = load_params(a.params);
  verify_recorded_hash(file.shape_basis, a.shape_basis, "shape basis");
  verify_recorded_hash(file.deform_basis, a.deform_basis, "deform basis");
  const SpeciesModel model = load_species(a.shape_basis, a.deform_basis);
  const TriMesh mesh = assemble_plant(file.params, model);
  export_obj(mesh, a.out);
  if (!a.cloud_out.empty()) {
    const LabeledCloud cloud =
        sample_labeled_cloud(mesh, file.params, a.cloud_points, a.seed);
    save_cloud(cloud, a.cloud_out);
  }
  return 0;
}

struct FitArgs {
  std::string cloud, shape_basis, deform_basis, topology, cd = "l2";
  std::string out, report;
  std::uint64_t seed = 0;
};

int run_fit(const FitArgs& a) {
  const LabeledCloud cloud = load_cloud(a.cloud);
  const SpeciesModel model = load_species(a.shape_basis, a.deform_basis);
  std::optional<Topology> topo;
  if (!a.topology.empty()) topo = load_topology(a.topology);
  FitConfig config;
  config.variant = parse_variant(a.cd);
  config.seed = a.seed;
  const auto [params, rep] = fit_pipeline(cloud, topo, model, config);

  ParamsFile out;
  out.species = params.species;
  out.shape_basis = {a.shape_basis, file_hash_hex(a.shape_basis)};
  out.deform_basis = {a.deform_basis, file_hash_hex(a.deform_basis)};
  out.params = params;
  save_params(out, a.out);
  if (!a.report.empty()) save_report(rep, a.report);
  std::printf("final normalized CD: %.6g (%.1f s)\n", rep.final_cd,
              rep.wall_seconds);
  return 0;
}

struct LearnShapeArgs {
  std::string contours, out;
  int rows = 7, cols = 5, components = 8;
};

int run_learn_shape(const LearnShapeArgs& a) {
  std::vector<std::string> paths;
  for (const auto& entry : std::filesystem::directory_iterator(a.contours))
    if (entry.is_regular_file()) paths.push_back(entry.path().string());
  std::sort(paths.begin(), paths.end());
  if (paths.empty())
    throw std::runtime_error("no contour files in " + a.contours);
  std::vector<ContourSample> samples;
  samples.reserve(paths.size());
  for (const std::string& p : paths) samples.push_back(load_contour(p));

  const ShapeLearnResult result =
      learn_shape_basis(samples, a.rows, a.cols, a.components);
  BasisFile file;
  file.kind = "shape";
  file.node_kind = "leaf";
  file.m1 = a.rows;
  file.m2 = a.cols;
  file.basis = result.basis;
  save_basis(file, a.out);
  std::printf("learned shape basis from %d/%zu contours (k=%d)\n",
              result.used_samples, samples.size(), result.basis.k);
  for (const std::string& s : result.skipped)
    std::fprintf(stderr, "skipped: %s\n", s.c_str());
  return 0;
}

struct LearnDeformArgs {
  std::string angles, out;
  int components = 10;
};

int run_learn_deform(const LearnDeformArgs& a) {
  const AngleSamples samples = load_angle_samples(a.angles);
  BasisFile file;
  file.kind = "deform";
  file.node_kind = "leaf";
  file.m1 = samples.m1;
  file.m2 = samples.m2;
  file.basis = learn_deform_basis(samples.samples, a.components);
  save_basis(file, a.out);
  std::printf("learned deform basis from %ld samples (k=%d)\n",
              static_cast<long>(samples.samples.rows()), file.basis.k);
  return 0;
}

struct InferTopoArgs {
  std::string cloud, out;
  bool prune = false;
  std::optional<int> root;
};

int run_infer_topology(const InferTopoArgs& a) {
  const LabeledCloud cloud = load_cloud(a.cloud);
  const Topology topo = infer_topology(cloud, a.root, a.prune);
  save_topology(topo, a.out);
  return 0;
}

struct EvalCdArgs {
  std::string mesh, cloud, variant = "l2";
  int samples = 200000;
  std::uint64_t seed = 0;
};

int run_eval_cd(const EvalCdArgs& a) {
  const TriMesh mesh = import_obj(a.mesh);
  const LabeledCloud cloud = load_cloud(a.cloud);
  const std::vector<Vec3> samples =
      sample_surface_points(mesh, a.samples, a.seed);
  const CdVariant variant = parse_variant(a.variant);
  const double raw = chamfer(samples, cloud.points, variant);
  const double cd =
      normalized_chamfer(raw, bbox_diagonal(cloud.points), variant);
  std::printf("%.10g\n", cd);
  return 0;
}

struct InterpolateArgs {
  std::string params, axis, out;
  int component = 0;
  double sigma = 0.0;
  std::optional<int> node;
  std::optional<double> at;
};

int run_interpolate(const InterpolateArgs& a) {
  const ParamsFile file = load_params(a.params);
  SpeciesModel model;
  if (a.axis == "shape" || a.axis == "leaf-deform") {
    // The shift is measured in basis standard deviations, so the referenced
    // bases must resolve (hash-checked) for these axes.
    const BasisFile shape = load_basis_checked(file.shape_basis);
    const BasisFile deform = load_basis_checked(file.deform_basis);
    model = species_from_bases(shape, deform);
  }
  InterpolateSpec spec;
  spec.axis = a.axis;
  spec.component = a.component;
  spec.sigma = a.sigma;
  spec.node = a.node;
  spec.at = a.at;
  ParamsFile out = file;
  out.params = interpolate_params(file.params, model, spec);
  save_params(out, a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parametric plant models: synthesis, learning, and fitting"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "synthesize a mesh from parameters");
  synth_cmd->add_option("--params", synth.params, "parameter JSON")->required();
  synth_cmd->add_option("--shape-basis", synth.shape_basis, "shape basis JSON")
      ->required();
  synth_cmd->add_option("--deform-basis", synth.deform_basis,
                        "deform basis JSON")
      ->required();
  synth_cmd->add_option("--out", synth.out, "output OBJ path")->required();
  synth_cmd->add_option("--cloud-out", synth.cloud_out,
                        "also write a labeled surface-sample cloud");
  synth_cmd->add_option("--cloud-points", synth.cloud_points,
                        "cloud sample count");
  synth_cmd->add_option("--seed", synth.seed, "sampling seed");

  FitArgs fit;
  CLI::App* fit_cmd =
      app.add_subcommand("fit", "fit parameters to a labeled cloud");
  fit_cmd->add_option("--cloud", fit.cloud, "labeled cloud file")->required();
  fit_cmd->add_option("--shape-basis", fit.shape_basis, "shape basis JSON")
      ->required();
  fit_cmd->add_option("--deform-basis", fit.deform_basis, "deform basis JSON")
      ->required();
  fit_cmd->add_option("--topology", fit.topology,
                      "topology JSON (inferred when absent)");
  fit_cmd->add_option("--cd", fit.cd, "chamfer variant: l1 or l2");
  fit_cmd->add_option("--seed", fit.seed, "optimizer seed");
  fit_cmd->add_option("--out", fit.out, "output parameter JSON")->required();
  fit_cmd->add_option("--report", fit.report, "fit report JSON");

  LearnShapeArgs learn_shape;
  CLI::App* learn_shape_cmd =
      app.add_subcommand("learn-shape", "learn a shape basis from contours");
  learn_shape_cmd
      ->add_option("--contours", learn_shape.contours, "contour directory")
      ->required();
  learn_shape_cmd->add_option("--rows", learn_shape.rows, "grid rows m1")
      ->required();
  learn_shape_cmd->add_option("--cols", learn_shape.cols, "grid columns m2")
      ->required();
  learn_shape_cmd
      ->add_option("--components", learn_shape.components, "PCA components")
      ->required();
  learn_shape_cmd->add_option("--out", learn_shape.out, "output basis JSON")
      ->required();

  LearnDeformArgs learn_deform;
  CLI::App* learn_deform_cmd = app.add_subcommand(
      "learn-deform", "learn a deformation basis from angle samples");
  learn_deform_cmd->add_option("--angles", learn_deform.angles, "angle samples")
      ->required();
  learn_deform_cmd
      ->add_option("--components", learn_deform.components, "PCA components")
      ->required();
  learn_deform_cmd->add_option("--out", learn_deform.out, "output basis JSON")
      ->required();

  InferTopoArgs infer;
  CLI::App* infer_cmd = app.add_subcommand(
      "infer-topology", "recover the topology from a labeled cloud");
  infer_cmd->add_option("--cloud", infer.cloud, "labeled cloud file")
      ->required();
  infer_cmd->add_option("--out", infer.out, "output topology JSON")->required();
  infer_cmd->add_flag("--prune-bare-stems", infer.prune,
                      "remove non-root stems without children");
  infer_cmd->add_option("--root", infer.root,
                        "root instance id (overrides the main-stem label)");

  EvalCdArgs eval;
  CLI::App* eval_cmd = app.add_subcommand(
      "eval-cd", "normalized chamfer distance between a mesh and a cloud");
  eval_cmd->add_option("--mesh", eval.mesh, "OBJ mesh")->required();
  eval_cmd->add_option("--cloud", eval.cloud, "labeled cloud file")->required();
  eval_cmd->add_option("--variant", eval.variant, "l1 or l2");
  eval_cmd->add_option("--samples", eval.samples, "surface sample count");
  eval_cmd->add_option("--seed", eval.seed, "sampling seed");

  InterpolateArgs interp;
  CLI::App* interp_cmd =
      app.add_subcommand("interpolate", "latent-space parameter edit");
  interp_cmd->add_option("--params", interp.params, "parameter JSON")
      ->required();
  interp_cmd
      ->add_option("--axis", interp.axis,
                   "shape | leaf-deform | stem-deform | cut | duplicate")
      ->required();
  interp_cmd->add_option("--component", interp.component, "coefficient index");
  interp_cmd->add_option("--sigma", interp.sigma,
                         "shift in basis standard deviations");
  interp_cmd->add_option("--node", interp.node, "node / subtree root id");
  interp_cmd->add_option("--at", interp.at,
                         "attachment fraction for duplicated subtrees");
  interp_cmd->add_option("--out", interp.out, "output parameter JSON")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (fit_cmd->parsed()) return run_fit(fit);
    if (learn_shape_cmd->parsed()) return run_learn_shape(learn_shape);
    if (learn_deform_cmd->parsed()) return run_learn_deform(learn_deform);
    if (infer_cmd->parsed()) return run_infer_topology(infer);
    if (eval_cmd->parsed()) return run_eval_cd(eval);
    if (interp_cmd->parsed()) return run_interpolate(interp);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
