#pragma once

// Inverse fitting: per-instance shape/deformation/pose recovery against
// labeled point clouds, followed by a global articulation + stem-deformation
// optimization along the kinematic chain. Gradients come from central finite
// differences on normalized coordinates; accepted steps never increase the
// Chamfer objective.

#include "phyta/assemble.hpp"
#include "phyta/chamfer.hpp"
#include "phyta/topology_infer.hpp"
#include "phyta/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace phyta {

/// Optimizer and sampling hyperparameters for both fitting stages.
struct FitConfig {
  CdVariant variant = CdVariant::L2;
  std::uint64_t seed = 0;
  double learning_rate = 0.1;     // initial step length, normalized coords
  double fd_step = 1e-4;          // central-difference step, normalized coords
  double beta_clamp_sigma = 2.0;  // shape coefficients stay within +/- c sigma
  int multi_start = 4;            // principal-axis sign-flip pose starts

  int stage1_iterations = 45;
  int stage1_probe_iterations = 8;    // per multi-start candidate
  int stage1_template_samples = 256;  // surface samples during stage 1
  int stage1_cloud_cap = 1200;        // per-instance cloud subsample

  // Dense shape refinement after the coarse stage-1 run: outline-only shape
  // changes move only a thin rim band, so they need a finer sampling floor
  // than the pose search. The template pattern is matched to the cloud
  // subsample size: unequal densities bias the outline inward (the sparse
  // side's floor blurs its rim penalty while the dense side still rewards
  // shrinking into the interior).
  int polish_iterations = 20;
  int polish_template_samples = 2048;
  int polish_cloud_cap = 2048;

  int stage2_iterations = 35;
  int stage2_samples_per_node = 128;
  int stage2_cloud_cap = 2000;
  // Per-node refinement sweeps after the joint descent. The joint step ties
  // every coordinate to one line search, so a node left far from its basin
  // by stage 1 can stall against the converged nodes' much sharper
  // curvature; cycling per-node line searches decouples the step lengths.
  int stage2_block_sweeps = 16;

  int instance_eval_samples = 6000;  // dense resample for reported stage-1 CD
  int final_eval_samples = 30000;    // dense resample for the reported CD

  int min_stem_points = 30;
  int min_leaf_points = 100;

  // Tessellation used inside the optimization loops. Leaf subdivision and
  // stem radial count match the synthesis defaults: a coarser fitting mesh
  // has a systematically different rim/tube, and the solver absorbs that
  // discrepancy into the shape coefficients.
  AssembleOptions fit_mesh{.leaf_subdivision = 2,
                           .radial_segments = 8,
                           .stem_samples_per_segment = 2};
};

/// Recovered parameters and diagnostics of one stage-1 instance fit.
struct InstanceFit {
  int instance = -1;
  NodeKind kind = NodeKind::Stem;
  VecX beta;                 // leaf shape coefficients / stem [radius]
  VecX gamma;                // leaf deform coefficients / stem joint angles
  SimilarityTransform pose;  // world pose of the canonical part
  double cd = 0.0;  // raw CD on the fitting subsample (canonical cloud frame)
  double normalized_cd = 0.0;      // dense resample vs full instance cloud
  bool high_residual = false;      // normalized CD above the plausible band
  std::vector<double> trajectory;  // accepted-step CD values (nonincreasing)
};

/// Joint report for a full fit: per-stage trajectories, per-node recovered
/// parameters, the final dense-sample CD, and wall time.
struct FitReport {
  std::vector<InstanceFit> per_node;  // stage-1 results, topology order
  std::vector<double> stage1_cd;      // final normalized CD per node
  std::vector<double> stage2_cd;      // accepted-step trajectory
  double final_cd = 0.0;              // normalized CD, dense mesh vs cloud
  double wall_seconds = 0.0;
  Vec3 root_offset = Vec3::Zero();  // world offset absorbed outside params
};

/// Fits pose + shape + deformation of a single part template to one
/// instance's points (Chamfer objective, multi-start pose initialization
/// over principal-axis sign flips). Throws when the instance has fewer
/// points than the configured minimum.
InstanceFit fit_instance(const std::vector<Vec3>& points, NodeKind kind,
                         const SpeciesModel& model, const FitConfig& config);

/// Stage 2: converts stage-1 world poses into relative articulations along
/// the topology, then jointly optimizes all articulations, stem deformation
/// angles, and a global root offset, holding leaf shape/deformation and stem
/// thickness fixed. `stage1` entries are matched to topology nodes by id.
std::pair<PlantParams, FitReport> fit_plant(const LabeledCloud& cloud,
                                            const Topology& topo,
                                            const std::vector<InstanceFit>& stage1,
                                            const SpeciesModel& model,
                                            const FitConfig& config);

/// Full pipeline: optional topology inference, per-instance stage-1 fits,
/// then fit_plant. Instances below the point thresholds are dropped (with
/// ids re-packed) when the topology is inferred; with an explicit topology
/// they are an error.
std::pair<PlantParams, FitReport> fit_pipeline(const LabeledCloud& cloud,
                                               std::optional<Topology> topo,
                                               const SpeciesModel& model,
                                               const FitConfig& config);

/// Central finite-difference gradient of `objective` at x with per-parameter
/// scales (step = fd_step * scale per coordinate).
VecX fd_gradient(const std::function<double(const VecX&)>& objective,
                 const VecX& x, const VecX& scales, double fd_step);

/// One descent probe used by the optimizer and the gradient sanity checks:
/// returns true when backtracking along the negative normalized gradient
/// finds a strictly decreasing point (or the gradient already vanishes).
bool descent_step_decreases(const std::function<double(const VecX&)>& objective,
                            const VecX& x, const VecX& scales, double fd_step,
                            int backtracks = 12);

}  // namespace phyta
