#include "phyta/fit.hpp"

#include "phyta/kinematics.hpp"
#include "phyta/spline.hpp"
#include "phyta/templates.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace phyta {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMaxJointAngle = 1.2;  // radians per stem joint axis
constexpr double kLogScaleLimit = 6.0;
constexpr std::uint64_t kSeedMix = 0x9E3779B97F4A7C15ULL;
// Per-instance squared-normalized CD above which a stage-2 initialization is
// treated as broken and the node is re-fit from scratch. Healthy dense
// re-evaluations land near 1e-4; a part misrotated by a few tens of degrees
// measures several 1e-3 even when a co-adapted joint optimum hides it.
constexpr double kInitRepairBand = 2e-3;

using Objective = std::function<double(const VecX&)>;
using Projector = std::function<void(VecX&)>;

double safe_eval(const Objective& objective, const VecX& x) {
  const double v = objective(x);
  return std::isfinite(v) ? v : kInf;
}

struct DescentResult {
  VecX x;
  double value = kInf;
  std::vector<double> trajectory;
};

/// First-order descent along the negative finite-difference gradient in
/// normalized coordinates, with backtracking line search and an adaptive
/// initial step. Only strictly decreasing steps are accepted. Stops early
/// after a window of iterations with negligible relative improvement, so a
/// generous iteration cap only costs time on runs that still make progress.
DescentResult descend(const Objective& objective, const Projector& project,
                      VecX x, const VecX& scales, int iterations,
                      const FitConfig& config) {
  project(x);
  DescentResult result;
  double value = safe_eval(objective, x);
  result.trajectory.push_back(value);
  double alpha = config.learning_rate;
  int slow_iters = 0;
  for (int iter = 0; iter < iterations; ++iter) {
    VecX direction =
        fd_gradient(objective, x, scales, config.fd_step).cwiseProduct(scales);
    const double gnorm = direction.norm();
    if (!std::isfinite(gnorm) || !(gnorm > 1e-14)) break;
    direction /= gnorm;
    bool accepted = false;
    double step = alpha;
    const double before = value;
    for (int bt = 0; bt < 9 && !accepted; ++bt) {
      VecX candidate = x - step * direction.cwiseProduct(scales);
      project(candidate);
      const double cv = safe_eval(objective, candidate);
      if (cv < value) {
        x = std::move(candidate);
        value = cv;
        result.trajectory.push_back(value);
        alpha = std::min(step * 1.5, 0.5);
        accepted = true;
      }
      step *= 0.5;
    }
    if (!accepted) {
      alpha *= 0.25;
      if (alpha < 1e-7) break;
    }
    if (before - value < 1e-3 * std::max(value, 1e-300)) {
      if (++slow_iters >= 4) break;
    } else {
      slow_iters = 0;
    }
  }
  result.x = std::move(x);
  result.value = value;
  return result;
}

/// Evenly strided subsample (deterministic, order-preserving).
std::vector<Vec3> stride_subsample(const std::vector<Vec3>& pts, int cap) {
  if (cap <= 0 || static_cast<int>(pts.size()) <= cap) return pts;
  std::vector<Vec3> out;
  out.reserve(cap);
  for (int i = 0; i < cap; ++i)
    out.push_back(pts[static_cast<std::size_t>(i) * pts.size() / cap]);
  return out;
}

/// Centroid + principal axes (descending variance, deterministic signs).
struct CloudFrame {
  Vec3 centroid = Vec3::Zero();
  Mat3 axes = Mat3::Identity();
  Vec3 lambda = Vec3::Zero();
};

CloudFrame principal_frame(const std::vector<Vec3>& pts) {
  CloudFrame f;
  for (const Vec3& p : pts) f.centroid += p;
  f.centroid /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : pts) {
    const Vec3 d = p - f.centroid;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(pts.size());
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  for (int k = 0; k < 3; ++k) {
    Vec3 v = es.eigenvectors().col(2 - k);
    // Axis signs come from the third moment along the axis so the frame is a
    // function of cloud geometry alone; a rigidly moved copy of the cloud
    // then yields the rigidly moved frame. Near-symmetric directions fall
    // back to a coordinate rule (the sign ambiguity is covered by the
    // multi-start pose candidates anyway).
    double skew = 0.0;
    for (const Vec3& p : pts) skew += std::pow(v.dot(p - f.centroid), 3);
    const double lam = std::max(es.eigenvalues()[2 - k], 0.0);
    const double g1 =
        skew / (static_cast<double>(pts.size()) * std::pow(lam + 1e-300, 1.5));
    if (std::abs(g1) > 0.02) {
      if (g1 < 0.0) v = -v;
    } else {
      int arg = 0;
      v.cwiseAbs().maxCoeff(&arg);
      if (v[arg] < 0.0) v = -v;
    }
    f.axes.col(k) = v;
    f.lambda[k] = lam;
  }
  // Right-handed by construction so the frame is a proper rotation.
  f.axes.col(2) = f.axes.col(0).cross(f.axes.col(1));
  return f;
}

double extent_along(const std::vector<Vec3>& pts, const Vec3& centroid,
                    const Vec3& axis) {
  double lo = kInf, hi = -kInf;
  for (const Vec3& p : pts) {
    const double t = axis.dot(p - centroid);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  return hi - lo;
}

Quat unpack_quat(const VecX& x, int offset) {
  Vec4 q(x[offset], x[offset + 1], x[offset + 2], x[offset + 3]);
  const double n = q.norm();
  if (!(n > 1e-12)) return Quat::Identity();
  q /= n;
  return Quat(q[0], q[1], q[2], q[3]);
}

void renormalize_quat(VecX& x, int offset) {
  Vec4 q(x[offset], x[offset + 1], x[offset + 2], x[offset + 3]);
  const double n = q.norm();
  if (n > 1e-12)
    q /= n;
  else
    q = Vec4(1.0, 0.0, 0.0, 0.0);
  for (int i = 0; i < 4; ++i) x[offset + i] = q[i];
}

// ---------------------------------------------------------------------------
// Stage 1: single-instance fit.
// Layout: [quat 4][t 3][log s 1] then
//   stems:  [log r 1][live joint angles]
//   leaves: [beta shape_k][gamma deform_k]
// ---------------------------------------------------------------------------

struct Stage1Problem {
  NodeKind kind = NodeKind::Stem;
  const SpeciesModel* model = nullptr;
  AssembleOptions opts;
  CdVariant variant = CdVariant::L2;
  double beta_clamp = 2.0;
  int shape_k = 0;
  int deform_k = 0;
  int live_angles = 0;
  LeafSkeleton skeleton;
  SurfacePattern pattern;
  std::uint64_t pattern_seed = 0;
  std::vector<Vec3> cloud;
  std::unique_ptr<KdTree3> cloud_tree;

  int dim() const {
    return kind == NodeKind::Stem ? 9 + live_angles : 8 + shape_k + deform_k;
  }
};

struct Stage1State {
  SimilarityTransform pose;
  VecX beta;
  VecX gamma;
};

Stage1State stage1_unpack(const Stage1Problem& p, const VecX& x) {
  Stage1State st;
  st.pose.rotation = unpack_quat(x, 0);
  st.pose.translation = x.segment<3>(4);
  st.pose.scale = std::exp(std::clamp(x[7], -kLogScaleLimit, kLogScaleLimit));
  if (p.kind == NodeKind::Stem) {
    st.beta = VecX::Constant(1, std::exp(std::clamp(x[8], -8.0, 2.0)));
    st.gamma = VecX::Zero(2 * (p.model->stem.m_s - 1));
    for (int i = 0; i < p.live_angles; ++i)
      st.gamma[i] = std::clamp(x[9 + i], -kMaxJointAngle, kMaxJointAngle);
  } else {
    st.beta = VecX(p.shape_k);
    for (int i = 0; i < p.shape_k; ++i) {
      const double lim = p.beta_clamp * p.model->leaf_shape.sigma(i);
      st.beta[i] = std::clamp(x[8 + i], -lim, lim);
    }
    st.gamma = VecX(p.deform_k);
    for (int i = 0; i < p.deform_k; ++i) {
      const double lim = 3.0 * p.model->leaf_deform.sigma(i);
      st.gamma[i] = std::clamp(x[8 + p.shape_k + i], -lim, lim);
    }
  }
  return st;
}

void stage1_project(const Stage1Problem& p, VecX& x) {
  renormalize_quat(x, 0);
  x[7] = std::clamp(x[7], -kLogScaleLimit, kLogScaleLimit);
  if (p.kind == NodeKind::Stem) {
    x[8] = std::clamp(x[8], -8.0, 2.0);
    for (int i = 0; i < p.live_angles; ++i)
      x[9 + i] = std::clamp(x[9 + i], -kMaxJointAngle, kMaxJointAngle);
  } else {
    for (int i = 0; i < p.shape_k; ++i) {
      const double lim = p.beta_clamp * p.model->leaf_shape.sigma(i);
      x[8 + i] = std::clamp(x[8 + i], -lim, lim);
    }
    for (int i = 0; i < p.deform_k; ++i) {
      const double lim = 3.0 * p.model->leaf_deform.sigma(i);
      x[8 + p.shape_k + i] = std::clamp(x[8 + p.shape_k + i], -lim, lim);
    }
  }
}

TriMesh stage1_local_mesh(const Stage1Problem& p, const Stage1State& st,
                          const AssembleOptions& opts) {
  if (p.kind == NodeKind::Stem) {
    const std::vector<Vec3> axis = stem_deformed_axis(p.model->stem, st.gamma);
    return stem_mesh(axis, st.beta[0], opts.radial_segments,
                     opts.stem_samples_per_segment);
  }
  const Grid2 shaped = apply_shape(p.model->leaf, p.model->leaf_shape, st.beta);
  const Grid3 deformed = deform_leaf(lift_grid(shaped), p.skeleton,
                                     p.model->leaf_deform, st.gamma);
  return leaf_mesh(deformed, opts.leaf_subdivision);
}

double stage1_objective(const Stage1Problem& p, const VecX& x) {
  const Stage1State st = stage1_unpack(p, x);
  const TriMesh mesh = stage1_local_mesh(p, st, p.opts);
  std::vector<Vec3> samples = eval_surface_pattern(mesh, p.pattern);
  for (Vec3& s : samples) s = st.pose.apply(s);
  const KdTree3 tree(samples);
  return chamfer_indexed(samples, tree, p.cloud, *p.cloud_tree, p.variant);
}

std::vector<Vec3> stage1_world_pattern(const Stage1Problem& p, const VecX& x) {
  const Stage1State st = stage1_unpack(p, x);
  const TriMesh mesh = stage1_local_mesh(p, st, p.opts);
  std::vector<Vec3> samples = eval_surface_pattern(mesh, p.pattern);
  for (Vec3& s : samples) s = st.pose.apply(s);
  return samples;
}

// Squared Mahalanobis norm of the leaf coefficients under the basis priors.
// Used to pick between rival basins that reach the same chamfer floor: a
// mirrored pose can imitate the surface, but only through implausibly large
// coefficient contortions.
double coefficient_mahalanobis2(const Stage1Problem& p, const VecX& x) {
  if (p.kind != NodeKind::Leaf) return 0.0;
  const Stage1State st = stage1_unpack(p, x);
  double m2 = 0.0;
  for (int i = 0; i < p.shape_k; ++i) {
    const double s = std::max(p.model->leaf_shape.sigma(i), 1e-4);
    m2 += (st.beta[i] / s) * (st.beta[i] / s);
  }
  for (int i = 0; i < p.deform_k; ++i) {
    const double s = std::max(p.model->leaf_deform.sigma(i), 1e-4);
    m2 += (st.gamma[i] / s) * (st.gamma[i] / s);
  }
  return m2;
}

// Correspondence-based refinement. Outline-only shape changes move a thin
// rim band whose chamfer signal hides near the sampling floor, where
// finite-difference descent stalls: the descent direction is dominated by
// floor noise in the pose coordinates. A damped Gauss-Newton pass follows
// that shallow valley directly. Residuals are the closest-point match
// vectors in both directions (cloud -> pattern and pattern -> cloud), frozen
// per iteration, linearized through a finite-difference Jacobian of the
// pattern points; acceptance is gated on the actual chamfer objective, so
// the trajectory of accepted values stays nonincreasing.
void refine_by_correspondence(Stage1Problem& p, const Projector& project,
                              const VecX& scales, int iterations, VecX& x,
                              double& value, std::vector<double>* trajectory) {
  const int n = static_cast<int>(x.size());
  const int np = static_cast<int>(p.pattern.face.size());
  const int nc = static_cast<int>(p.cloud.size());
  if (np == 0 || nc == 0 || iterations <= 0) return;

  // Gaussian prior over shape/deformation coefficients (in sigma units).
  // Without it the solve chases sampling noise and rams trailing
  // coefficients into their clamps; the prior only shapes proposals, while
  // acceptance stays gated on the pure chamfer objective.
  VecX prior = VecX::Zero(n);
  if (p.kind == NodeKind::Leaf) {
    for (int i = 0; i < p.shape_k; ++i)
      prior[8 + i] =
          1.0 / std::pow(std::max(p.model->leaf_shape.sigma(i), 1e-4), 2);
    for (int i = 0; i < p.deform_k; ++i)
      prior[8 + p.shape_k + i] =
          1.0 / std::pow(std::max(p.model->leaf_deform.sigma(i), 1e-4), 2);
  }
  const double prior_fraction = 0.03;

  double lambda = 1e-3;
  for (int iter = 0; iter < iterations; ++iter) {
    // Refreeze the sampling pattern on the current surface: a pattern frozen
    // on the rest mesh loses area uniformity as the shape deviates, which
    // skews the rim balance the solve is trying to find.
    {
      const Stage1State st = stage1_unpack(p, x);
      const TriMesh current = stage1_local_mesh(p, st, p.opts);
      p.pattern = make_surface_pattern(current, np, p.pattern_seed);
      value = safe_eval(
          [&p](const VecX& v) { return stage1_objective(p, v); }, x);
    }
    const std::vector<Vec3> base = stage1_world_pattern(p, x);
    MatX jac(3 * np, n);
    VecX probe = x;
    for (int i = 0; i < n; ++i) {
      const double h = std::max(0.05 * scales[i], 1e-9);
      probe[i] = x[i] + h;
      const std::vector<Vec3> plus = stage1_world_pattern(p, probe);
      probe[i] = x[i] - h;
      const std::vector<Vec3> minus = stage1_world_pattern(p, probe);
      probe[i] = x[i];
      for (int k = 0; k < np; ++k)
        jac.block<3, 1>(3 * k, i) = (plus[k] - minus[k]) / (2.0 * h);
    }

    const KdTree3 pattern_tree(base);
    MatX normal = MatX::Zero(n, n);
    VecX rhs = VecX::Zero(n);
    const double wa = 1.0 / static_cast<double>(nc);
    for (const Vec3& c : p.cloud) {
      const int k = pattern_tree.nearest_index(c);
      const auto jk = jac.block(3 * k, 0, 3, n);
      const Vec3 r = base[k] - c;
      normal.noalias() += wa * jk.transpose() * jk;
      rhs.noalias() += wa * jk.transpose() * r;
    }
    const double wb = 1.0 / static_cast<double>(np);
    for (int k = 0; k < np; ++k) {
      const Vec3 r = base[k] - p.cloud[p.cloud_tree->nearest_index(base[k])];
      const auto jk = jac.block(3 * k, 0, 3, n);
      normal.noalias() += wb * jk.transpose() * jk;
      rhs.noalias() += wb * jk.transpose() * r;
    }
    const double mu = prior_fraction * value;
    normal.diagonal() += mu * prior;
    rhs += mu * prior.cwiseProduct(x);

    bool accepted = false;
    for (int attempt = 0; attempt < 6; ++attempt) {
      MatX damped = normal;
      damped.diagonal() += lambda * normal.diagonal();
      damped.diagonal().array() += 1e-12;
      const VecX dx = damped.ldlt().solve(-rhs);
      if (!dx.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      VecX candidate = x + dx;
      project(candidate);
      const double cv = safe_eval(
          [&p](const VecX& v) { return stage1_objective(p, v); }, candidate);
      if (cv < value) {
        x = std::move(candidate);
        value = cv;
        if (trajectory && (trajectory->empty() || cv < trajectory->back()))
          trajectory->push_back(cv);
        lambda = std::max(lambda * 0.3, 1e-7);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
  }
}

// ---------------------------------------------------------------------------
// Stage 2: global articulation + stem deformation.
// Layout: [t0 3] then per node (topology order):
//   [quat 4][d 1 (non-root)][log s 1][live stem angles (stems)]
// ---------------------------------------------------------------------------

struct NodeLayout {
  int id = -1;
  bool root = false;
  int quat = -1;
  int d = -1;
  int log_s = -1;
  int angles = -1;
  int angle_count = 0;
};

struct Stage2Problem {
  const SpeciesModel* model = nullptr;
  AssembleOptions opts;
  CdVariant variant = CdVariant::L2;
  PlantParams base;
  std::vector<NodeLayout> layout;
  int dim = 0;
  std::vector<Vec3> cloud;
  std::unique_ptr<KdTree3> cloud_tree;

  // Per-node sample geometry in the node's local frame, parallel to
  // `layout`. Stage 2 never touches leaf coefficients, so leaf samples are
  // fixed; a stem's samples and attachment skeleton depend only on its own
  // bend angles (one-entry cache keyed on them). Because each node moves
  // rigidly-with-scale, nearest distances can be answered by per-node local
  // kd-trees (distance scales with the node's similarity scale), so a
  // finite-difference probe of any pose coordinate builds no trees at all.
  struct NodeGeom {
    bool stem = false;
    int parent = -1;          // layout index of the parent, -1 for the root
    double tube_radius = 0.0; // stems only
    VecX gamma;               // stem cache key for pts/tree/skel
    SurfacePattern pattern;   // frozen on the local mesh topology
    std::vector<Vec3> pts;    // pattern positions on the local mesh
    std::unique_ptr<KdTree3> tree;
    FrameSequence skel;       // stems: attachment skeleton
    Vec3 center = Vec3::Zero();  // local bounding sphere of pts
    double radius = 0.0;
  };
  std::vector<NodeGeom> geom;

  // Evaluation state carried between calls. Descent probes perturb one or
  // two coordinates at a time, so between consecutive evaluations most node
  // transforms -- and with them most nearest-neighbor distances -- are
  // unchanged; the objective recomputes only the moved subtree and repairs
  // the cached cloud-point minima exactly (see stage2_objective).
  VecX last_x;
  std::vector<SimilarityTransform> chain;
  std::vector<Mat3> inv_rot;
  std::vector<Vec3> world_center;
  std::vector<double> world_radius;
  std::vector<char> affected;
  std::vector<int> aff_list;
  std::vector<double> fwd_sum;    // per-node forward partial sums
  std::vector<double> rev_d;      // [q * n + k] distance, kInf when pruned
  std::vector<double> rev_best;   // per cloud point: exact min over nodes
  std::vector<int> rev_arg;       // a node attaining rev_best
  std::vector<std::pair<double, int>> lb_order;
};

void node_bounds(Stage2Problem::NodeGeom& g) {
  g.center = Vec3::Zero();
  for (const Vec3& p : g.pts) g.center += p;
  g.center /= static_cast<double>(std::max<std::size_t>(g.pts.size(), 1));
  g.radius = 0.0;
  for (const Vec3& p : g.pts)
    g.radius = std::max(g.radius, (p - g.center).norm());
}

void refresh_stem_geom(Stage2Problem& p, std::size_t k, VecX gamma) {
  Stage2Problem::NodeGeom& g = p.geom[k];
  const std::vector<Vec3> axis = stem_deformed_axis(p.model->stem, gamma);
  const TriMesh mesh = stem_mesh(axis, g.tube_radius, p.opts.radial_segments,
                                 p.opts.stem_samples_per_segment);
  g.pts = eval_surface_pattern(mesh, g.pattern);
  g.tree = std::make_unique<KdTree3>(g.pts);
  g.skel =
      stem_frames(sample_open_curve(axis, p.opts.stem_samples_per_segment));
  node_bounds(g);
  g.gamma = std::move(gamma);
}

PlantParams stage2_params(const Stage2Problem& p, const VecX& x) {
  PlantParams params = p.base;
  for (const NodeLayout& nl : p.layout) {
    const int idx = params.topology.index_of(nl.id);
    NodeArticulation& art = params.articulations[idx];
    art.tau = unpack_quat(x, nl.quat);
    art.d = nl.root ? 0.0 : std::clamp(x[nl.d], 0.0, 1.0);
    art.s = std::exp(std::clamp(x[nl.log_s], -kLogScaleLimit, kLogScaleLimit));
    for (int i = 0; i < nl.angle_count; ++i)
      params.gamma[idx][i] =
          std::clamp(x[nl.angles + i], -kMaxJointAngle, kMaxJointAngle);
  }
  return params;
}

void stage2_project(const Stage2Problem& p, VecX& x) {
  for (const NodeLayout& nl : p.layout) {
    renormalize_quat(x, nl.quat);
    if (!nl.root) x[nl.d] = std::clamp(x[nl.d], 0.0, 1.0);
    x[nl.log_s] = std::clamp(x[nl.log_s], -kLogScaleLimit, kLogScaleLimit);
    for (int i = 0; i < nl.angle_count; ++i)
      x[nl.angles + i] =
          std::clamp(x[nl.angles + i], -kMaxJointAngle, kMaxJointAngle);
  }
}

double stage2_objective(Stage2Problem& p, const VecX& x) {
  const std::size_t n = p.layout.size();
  const std::size_t m = p.cloud.size();

  // A node needs recomputing when its own coordinates changed or any
  // ancestor's did (transforms compose down the tree). The root offset
  // moves everything.
  const bool fresh = p.last_x.size() != x.size();
  bool global = fresh;
  p.affected.assign(n, 1);
  if (!fresh) {
    for (int i = 0; i < 3 && !global; ++i) global = x[i] != p.last_x[i];
    if (!global) {
      for (std::size_t k = 0; k < n; ++k) {
        const NodeLayout& nl = p.layout[k];
        bool own = false;
        for (int i = 0; i < 4; ++i)
          own |= x[nl.quat + i] != p.last_x[nl.quat + i];
        if (!nl.root) own |= x[nl.d] != p.last_x[nl.d];
        own |= x[nl.log_s] != p.last_x[nl.log_s];
        for (int i = 0; i < nl.angle_count; ++i)
          own |= x[nl.angles + i] != p.last_x[nl.angles + i];
        p.affected[k] =
            own || (p.geom[k].parent >= 0 && p.affected[p.geom[k].parent]);
      }
    }
  }
  if (global) p.affected.assign(n, 1);
  p.aff_list.clear();
  for (std::size_t k = 0; k < n; ++k)
    if (p.affected[k]) p.aff_list.push_back(static_cast<int>(k));

  // Decode moved articulations, refresh stale stem caches, recompose their
  // chain entries (parents precede children, so carried entries stay valid).
  const Vec3 t0 = x.head<3>();
  p.chain.resize(n);
  p.inv_rot.resize(n);
  p.world_center.resize(n);
  p.world_radius.resize(n);
  for (const int k : p.aff_list) {
    const NodeLayout& nl = p.layout[k];
    NodeArticulation art;
    art.tau = unpack_quat(x, nl.quat);
    art.d = nl.root ? 0.0 : std::clamp(x[nl.d], 0.0, 1.0);
    art.s = std::exp(std::clamp(x[nl.log_s], -kLogScaleLimit, kLogScaleLimit));
    Stage2Problem::NodeGeom& g = p.geom[k];
    if (g.stem) {
      VecX gamma = g.gamma;
      for (int i = 0; i < nl.angle_count; ++i)
        gamma[i] =
            std::clamp(x[nl.angles + i], -kMaxJointAngle, kMaxJointAngle);
      if (gamma != g.gamma) refresh_stem_geom(p, k, std::move(gamma));
    }
    p.chain[k] =
        g.parent < 0
            ? SimilarityTransform{art.tau, Vec3::Zero(), art.s}
            : compose_similarity(p.chain[g.parent],
                                 attachment_transform(p.geom[g.parent].skel, art));
    p.inv_rot[k] = p.chain[k].rotation.conjugate().toRotationMatrix();
    p.world_center[k] = p.chain[k].apply(g.center) + t0;
    p.world_radius[k] = p.chain[k].scale * g.radius;
  }

  const bool l2 = p.variant == CdVariant::L2;
  // Forward term: node samples against the cloud tree, kept as per-node
  // partial sums so the total is identical however many nodes moved.
  p.fwd_sum.resize(n, 0.0);
  for (const int k : p.aff_list) {
    const SimilarityTransform& W = p.chain[k];
    double acc = 0.0;
    for (const Vec3& s : p.geom[k].pts) {
      const double d2 = p.cloud_tree->nearest_squared(W.apply(s) + t0);
      acc += l2 ? d2 : std::sqrt(d2);
    }
    p.fwd_sum[k] = acc;
  }
  double acc_f = 0.0;
  std::size_t n_samples = 0;
  for (std::size_t k = 0; k < n; ++k) {
    acc_f += p.fwd_sum[k];
    n_samples += p.geom[k].pts.size();
  }

  // Reverse term: each cloud point against the union of node samples.
  // Per-node local kd-tree queries are exact because each node moves by a
  // similarity (the local nearest distance scales with the node's scale).
  // Bounding-sphere lower bounds prune most nodes, and cached per-node
  // distances let an unmoved minimum certify every unmoved node: a node was
  // either measured exactly (finite cache) or pruned against a bound that
  // is at least the stored minimum (kInf cache).
  const auto node_dist = [&p, &t0](int k, const Vec3& q) {
    const SimilarityTransform& W = p.chain[k];
    const Vec3 ql = (p.inv_rot[k] * (q - t0 - W.translation)) / W.scale;
    return W.scale * std::sqrt(p.geom[k].tree->nearest_squared(ql));
  };
  const auto lower_bound = [&p](int k, const Vec3& q) {
    return (q - p.world_center[k]).norm() - p.world_radius[k];
  };
  p.rev_d.resize(n * m);
  p.rev_best.resize(m);
  p.rev_arg.resize(m);
  if (global) {
    p.lb_order.resize(n);
    for (std::size_t j = 0; j < m; ++j) {
      const Vec3& q = p.cloud[j];
      double* dq = &p.rev_d[j * n];
      std::fill(dq, dq + n, kInf);
      for (std::size_t k = 0; k < n; ++k)
        p.lb_order[k] = {lower_bound(static_cast<int>(k), q),
                         static_cast<int>(k)};
      std::sort(p.lb_order.begin(), p.lb_order.end());
      double best = kInf;
      int arg = -1;
      for (std::size_t i = 0; i < n; ++i) {
        if (p.lb_order[i].first >= best) break;
        const int k = p.lb_order[i].second;
        const double d = node_dist(k, q);
        dq[k] = d;
        if (d < best) {
          best = d;
          arg = k;
        }
      }
      p.rev_best[j] = best;
      p.rev_arg[j] = arg;
    }
  } else {
    for (std::size_t j = 0; j < m; ++j) {
      const Vec3& q = p.cloud[j];
      double* dq = &p.rev_d[j * n];
      double best = p.rev_best[j];
      int arg = p.rev_arg[j];
      if (!p.affected[arg]) {
        // The stored minimum still stands for every unmoved node; only the
        // moved ones can undercut it.
        for (const int k : p.aff_list) {
          if (lower_bound(k, q) >= best) {
            dq[k] = kInf;
            continue;
          }
          const double d = node_dist(k, q);
          dq[k] = d;
          if (d < best) {
            best = d;
            arg = k;
          }
        }
      } else {
        // The node that attained the minimum moved: rebuild from the exact
        // unmoved entries, let the moved nodes compete, and only if the
        // minimum rose re-examine unmoved nodes that were pruned against
        // the old, lower one.
        const double old_best = best;
        best = kInf;
        arg = -1;
        for (std::size_t k = 0; k < n; ++k)
          if (!p.affected[k] && dq[k] < best) {
            best = dq[k];
            arg = static_cast<int>(k);
          }
        for (const int k : p.aff_list) {
          if (lower_bound(k, q) >= best) {
            dq[k] = kInf;
            continue;
          }
          const double d = node_dist(k, q);
          dq[k] = d;
          if (d < best) {
            best = d;
            arg = k;
          }
        }
        if (best > old_best) {
          for (std::size_t k = 0; k < n; ++k) {
            if (p.affected[k] || dq[k] != kInf) continue;
            if (lower_bound(static_cast<int>(k), q) >= best) continue;
            const double d = node_dist(static_cast<int>(k), q);
            dq[k] = d;
            if (d < best) {
              best = d;
              arg = static_cast<int>(k);
            }
          }
        }
      }
      p.rev_best[j] = best;
      p.rev_arg[j] = arg;
    }
  }
  double acc_r = 0.0;
  for (std::size_t j = 0; j < m; ++j)
    acc_r += l2 ? p.rev_best[j] * p.rev_best[j] : p.rev_best[j];

  p.last_x = x;
  return acc_f / static_cast<double>(n_samples) +
         acc_r / static_cast<double>(m);
}

/// Cyclic per-block descent over [root offset] + [each node's coordinates],
/// appending accepted values to `trajectory`. Each block keeps its own step
/// length, so progress on one node is independent of the others' curvature;
/// probes and candidates touch a single subtree, which the incremental
/// objective evaluates cheaply.
double stage2_block_refine(Stage2Problem& p, const FitConfig& config, VecX& x,
                           const VecX& scales, double value,
                           std::vector<double>& trajectory) {
  std::vector<std::vector<int>> blocks;
  blocks.push_back({0, 1, 2});
  for (const NodeLayout& nl : p.layout) {
    std::vector<int> b{nl.quat, nl.quat + 1, nl.quat + 2, nl.quat + 3};
    if (!nl.root) b.push_back(nl.d);
    b.push_back(nl.log_s);
    for (int i = 0; i < nl.angle_count; ++i) b.push_back(nl.angles + i);
    blocks.push_back(std::move(b));
  }
  std::vector<double> alpha(blocks.size(), config.learning_rate);
  for (int sweep = 0; sweep < config.stage2_block_sweeps; ++sweep) {
    const double sweep_start = value;
    bool any = false;
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
      if (alpha[bi] < 1e-7) continue;
      const std::vector<int>& b = blocks[bi];
      VecX probe = x;
      VecX dir = VecX::Zero(static_cast<Eigen::Index>(b.size()));
      for (std::size_t j = 0; j < b.size(); ++j) {
        const int i = b[j];
        const double h = std::max(config.fd_step * scales[i], 1e-12);
        probe[i] = x[i] + h;
        const double fp = stage2_objective(p, probe);
        probe[i] = x[i] - h;
        const double fm = stage2_objective(p, probe);
        probe[i] = x[i];
        dir[j] = (fp - fm) / (2.0 * h) * scales[i];
      }
      const double gn = dir.norm();
      if (!std::isfinite(gn) || !(gn > 1e-14)) continue;
      dir /= gn;
      double step = alpha[bi];
      bool accepted = false;
      for (int bt = 0; bt < 6 && !accepted; ++bt) {
        VecX candidate = x;
        for (std::size_t j = 0; j < b.size(); ++j)
          candidate[b[j]] -= step * dir[j] * scales[b[j]];
        stage2_project(p, candidate);
        const double cv = stage2_objective(p, candidate);
        if (cv < value) {
          x = std::move(candidate);
          value = cv;
          trajectory.push_back(value);
          alpha[bi] = std::min(step * 1.5, 0.5);
          accepted = true;
        }
        step *= 0.5;
      }
      if (!accepted) alpha[bi] *= 0.25;
      any = any || accepted;
    }
    // A whole sweep buying under a percent means the cheap escapes are done;
    // further progress belongs to the joint landscape, not to blocks.
    if (!any || sweep_start - value < 1e-2 * value) break;
  }
  return value;
}

/// Arc-length fraction of the closest point on the skeleton polyline.
double project_fraction(const FrameSequence& skel, const Vec3& p) {
  double best = kInf;
  double best_arc = 0.0;
  for (std::size_t i = 0; i + 1 < skel.positions.size(); ++i) {
    const Vec3& a = skel.positions[i];
    const Vec3& b = skel.positions[i + 1];
    const Vec3 ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t =
        len2 > 0.0 ? std::clamp(ab.dot(p - a) / len2, 0.0, 1.0) : 0.0;
    const double d2 = (p - (a + t * ab)).squaredNorm();
    if (d2 < best) {
      best = d2;
      best_arc = skel.arcs.cumulative[i] +
                 t * (skel.arcs.cumulative[i + 1] - skel.arcs.cumulative[i]);
    }
  }
  if (!(skel.arcs.total > 0.0)) return 0.0;
  return std::clamp(best_arc / skel.arcs.total, 0.0, 1.0);
}

}  // namespace

VecX fd_gradient(const std::function<double(const VecX&)>& objective,
                 const VecX& x, const VecX& scales, double fd_step) {
  if (scales.size() != x.size())
    throw std::invalid_argument("fd_gradient: scales/parameter size mismatch");
  VecX grad(x.size());
  VecX probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = std::max(fd_step * scales[i], 1e-12);
    probe[i] = x[i] + h;
    const double fp = objective(probe);
    probe[i] = x[i] - h;
    const double fm = objective(probe);
    probe[i] = x[i];
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

bool descent_step_decreases(const std::function<double(const VecX&)>& objective,
                            const VecX& x, const VecX& scales, double fd_step,
                            int backtracks) {
  const double f0 = objective(x);
  VecX direction = fd_gradient(objective, x, scales, fd_step).cwiseProduct(scales);
  const double gnorm = direction.norm();
  if (!(gnorm > 1e-12)) return true;  // stationary point: nothing to decrease
  direction /= gnorm;
  double step = 0.1;
  for (int bt = 0; bt < backtracks; ++bt) {
    const VecX candidate = x - step * direction.cwiseProduct(scales);
    if (objective(candidate) < f0) return true;
    step *= 0.5;
  }
  return false;
}

InstanceFit fit_instance(const std::vector<Vec3>& points, NodeKind kind,
                         const SpeciesModel& model, const FitConfig& config) {
  const int minimum = kind == NodeKind::Stem ? config.min_stem_points
                                             : config.min_leaf_points;
  if (static_cast<int>(points.size()) < minimum)
    throw std::invalid_argument(
        "fit_instance: " + std::to_string(points.size()) + " points for a " +
        to_string(kind) + " instance; need at least " + std::to_string(minimum));

  Stage1Problem p;
  p.kind = kind;
  p.model = &model;
  p.opts = config.fit_mesh;
  p.variant = config.variant;
  p.beta_clamp = config.beta_clamp_sigma;
  p.shape_k = model.leaf_shape.k;
  p.deform_k = model.leaf_deform.k;
  p.live_angles = std::max(0, 2 * (model.stem.m_s - 2));
  if (kind == NodeKind::Leaf)
    p.skeleton = build_leaf_skeleton(model.leaf.m1, model.leaf.m2);
  // The whole fit runs in a canonical cloud frame (centroid at the origin,
  // unit RMS radius, principal axes on the coordinate axes): a rigidly moved
  // copy of the cloud becomes numerically the same problem, so recovered
  // coefficients are equivariant and the recovered pose composes with the
  // motion. The world pose is restored at the end.
  const CloudFrame world_frame = principal_frame(points);
  SimilarityTransform canon;  // world -> canonical
  canon.rotation = Quat(Mat3(world_frame.axes.transpose()));
  canon.scale = 1.0 / std::sqrt(std::max(world_frame.lambda.sum(), 1e-300));
  canon.translation = -(canon.scale * (canon.rotation * world_frame.centroid));
  std::vector<Vec3> canon_pts(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    canon_pts[i] = canon.apply(points[i]);

  CloudFrame frame;  // the canonical cloud's own frame, exact by construction
  frame.centroid = Vec3::Zero();
  frame.axes = Mat3::Identity();
  frame.lambda = canon.scale * canon.scale * world_frame.lambda;

  p.cloud = stride_subsample(canon_pts, config.stage1_cloud_cap);
  p.cloud_tree = std::make_unique<KdTree3>(p.cloud);

  // Canonical-template centroid and length for scale/translation init.
  Vec3 local_centroid = Vec3(0.0, 0.5, 0.0);
  double local_extent = 1.0;
  if (kind == NodeKind::Leaf) {
    local_centroid = Vec3::Zero();
    double ylo = kInf, yhi = -kInf;
    for (const Vec2& g : model.leaf.grid.pts) {
      local_centroid += Vec3(g[0], g[1], 0.0);
      ylo = std::min(ylo, g[1]);
      yhi = std::max(yhi, g[1]);
    }
    local_centroid /= static_cast<double>(model.leaf.grid.pts.size());
    local_extent = std::max(yhi - ylo, 1e-6);
  }
  const double cloud_extent =
      extent_along(canon_pts, frame.centroid, frame.axes.col(0));
  const double s0 = std::max(cloud_extent, 1e-6) / local_extent;

  double log_r0 = std::log(model.stem.default_radius);
  if (kind == NodeKind::Stem) {
    const double r_world =
        std::sqrt(std::max(frame.lambda[1] + frame.lambda[2], 1e-12));
    log_r0 = std::log(std::clamp(r_world / s0, 0.005, 0.25));
  }

  {  // Sampling pattern frozen on the undeformed local mesh.
    Stage1State rest;
    rest.beta = kind == NodeKind::Stem ? VecX::Constant(1, std::exp(log_r0))
                                       : VecX::Zero(p.shape_k);
    rest.gamma = kind == NodeKind::Stem
                     ? VecX::Zero(2 * (model.stem.m_s - 1))
                     : VecX::Zero(p.deform_k);
    const TriMesh rest_mesh = stage1_local_mesh(p, rest, p.opts);
    p.pattern_seed = config.seed * kSeedMix + 17;
    p.pattern = make_surface_pattern(rest_mesh, config.stage1_template_samples,
                                     p.pattern_seed);
  }

  VecX scales = VecX::Ones(p.dim());
  scales.segment<4>(0).setConstant(0.3);
  scales.segment<3>(4).setConstant(
      std::max(0.5 * std::sqrt(frame.lambda[0]), 1e-6));
  scales[7] = 0.3;
  if (kind == NodeKind::Stem) {
    scales[8] = 0.3;
    for (int i = 0; i < p.live_angles; ++i) scales[9 + i] = 0.3;
  } else {
    for (int i = 0; i < p.shape_k; ++i)
      scales[8 + i] = std::max(model.leaf_shape.sigma(i), 1e-3);
    for (int i = 0; i < p.deform_k; ++i)
      scales[8 + p.shape_k + i] = std::max(model.leaf_deform.sigma(i), 1e-3);
  }

  const Objective objective = [&p](const VecX& x) {
    return stage1_objective(p, x);
  };
  const Projector project = [&p](VecX& x) { stage1_project(p, x); };

  // Multi-start over principal-axis sign ambiguities: the template main axis
  // maps to +/- e1 and the template x-axis to +/- e2 (then +/- e3).
  const int start_count = std::clamp(config.multi_start, 1, 8);
  std::vector<VecX> starts;
  for (int xi = 1; xi <= 2; ++xi)
    for (int sy : {1, -1})
      for (int sx : {1, -1}) {
        if (static_cast<int>(starts.size()) >= start_count) continue;
        Mat3 R;
        R.col(1) = static_cast<double>(sy) * frame.axes.col(0);
        R.col(0) = static_cast<double>(sx) * frame.axes.col(xi);
        R.col(2) = R.col(0).cross(R.col(1));
        VecX x0 = VecX::Zero(p.dim());
        const Quat q(R);
        x0[0] = q.w();
        x0[1] = q.x();
        x0[2] = q.y();
        x0[3] = q.z();
        x0.segment<3>(4) = frame.centroid - s0 * (R * local_centroid);
        x0[7] = std::log(s0);
        if (kind == NodeKind::Stem) x0[8] = log_r0;
        starts.push_back(std::move(x0));
      }

  // Short probes rank the starts. Near-symmetric templates leave a mirrored
  // rival basin close in objective value, so the two best probes are carried
  // as finalists through the coarse leg AND the dense polish: only at full
  // resolution does the true basin separate (the mirrored one needs large
  // coefficient contortions to reach the same floor).
  std::vector<DescentResult> probes;
  probes.reserve(starts.size());
  for (const VecX& x0 : starts)
    probes.push_back(descend(objective, project, x0, scales,
                             config.stage1_probe_iterations, config));
  std::sort(probes.begin(), probes.end(),
            [](const DescentResult& a, const DescentResult& b) {
              return a.value < b.value;
            });
  const std::size_t finalist_count = std::min<std::size_t>(2, probes.size());
  const int coarse_iters = std::max(
      1, config.stage1_iterations - config.stage1_probe_iterations);
  std::vector<DescentResult> finalists;
  for (std::size_t i = 0; i < finalist_count; ++i)
    finalists.push_back(
        descend(objective, project, probes[i].x, scales, coarse_iters, config));

  // Dense polish: outline-only shape changes move just a thin rim band, a
  // signal that sits below the coarse pattern's sampling floor. Re-subsample
  // both sides finely, continue the descent, then hand over to the
  // correspondence solver. The reported trajectory is the winning finalist's
  // accepted-step sequence on this final objective.
  DescentResult run;
  if (config.polish_iterations > 0) {
    p.cloud = stride_subsample(canon_pts, config.polish_cloud_cap);
    p.cloud_tree = std::make_unique<KdTree3>(p.cloud);
    Stage1State rest;
    rest.beta = kind == NodeKind::Stem ? VecX::Constant(1, std::exp(log_r0))
                                       : VecX::Zero(p.shape_k);
    rest.gamma = kind == NodeKind::Stem
                     ? VecX::Zero(2 * (model.stem.m_s - 1))
                     : VecX::Zero(p.deform_k);
    const TriMesh rest_mesh = stage1_local_mesh(p, rest, p.opts);
    const int pattern_count =
        std::max(64, std::min(config.polish_template_samples,
                              static_cast<int>(p.cloud.size())));
    p.pattern_seed = config.seed * kSeedMix + 53;
    p.pattern = make_surface_pattern(rest_mesh, pattern_count, p.pattern_seed);
    // Stems get the dense descent only: their radius is already pinned by it,
    // the rim-band argument is about leaf outlines, and stem bend angles are
    // re-optimized by stage 2 anyway.
    const int polish_descent =
        kind == NodeKind::Stem ? config.polish_iterations
                               : std::max(1, 2 * config.polish_iterations / 5);
    const int polish_newton =
        std::max(1, config.polish_iterations - polish_descent);
    const SurfacePattern polish_pattern = p.pattern;
    double best_score = kInf;
    for (const DescentResult& f : finalists) {
      p.pattern = polish_pattern;
      DescentResult r =
          descend(objective, project, f.x, scales, polish_descent, config);
      if (kind == NodeKind::Leaf)
        refine_by_correspondence(p, project, scales, polish_newton, r.x,
                                 r.value, &r.trajectory);
      const double score =
          r.value * (1.0 + 0.05 * coefficient_mahalanobis2(p, r.x));
      if (run.x.size() == 0 || score < best_score) {
        run = std::move(r);
        best_score = score;
      }
    }
  } else {
    double best_score = kInf;
    for (DescentResult& f : finalists) {
      const double score =
          f.value * (1.0 + 0.05 * coefficient_mahalanobis2(p, f.x));
      if (run.x.size() == 0 || score < best_score) {
        run = std::move(f);
        best_score = score;
      }
    }
  }

  const Stage1State st = stage1_unpack(p, run.x);
  InstanceFit fit;
  fit.kind = kind;
  fit.beta = st.beta;
  fit.gamma = st.gamma;
  fit.pose = compose_similarity(inverse_similarity(canon), st.pose);
  fit.cd = run.value;
  fit.trajectory = std::move(run.trajectory);

  // Dense re-evaluation against the full instance cloud for reporting (still
  // in the canonical frame; normalized CD is scale-free).
  const TriMesh dense_mesh = stage1_local_mesh(p, st, AssembleOptions{});
  std::vector<Vec3> samples =
      sample_surface_points(dense_mesh, std::max(config.instance_eval_samples, 1),
                            config.seed * kSeedMix + 99);
  for (Vec3& s : samples) s = st.pose.apply(s);
  const double raw = chamfer(samples, canon_pts, config.variant);
  const double diag = bbox_diagonal(canon_pts);
  fit.normalized_cd =
      diag > 0.0 ? normalized_chamfer(raw, diag, config.variant) : raw;
  fit.high_residual = !(fit.normalized_cd < 0.01);
  return fit;
}

std::pair<PlantParams, FitReport> fit_plant(
    const LabeledCloud& cloud, const Topology& topo,
    const std::vector<InstanceFit>& stage1, const SpeciesModel& model,
    const FitConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  const ValidationResult vr = validate_topology(topo);
  if (!vr.ok)
    throw std::invalid_argument("fit_plant: invalid topology: " +
                                vr.violations.front());
  if (cloud.points.empty())
    throw std::invalid_argument("fit_plant: empty cloud");

  std::unordered_map<int, const InstanceFit*> by_id;
  for (const InstanceFit& f : stage1) by_id[f.instance] = &f;

  const std::vector<int> order = topo.topological_order();
  const int root = topo.root_id();
  if (by_id.find(root) == by_id.end())
    throw std::invalid_argument("fit_plant: no stage-1 fit for root node " +
                                std::to_string(root));
  Vec3 t0_init = Vec3::Zero();

  // Convert stage-1 world poses into relative articulations along the chain.
  PlantParams base;
  base.topology = topo;
  base.species = model.species;

  std::unordered_map<int, SimilarityTransform> chain;
  std::unordered_map<int, FrameSequence> skels;
  std::vector<InstanceFit> repaired;
  const auto build_base = [&]() {
  t0_init = by_id.at(root)->pose.translation;
  base.articulations.assign(topo.nodes.size(), NodeArticulation{});
  base.beta.assign(topo.nodes.size(), VecX{});
  base.gamma.assign(topo.nodes.size(), VecX{});
  chain.clear();
  skels.clear();
  for (int id : order) {
    const auto it = by_id.find(id);
    if (it == by_id.end())
      throw std::invalid_argument("fit_plant: no stage-1 fit for node " +
                                  std::to_string(id));
    const InstanceFit& f = *it->second;
    const int idx = topo.index_of(id);
    const TopologyNode& node = topo.nodes[idx];
    if (node.kind != f.kind)
      throw std::invalid_argument("fit_plant: node kind mismatch for node " +
                                  std::to_string(id));
    base.beta[idx] = f.beta;
    base.gamma[idx] = f.gamma;

    NodeArticulation art;
    SimilarityTransform T;
    if (node.parent < 0) {
      art.tau = f.pose.rotation;
      art.d = 0.0;
      art.s = f.pose.scale;
      T = SimilarityTransform{art.tau, Vec3::Zero(), art.s};
    } else {
      const SimilarityTransform& Tp = chain.at(node.parent);
      const FrameSequence& skel = skels.at(node.parent);
      SimilarityTransform Ti = f.pose;
      Ti.translation -= t0_init;
      const Vec3 b_local = inverse_similarity(Tp).apply(Ti.translation);
      art.d = project_fraction(skel, b_local);
      const FramePoint fp = frame_at_fraction(skel, art.d);
      art.tau = (Tp.rotation * Quat(fp.frame)).conjugate() * Ti.rotation;
      art.tau.normalize();
      art.s = Ti.scale / Tp.scale;
      T = compose_similarity(Tp, attachment_transform(skel, art));
    }
    base.articulations[idx] = art;
    chain[id] = T;
    if (node.kind == NodeKind::Stem) {
      const std::vector<Vec3> axis = stem_deformed_axis(model.stem, f.gamma);
      skels[id] = stem_frames(
          sample_open_curve(axis, config.fit_mesh.stem_samples_per_segment));
    }
  }
  };
  build_base();

  // Validate each node's initialization against its own instance points and
  // re-fit the outliers. The joint objective cannot be trusted to repair a
  // badly initialized node: the other parameters co-adapt around it and wall
  // it into a local minimum, while the per-instance residual exposes the
  // fault directly. Nodes are checked only when the cloud carries their
  // instance id with enough points.
  {
    std::unordered_map<int, std::vector<Vec3>> sub;
    if (cloud.instance.size() == cloud.points.size())
      for (std::size_t i = 0; i < cloud.points.size(); ++i)
        sub[cloud.instance[i]].push_back(cloud.points[i]);
    std::vector<AssembledNode> nodes;
    assemble_plant_detailed(base, model, config.fit_mesh, &nodes, nullptr);
    for (const AssembledNode& an : nodes) {
      const auto it = sub.find(an.id);
      if (it == sub.end()) continue;
      const std::vector<Vec3>& pts = it->second;
      const TopologyNode& node = topo.nodes[topo.index_of(an.id)];
      const int min_points = node.kind == NodeKind::Stem
                                 ? config.min_stem_points
                                 : config.min_leaf_points;
      if (static_cast<int>(pts.size()) < min_points) continue;
      std::vector<Vec3> samples = sample_surface_points(
          an.local_mesh, std::max(config.instance_eval_samples, 1),
          config.seed * kSeedMix + 271 + an.id);
      for (Vec3& s : samples) s = an.world.apply(s) + t0_init;
      const double diag = bbox_diagonal(pts);
      if (!(diag > 0.0)) continue;
      const double cd =
          chamfer(samples, pts, CdVariant::L2) / (diag * diag);
      if (cd < kInitRepairBand) continue;
      FitConfig icfg = config;
      icfg.seed = config.seed * kSeedMix + 7919ULL * (an.id + 1) + 13;
      InstanceFit fresh = fit_instance(pts, node.kind, model, icfg);
      fresh.instance = an.id;
      repaired.push_back(std::move(fresh));
    }
    if (!repaired.empty()) {
      for (const InstanceFit& f : repaired) by_id[f.instance] = &f;
      build_base();
    }
  }

  // Stage-2 parameter layout and initial point.
  Stage2Problem p;
  p.model = &model;
  p.opts = config.fit_mesh;
  p.variant = config.variant;
  p.base = base;
  const int live_angles = std::max(0, 2 * (model.stem.m_s - 2));
  int offset = 3;
  for (int id : order) {
    const TopologyNode& node = topo.nodes[topo.index_of(id)];
    NodeLayout nl;
    nl.id = id;
    nl.root = node.parent < 0;
    nl.quat = offset;
    offset += 4;
    if (!nl.root) {
      nl.d = offset;
      offset += 1;
    }
    nl.log_s = offset;
    offset += 1;
    if (node.kind == NodeKind::Stem) {
      nl.angle_count = std::min<int>(
          live_angles, static_cast<int>(base.gamma[topo.index_of(id)].size()));
      if (nl.angle_count > 0) {
        nl.angles = offset;
        offset += nl.angle_count;
      }
    }
    p.layout.push_back(nl);
  }
  p.dim = offset;

  VecX x0 = VecX::Zero(p.dim);
  x0.head<3>() = t0_init;
  for (const NodeLayout& nl : p.layout) {
    const int idx = topo.index_of(nl.id);
    const NodeArticulation& art = base.articulations[idx];
    x0[nl.quat + 0] = art.tau.w();
    x0[nl.quat + 1] = art.tau.x();
    x0[nl.quat + 2] = art.tau.y();
    x0[nl.quat + 3] = art.tau.z();
    if (!nl.root) x0[nl.d] = art.d;
    x0[nl.log_s] = std::log(std::max(art.s, 1e-6));
    for (int i = 0; i < nl.angle_count; ++i)
      x0[nl.angles + i] = base.gamma[idx][i];
  }

  const double diag = bbox_diagonal(cloud.points);
  VecX scales = VecX::Ones(p.dim);
  scales.head<3>().setConstant(std::max(0.1 * diag, 1e-6));
  for (const NodeLayout& nl : p.layout) {
    scales.segment<4>(nl.quat).setConstant(0.2);
    if (!nl.root) scales[nl.d] = 0.15;
    scales[nl.log_s] = 0.2;
    for (int i = 0; i < nl.angle_count; ++i) scales[nl.angles + i] = 0.15;
  }

  p.cloud = stride_subsample(cloud.points, config.stage2_cloud_cap);
  p.cloud_tree = std::make_unique<KdTree3>(p.cloud);

  {  // Per-node local sample geometry (frozen topology).
    std::vector<AssembledNode> nodes;
    assemble_plant_detailed(base, model, p.opts, &nodes, nullptr);
    std::unordered_map<int, const TriMesh*> local_by_id;
    for (const AssembledNode& an : nodes) local_by_id[an.id] = &an.local_mesh;
    std::unordered_map<int, int> layout_of;
    for (std::size_t k = 0; k < p.layout.size(); ++k)
      layout_of[p.layout[k].id] = static_cast<int>(k);
    p.geom.resize(p.layout.size());
    for (std::size_t k = 0; k < p.layout.size(); ++k) {
      const NodeLayout& nl = p.layout[k];
      const int idx = topo.index_of(nl.id);
      const TopologyNode& node = topo.nodes[idx];
      const TriMesh& local = *local_by_id.at(nl.id);
      Stage2Problem::NodeGeom& g = p.geom[k];
      g.parent = node.parent < 0 ? -1 : layout_of.at(node.parent);
      g.pattern = make_surface_pattern(local, config.stage2_samples_per_node,
                                       config.seed * kSeedMix + 1000 + nl.id);
      g.pts = eval_surface_pattern(local, g.pattern);
      g.tree = std::make_unique<KdTree3>(g.pts);
      node_bounds(g);
      if (node.kind == NodeKind::Stem) {
        g.stem = true;
        g.tube_radius = base.beta[idx].size() == 1 ? base.beta[idx][0]
                                                   : model.stem.default_radius;
        g.skel = skels.at(nl.id);
        g.gamma = base.gamma[idx];
      }
    }
  }

  const Objective objective = [&p](const VecX& x) {
    return stage2_objective(p, x);
  };
  const Projector project = [&p](VecX& x) { stage2_project(p, x); };
  DescentResult run =
      descend(objective, project, x0, scales, config.stage2_iterations, config);
  run.value =
      stage2_block_refine(p, config, run.x, scales, run.value, run.trajectory);

  PlantParams result = stage2_params(p, run.x);
  const Vec3 t0 = run.x.head<3>();

  FitReport report;
  report.stage2_cd = std::move(run.trajectory);
  report.root_offset = t0;
  for (int id : order) {
    const InstanceFit& f = *by_id.at(id);
    report.per_node.push_back(f);
    report.stage1_cd.push_back(f.normalized_cd);
  }

  {  // Final dense evaluation at full mesh quality against the full cloud.
    const TriMesh mesh = assemble_plant(result, model, AssembleOptions{});
    std::vector<Vec3> samples = sample_surface_points(
        mesh, std::max(config.final_eval_samples, 1), config.seed * kSeedMix + 2024);
    for (Vec3& s : samples) s += t0;
    const double raw = chamfer(samples, cloud.points, config.variant);
    report.final_cd =
        diag > 0.0 ? normalized_chamfer(raw, diag, config.variant) : raw;
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return {std::move(result), std::move(report)};
}

std::pair<PlantParams, FitReport> fit_pipeline(const LabeledCloud& cloud,
                                               std::optional<Topology> topo,
                                               const SpeciesModel& model,
                                               const FitConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  const ValidationResult vr = validate_cloud(cloud);
  if (!vr.ok)
    throw std::invalid_argument("fit_pipeline: invalid cloud: " +
                                vr.violations.front());

  int max_id = -1;
  for (int id : cloud.instance) max_id = std::max(max_id, id);
  std::vector<std::vector<Vec3>> groups(max_id + 1);
  std::vector<NodeKind> kinds(max_id + 1, NodeKind::Stem);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    groups[cloud.instance[i]].push_back(cloud.points[i]);
    kinds[cloud.instance[i]] = cloud.semantic[i] == PointSemantic::Leaf
                                   ? NodeKind::Leaf
                                   : NodeKind::Stem;
  }
  const auto enough = [&](int id) {
    const int minimum = kinds[id] == NodeKind::Stem ? config.min_stem_points
                                                    : config.min_leaf_points;
    return static_cast<int>(groups[id].size()) >= minimum;
  };

  LabeledCloud work;
  Topology topology;
  if (topo) {
    topology = std::move(*topo);
    std::vector<bool> covered(max_id + 1, false);
    for (const TopologyNode& n : topology.nodes) {
      if (n.id < 0 || n.id > max_id || groups[n.id].empty())
        throw std::invalid_argument("fit_pipeline: topology node " +
                                    std::to_string(n.id) +
                                    " has no cloud instance");
      if (n.kind != kinds[n.id])
        throw std::invalid_argument(
            "fit_pipeline: node " + std::to_string(n.id) +
            " kind disagrees with the cloud semantics");
      if (!enough(n.id))
        throw std::invalid_argument("fit_pipeline: instance " +
                                    std::to_string(n.id) +
                                    " has too few points to fit");
      covered[n.id] = true;
    }
    for (int id = 0; id <= max_id; ++id)
      if (!groups[id].empty() && !covered[id])
        throw std::invalid_argument("fit_pipeline: cloud instance " +
                                    std::to_string(id) +
                                    " is missing from the topology");
    work = cloud;
  } else {
    std::vector<int> remap(max_id + 1, -1);
    int next = 0;
    for (int id = 0; id <= max_id; ++id)
      if (!groups[id].empty() && enough(id)) remap[id] = next++;
    if (next == 0)
      throw std::invalid_argument(
          "fit_pipeline: no instance has enough points to fit");
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const int nid = remap[cloud.instance[i]];
      if (nid < 0) continue;
      work.points.push_back(cloud.points[i]);
      work.semantic.push_back(cloud.semantic[i]);
      work.instance.push_back(nid);
    }
    topology = infer_topology(work);
  }

  int wmax = -1;
  for (int id : work.instance) wmax = std::max(wmax, id);
  std::vector<std::vector<Vec3>> wgroups(wmax + 1);
  for (std::size_t i = 0; i < work.size(); ++i)
    wgroups[work.instance[i]].push_back(work.points[i]);

  std::vector<InstanceFit> fits;
  fits.reserve(topology.nodes.size());
  for (const TopologyNode& n : topology.nodes) {
    FitConfig icfg = config;
    icfg.seed = config.seed * kSeedMix + 7919ULL * static_cast<std::uint64_t>(n.id + 1);
    InstanceFit f = fit_instance(wgroups[n.id], n.kind, model, icfg);
    f.instance = n.id;
    fits.push_back(std::move(f));
  }

  auto fitted = fit_plant(work, topology, fits, model, config);
  fitted.second.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return fitted;
}

}  // namespace phyta
