#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <utility>
#include <vector>

#include "poserank/diffcore.hpp"
#include "poserank/error.hpp"
#include "poserank/geometry.hpp"

namespace poserank {

// Hierarchical ranking contrastive losses over a batch of embeddings.
//
// Pose distances rank every other batch member against each (anchor,
// positive) pair; members at least as far from the anchor as the positive —
// jointly in both pose components, or in one component — form the negative
// sets whose features enter the softmax denominators.  Similarity is the
// negative L2 distance in feature space, scaled by a temperature.
//
// Tie rule: membership uses >= against the positive's distance, so ties with
// the positive count as negatives and the positive itself always appears in
// its own denominator.  That convention keeps every per-pair term
// nonnegative (the denominator dominates the numerator) and makes the joint
// set exactly the intersection of the per-component ones.

struct CLConfig {
  double tau = 2.0;     // softmax temperature
  double lambda = 0.8;  // weight of the per-component term

  // ablation toggles
  bool disable_joint = false;    // drop the joint term
  bool joint_only = false;       // drop the per-component term (lambda = 0)
  bool single_task = false;      // joint term uses the per-component ranking
  bool ignore_category = false;  // rank across the whole batch as one group
};

inline void validate(const CLConfig& cfg) {
  if (!(cfg.tau > 0.0))
    throw Error(ErrKind::config, "contrast temperature must be positive");
  if (!(cfg.lambda >= 0.0))
    throw Error(ErrKind::config, "contrast term weight must be nonnegative");
}

// Pairwise pose distances for one batch group (category, or the whole batch
// when categories are ignored).  Indices in `members` map local rows of the
// matrices to batch positions.
struct CategoryDistances {
  int category = -1;  // -1 for the merged whole-batch group
  bool symmetric = false;
  std::vector<int> members;        // local index -> batch index
  Eigen::MatrixXd d_rot, d_trans;  // n x n, symmetric, zero diagonal
};

struct DistanceMatrices {
  std::vector<CategoryDistances> groups;  // only groups with >= 2 samples
  std::vector<int> excluded_categories;   // categories with a single sample
};

inline DistanceMatrices distance_matrices(const std::vector<Pose>& poses,
                                          const std::vector<int>& categories,
                                          const std::vector<CategoryInfo>& table,
                                          bool ignore_category = false) {
  if (poses.empty() || poses.size() != categories.size())
    throw Error(ErrKind::shape,
                "distance_matrices: need one category per pose, batch nonempty");
  auto sym_of = [&](int cat) {
    for (const auto& c : table)
      if (c.id == cat) return c.symmetric;
    throw Error(ErrKind::config,
                "distance_matrices: unknown category id " + std::to_string(cat));
  };
  const int n = static_cast<int>(poses.size());

  DistanceMatrices dm;
  std::vector<std::pair<int, std::vector<int>>> groups;  // (category, members)
  if (ignore_category) {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    groups.emplace_back(-1, std::move(all));
  } else {
    for (int i = 0; i < n; ++i) {
      const int cat = categories[static_cast<std::size_t>(i)];
      auto it = std::find_if(groups.begin(), groups.end(),
                             [&](const auto& g) { return g.first == cat; });
      if (it == groups.end())
        groups.emplace_back(cat, std::vector<int>{i});
      else
        it->second.push_back(i);
    }
  }

  for (auto& [cat, members] : groups) {
    if (members.size() < 2) {
      dm.excluded_categories.push_back(cat);
      continue;
    }
    CategoryDistances g;
    g.category = cat;
    g.symmetric = cat >= 0 && sym_of(cat);
    g.members = members;
    const int m = static_cast<int>(members.size());
    g.d_rot.setZero(m, m);
    g.d_trans.setZero(m, m);
    for (int a = 0; a < m; ++a) {
      for (int b = a + 1; b < m; ++b) {
        const Pose& pa = poses[static_cast<std::size_t>(members[a])];
        const Pose& pb = poses[static_cast<std::size_t>(members[b])];
        // in the merged group, a pair ranks by the symmetry-reduced metric
        // only when both samples come from symmetric categories
        const bool sym =
            cat >= 0 ? g.symmetric
                     : sym_of(categories[static_cast<std::size_t>(members[a])]) &&
                           sym_of(categories[static_cast<std::size_t>(members[b])]);
        const double dr = rotation_distance(pa, pb, sym);
        const double dt = translation_distance(pa, pb);
        g.d_rot(a, b) = g.d_rot(b, a) = dr;
        g.d_trans(a, b) = g.d_trans(b, a) = dt;
      }
    }
    dm.groups.push_back(std::move(g));
  }
  return dm;
}

// Negative sets for one (anchor, positive) pair, as batch indices in
// ascending order.  joint = {k != i : dR(i,k) >= dR(i,j) and dt(i,k) >=
// dt(i,j)}; rot and trans relax to one component each, so joint is exactly
// their intersection and the positive belongs to all three.
struct NegativeSets {
  std::vector<int> joint, rot, trans;
};

inline NegativeSets build_negative_sets(const DistanceMatrices& dm, int anchor,
                                        int positive) {
  if (anchor == positive)
    throw Error(ErrKind::shape, "build_negative_sets: anchor equals positive");
  for (const auto& g : dm.groups) {
    const auto ai = std::find(g.members.begin(), g.members.end(), anchor);
    const auto pi = std::find(g.members.begin(), g.members.end(), positive);
    if (ai == g.members.end() || pi == g.members.end()) continue;
    const int i = static_cast<int>(ai - g.members.begin());
    const int j = static_cast<int>(pi - g.members.begin());
    NegativeSets sets;
    for (int k = 0; k < static_cast<int>(g.members.size()); ++k) {
      if (k == i) continue;
      const bool in_rot = g.d_rot(i, k) >= g.d_rot(i, j);
      const bool in_trans = g.d_trans(i, k) >= g.d_trans(i, j);
      const int batch_k = g.members[static_cast<std::size_t>(k)];
      if (in_rot) sets.rot.push_back(batch_k);
      if (in_trans) sets.trans.push_back(batch_k);
      if (in_rot && in_trans) sets.joint.push_back(batch_k);
    }
    return sets;
  }
  throw Error(ErrKind::shape,
              "build_negative_sets: pair not in one ranked group");
}

// Node handles of the contrastive losses inside a training graph.  A batch
// with no rankable group yields constant-zero nodes and used_categories 0
// (callers are expected to log that).
struct ClLossNodes {
  int joint_r = -1, joint_t = -1;  // joint-ranked term per branch
  int task_r = -1, task_t = -1;    // per-component term per branch
  int cl_r = -1, cl_t = -1;        // combined per Eq-style weighting
  int used_categories = 0;
};

namespace detail {

// term(i,j) = d_ij/tau + log sum_{k in set} exp(-d_ik/tau), averaged over
// positives, then anchors, then groups.  `which` selects the set family.
enum class SetKind { joint, rot, trans };

template <class S>
int ranked_softmax_loss(Tape<S>& tape, int dist, const DistanceMatrices& dm,
                        double tau, SetKind which) {
  const S inv_tau = static_cast<S>(1.0 / tau);
  std::vector<int> per_group;
  for (const auto& g : dm.groups) {
    const int m = static_cast<int>(g.members.size());
    std::vector<int> per_anchor;
    for (int i = 0; i < m; ++i) {
      const int batch_i = g.members[static_cast<std::size_t>(i)];
      std::vector<int> per_positive;
      for (int j = 0; j < m; ++j) {
        if (j == i) continue;
        const int batch_j = g.members[static_cast<std::size_t>(j)];
        const NegativeSets sets = build_negative_sets(dm, batch_i, batch_j);
        const std::vector<int>& idx = which == SetKind::joint ? sets.joint
                                      : which == SetKind::rot ? sets.rot
                                                              : sets.trans;
        const int den = tape.log_sum_exp_row(
            tape.scale(tape.gather_row(dist, batch_i, idx), -inv_tau));
        const int num =
            tape.scale(tape.gather_entry(dist, batch_i, batch_j), inv_tau);
        per_positive.push_back(tape.add(num, den));
      }
      per_anchor.push_back(tape.mean_list(std::move(per_positive)));
    }
    per_group.push_back(tape.mean_list(std::move(per_anchor)));
  }
  return tape.mean_list(std::move(per_group));
}

}  // namespace detail

// Builds all loss nodes for a batch.  `f_r` and `f_t` are n x D feature
// nodes (one row per batch sample); `dm` must come from the same batch,
// constructed with cfg.ignore_category.
template <class S>
ClLossNodes build_cl_loss(Tape<S>& tape, int f_r, int f_t,
                          const DistanceMatrices& dm, const CLConfig& cfg) {
  validate(cfg);
  using M = typename Tape<S>::Mat;
  ClLossNodes out;
  out.used_categories = static_cast<int>(dm.groups.size());
  if (dm.groups.empty()) {
    const int zero = tape.input(M::Zero(1, 1));
    out.joint_r = out.joint_t = out.task_r = out.task_t = zero;
    out.cl_r = out.cl_t = zero;
    return out;
  }

  const int dist_r = tape.elem_sqrt(tape.pairwise_sqdist(f_r));
  const int dist_t = tape.elem_sqrt(tape.pairwise_sqdist(f_t));

  using detail::SetKind;
  const SetKind joint_r_kind = cfg.single_task ? SetKind::rot : SetKind::joint;
  const SetKind joint_t_kind = cfg.single_task ? SetKind::trans : SetKind::joint;
  out.joint_r =
      detail::ranked_softmax_loss(tape, dist_r, dm, cfg.tau, joint_r_kind);
  out.joint_t =
      detail::ranked_softmax_loss(tape, dist_t, dm, cfg.tau, joint_t_kind);
  out.task_r =
      detail::ranked_softmax_loss(tape, dist_r, dm, cfg.tau, SetKind::rot);
  out.task_t =
      detail::ranked_softmax_loss(tape, dist_t, dm, cfg.tau, SetKind::trans);

  const double lambda = cfg.joint_only ? 0.0 : cfg.lambda;
  if (cfg.disable_joint) {
    out.cl_r = tape.weighted_sum({out.task_r}, {static_cast<S>(lambda)});
    out.cl_t = tape.weighted_sum({out.task_t}, {static_cast<S>(lambda)});
  } else {
    out.cl_r = tape.weighted_sum({out.joint_r, out.task_r},
                                 {S(1), static_cast<S>(lambda)});
    out.cl_t = tape.weighted_sum({out.joint_t, out.task_t},
                                 {S(1), static_cast<S>(lambda)});
  }
  return out;
}

// Eagerly evaluated losses at 64-bit, for reporting and tests.
struct LossBreakdown {
  double joint_r = 0.0, joint_t = 0.0;
  double task_r = 0.0, task_t = 0.0;
  double cl_r = 0.0, cl_t = 0.0;
  int used_categories = 0;
};

inline LossBreakdown cl_loss(const Eigen::MatrixXd& f_r,
                             const Eigen::MatrixXd& f_t,
                             const std::vector<Pose>& poses,
                             const std::vector<int>& categories,
                             const std::vector<CategoryInfo>& table,
                             const CLConfig& cfg) {
  if (f_r.rows() != static_cast<Eigen::Index>(poses.size()) ||
      f_t.rows() != static_cast<Eigen::Index>(poses.size()))
    throw Error(ErrKind::shape, "cl_loss: one feature row per pose required");
  const DistanceMatrices dm =
      distance_matrices(poses, categories, table, cfg.ignore_category);
  Tape<double> tape;
  const int nf_r = tape.input(f_r);
  const int nf_t = tape.input(f_t);
  const ClLossNodes nodes = build_cl_loss(tape, nf_r, nf_t, dm, cfg);
  tape.evaluate();
  LossBreakdown out;
  out.joint_r = tape.value(nodes.joint_r)(0, 0);
  out.joint_t = tape.value(nodes.joint_t)(0, 0);
  out.task_r = tape.value(nodes.task_r)(0, 0);
  out.task_t = tape.value(nodes.task_t)(0, 0);
  out.cl_r = tape.value(nodes.cl_r)(0, 0);
  out.cl_t = tape.value(nodes.cl_t)(0, 0);
  out.used_categories = nodes.used_categories;
  return out;
}

// Operation-level views matching the loss decomposition: the joint-ranked
// pair of losses and the per-component pair, in (R, t) order.
inline std::pair<double, double> joint_loss(const Eigen::MatrixXd& f_r,
                                            const Eigen::MatrixXd& f_t,
                                            const std::vector<Pose>& poses,
                                            const std::vector<int>& categories,
                                            const std::vector<CategoryInfo>& table,
                                            const CLConfig& cfg) {
  const LossBreakdown b = cl_loss(f_r, f_t, poses, categories, table, cfg);
  return {b.joint_r, b.joint_t};
}

inline std::pair<double, double> task_loss(const Eigen::MatrixXd& f_r,
                                           const Eigen::MatrixXd& f_t,
                                           const std::vector<Pose>& poses,
                                           const std::vector<int>& categories,
                                           const std::vector<CategoryInfo>& table,
                                           const CLConfig& cfg) {
  const LossBreakdown b = cl_loss(f_r, f_t, poses, categories, table, cfg);
  return {b.task_r, b.task_t};
}

}  // namespace poserank
