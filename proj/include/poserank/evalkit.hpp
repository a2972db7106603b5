#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "poserank/encoder.hpp"
#include "poserank/error.hpp"
#include "poserank/geometry.hpp"
#include "poserank/rng.hpp"
#include "poserank/synthdata.hpp"

namespace poserank {

// Quantitative evaluation: n-degree / m-centimeter pose precision, Monte
// Carlo oriented-box IoU precision, embedding-vs-pose correlation, and
// ranking-consistency statistics, with CSV export for external plotting.
// Everything here is eager double-precision math, deterministic per seed.

// ---------------------------------------------------------------------------
// Precision metrics
// ---------------------------------------------------------------------------

// Per-category fraction plus the unweighted mean over categories.
struct PrecisionResult {
  struct PerCategory {
    int category = 0;
    int count = 0;      // pairs in this category
    double value = 0.0; // fraction in [0, 1]
  };
  std::vector<PerCategory> per_category;  // ascending category id
  double mean = 0.0;                      // unweighted mean over categories
};

namespace detail {

// Shared grouping: pass/fail verdicts per pair, aggregated by category.
inline PrecisionResult aggregate_precision(const std::vector<bool>& hit,
                                           const std::vector<PoseSample>& gts) {
  std::vector<int> ids;
  for (const PoseSample& g : gts)
    if (std::find(ids.begin(), ids.end(), g.category) == ids.end())
      ids.push_back(g.category);
  std::sort(ids.begin(), ids.end());

  PrecisionResult out;
  double sum = 0.0;
  for (int id : ids) {
    PrecisionResult::PerCategory row;
    row.category = id;
    int passed = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      if (gts[i].category != id) continue;
      ++row.count;
      if (hit[i]) ++passed;
    }
    row.value = static_cast<double>(passed) / static_cast<double>(row.count);
    sum += row.value;
    out.per_category.push_back(row);
  }
  out.mean = sum / static_cast<double>(ids.size());
  return out;
}

inline void check_aligned(std::size_t n_preds, std::size_t n_gts,
                          const char* what) {
  if (n_preds != n_gts)
    throw Error(ErrKind::shape,
                std::string(what) + ": prediction/ground-truth length mismatch");
  if (n_gts == 0)
    throw Error(ErrKind::shape, std::string(what) + ": empty input lists");
}

}  // namespace detail

// Fraction of aligned pairs with rotation error strictly under n_deg degrees
// AND translation error strictly under m_cm centimeters.  Rotation error for
// symmetric categories measures only the axis tilt.
inline PrecisionResult pose_precision(const std::vector<Pose>& preds,
                                      const std::vector<PoseSample>& gts,
                                      double n_deg, double m_cm) {
  detail::check_aligned(preds.size(), gts.size(), "pose_precision");
  std::vector<bool> hit(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const double r_err =
        rotation_error_deg(preds[i], gts[i].pose, gts[i].symmetric);
    const double t_err = translation_error_cm(preds[i], gts[i].pose);
    hit[i] = r_err < n_deg && t_err < m_cm;
  }
  return detail::aggregate_precision(hit, gts);
}

// ---------------------------------------------------------------------------
// Oriented-box IoU
// ---------------------------------------------------------------------------

inline constexpr int kDefaultIouSamples = 200000;

// Monte Carlo IoU of two oriented boxes: points drawn uniformly in the
// axis-aligned bounding box of the union, classified against each box in its
// own frame; IoU = |A n B| / |A u B| from the hit counts.  Symmetric in its
// arguments bitwise (same draws, commutative bound computation) and exactly
// 0.0 whenever no sample lands in both boxes.  Standard error is about
// sqrt(p(1-p)/n_union); at the default sample count it stays inside 0.005
// for box shapes like the generator's (union filling >~10% of its bound).
inline double box_iou(const Pose& a, const Pose& b,
                      int mc_samples = kDefaultIouSamples,
                      std::uint64_t seed = 0) {
  validate_pose(a);
  validate_pose(b);
  if (mc_samples < 1)
    throw Error(ErrKind::config, "box_iou: mc_samples must be positive");

  const std::array<Eigen::Vector3d, 8> ca = box_corners(a);
  const std::array<Eigen::Vector3d, 8> cb = box_corners(b);
  Eigen::Vector3d lo = ca[0], hi = ca[0];
  for (const auto& c : ca) {
    lo = lo.cwiseMin(c);
    hi = hi.cwiseMax(c);
  }
  for (const auto& c : cb) {
    lo = lo.cwiseMin(c);
    hi = hi.cwiseMax(c);
  }

  // hoisted frames: one rotation per box, reused for every sample
  const Eigen::Matrix3d ra = rotation_from_normals(a.r_x, a.r_y);
  const Eigen::Matrix3d rb = rotation_from_normals(b.r_x, b.r_y);
  const Eigen::Vector3d half_a = 0.5 * a.s, half_b = 0.5 * b.s;

  Rng rng(seed, {kStreamIoU});
  std::int64_t n_inter = 0, n_union = 0;
  for (int i = 0; i < mc_samples; ++i) {
    Eigen::Vector3d q;
    for (int k = 0; k < 3; ++k) q[k] = rng.uniform(lo[k], hi[k]);
    const bool in_a =
        ((ra.transpose() * (q - a.t)).array().abs() <= half_a.array()).all();
    const bool in_b =
        ((rb.transpose() * (q - b.t)).array().abs() <= half_b.array()).all();
    if (in_a && in_b) ++n_inter;
    if (in_a || in_b) ++n_union;
  }
  // n_union == 0 means both boxes occupy a vanishing fraction of the bound;
  // the overlap estimate is then 0 as well
  if (n_union == 0) return 0.0;
  return static_cast<double>(n_inter) / static_cast<double>(n_union);
}

// Per-pair IoU values for aligned lists, each pair on its own derived seed
// stream so any single value can be recomputed in isolation.
inline std::vector<double> pairwise_iou(const std::vector<Pose>& preds,
                                        const std::vector<PoseSample>& gts,
                                        int mc_samples = kDefaultIouSamples,
                                        std::uint64_t seed = 0) {
  detail::check_aligned(preds.size(), gts.size(), "pairwise_iou");
  std::vector<double> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    out[i] = box_iou(preds[i], gts[i].pose, mc_samples,
                     seed_stream(seed, {static_cast<std::uint64_t>(i)}));
  return out;
}

// Precision over precomputed per-pair IoU values: fraction with IoU >=
// threshold, per category and mean over categories.
inline PrecisionResult iou_precision_from(const std::vector<double>& ious,
                                          const std::vector<PoseSample>& gts,
                                          double threshold) {
  detail::check_aligned(ious.size(), gts.size(), "iou_precision");
  std::vector<bool> hit(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) hit[i] = ious[i] >= threshold;
  return detail::aggregate_precision(hit, gts);
}

inline PrecisionResult iou_precision(const std::vector<Pose>& preds,
                                     const std::vector<PoseSample>& gts,
                                     double threshold,
                                     int mc_samples = kDefaultIouSamples,
                                     std::uint64_t seed = 0) {
  return iou_precision_from(pairwise_iou(preds, gts, mc_samples, seed), gts,
                            threshold);
}

// ---------------------------------------------------------------------------
// Correlation statistics
// ---------------------------------------------------------------------------

namespace detail {

// Pearson correlation; {value, defined}.  Undefined when either side has
// zero variance.
inline std::pair<double, bool> pearson(const std::vector<double>& x,
                                       const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) return {0.0, false};
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, false};
  return {sxy / std::sqrt(sxx * syy), true};
}

// Ranks 1..n with midranks for ties.
inline std::vector<double> midranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

inline std::pair<double, bool> spearman(const std::vector<double>& x,
                                        const std::vector<double>& y) {
  return pearson(midranks(x), midranks(y));
}

// Indices of samples whose category holds at least min_count members.
inline std::vector<int> eligible_samples(const std::vector<int>& cats,
                                         int min_count) {
  std::vector<int> out;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    int same = 0;
    for (int c : cats)
      if (c == cats[i]) ++same;
    if (same >= min_count) out.push_back(static_cast<int>(i));
  }
  return out;
}

// Uniform draw of a same-category partner of `anchor`, excluding the listed
// indices.
inline int draw_partner(Rng& rng, const std::vector<int>& cats, int anchor,
                        std::initializer_list<int> exclude) {
  std::vector<int> pool;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const int ii = static_cast<int>(i);
    if (cats[i] != cats[(std::size_t)anchor]) continue;
    bool excluded = ii == anchor;
    for (int e : exclude) excluded = excluded || ii == e;
    if (!excluded) pool.push_back(ii);
  }
  return pool[(std::size_t)rng.uniform_int(static_cast<std::int64_t>(pool.size()))];
}

inline bool category_symmetric(const std::vector<CategoryInfo>& table,
                               int id) {
  for (const CategoryInfo& e : table)
    if (e.id == id) return e.symmetric;
  throw Error(ErrKind::config,
              "unknown category id " + std::to_string(id) + " in table");
}

}  // namespace detail

// One branch's correlation between embedding L2 distance and pose distance
// over the sampled pairs.  `defined` is false when either side has zero
// variance (the undefined marker; the values are then meaningless).
struct BranchCorrelation {
  double pearson = std::numeric_limits<double>::quiet_NaN();
  double spearman = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;
};

struct ScatterPoint {
  int category = 0;
  double pose_distance = 0.0;
  double embedding_distance = 0.0;
};

struct CorrelationStats {
  BranchCorrelation r, t;
  std::vector<ScatterPoint> scatter_r, scatter_t;  // one entry per pair
  int pairs = 0;
};

// Samples n_pairs within-category pairs (uniform anchor over samples whose
// category has >= 2 members, uniform same-category partner) and correlates
// embedding distances with pose distances: rotation distance for the R
// branch, translation distance for the t branch.  Both branches see the
// same pairs.
inline CorrelationStats correlation_stats(const Eigen::MatrixXd& emb_r,
                                          const Eigen::MatrixXd& emb_t,
                                          const std::vector<Pose>& poses,
                                          const std::vector<int>& cats,
                                          const std::vector<CategoryInfo>& table,
                                          int n_pairs = 20000,
                                          std::uint64_t seed = 0) {
  const int n = static_cast<int>(poses.size());
  if (emb_r.rows() != n || emb_t.rows() != n ||
      static_cast<int>(cats.size()) != n)
    throw Error(ErrKind::shape, "correlation_stats: misaligned inputs");
  if (n_pairs < 2)
    throw Error(ErrKind::config, "correlation_stats: n_pairs must be >= 2");
  const std::vector<int> anchors = detail::eligible_samples(cats, 2);
  if (anchors.empty())
    throw Error(ErrKind::shape,
                "correlation_stats: no category has two samples");

  Rng rng(seed, {kStreamEval});
  CorrelationStats out;
  std::vector<double> pd_r(static_cast<std::size_t>(n_pairs)),
      ed_r(static_cast<std::size_t>(n_pairs)),
      pd_t(static_cast<std::size_t>(n_pairs)),
      ed_t(static_cast<std::size_t>(n_pairs));
  for (int p = 0; p < n_pairs; ++p) {
    const int i = anchors[(std::size_t)rng.uniform_int(
        static_cast<std::int64_t>(anchors.size()))];
    const int j = detail::draw_partner(rng, cats, i, {});
    const bool sym = detail::category_symmetric(table, cats[(std::size_t)i]);
    const std::size_t sp = static_cast<std::size_t>(p);
    pd_r[sp] = rotation_distance(poses[(std::size_t)i], poses[(std::size_t)j],
                                 sym);
    pd_t[sp] =
        translation_distance(poses[(std::size_t)i], poses[(std::size_t)j]);
    ed_r[sp] = (emb_r.row(i) - emb_r.row(j)).norm();
    ed_t[sp] = (emb_t.row(i) - emb_t.row(j)).norm();
    out.scatter_r.push_back({cats[(std::size_t)i], pd_r[sp], ed_r[sp]});
    out.scatter_t.push_back({cats[(std::size_t)i], pd_t[sp], ed_t[sp]});
  }
  out.pairs = n_pairs;

  const auto [pr, pr_def] = detail::pearson(pd_r, ed_r);
  const auto [sr, sr_def] = detail::spearman(pd_r, ed_r);
  out.r.defined = pr_def && sr_def;
  if (out.r.defined) {
    out.r.pearson = pr;
    out.r.spearman = sr;
  }
  const auto [pt, pt_def] = detail::pearson(pd_t, ed_t);
  const auto [st, st_def] = detail::spearman(pd_t, ed_t);
  out.t.defined = pt_def && st_def;
  if (out.t.defined) {
    out.t.pearson = pt;
    out.t.spearman = st;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ranking consistency
// ---------------------------------------------------------------------------

enum class PoseDistanceKind { rotation, translation };

// Samples within-category triples (anchor i, j, k) whose pose distances to
// the anchor differ, and returns the fraction where the embedding distances
// order (j, k) the same way.  Exact pose-distance ties are redrawn; if no
// valid triple can be formed the fraction is vacuously 1.
inline double ranking_consistency(const Eigen::MatrixXd& emb,
                                  const std::vector<Pose>& poses,
                                  const std::vector<int>& cats,
                                  const std::vector<CategoryInfo>& table,
                                  PoseDistanceKind kind, int n_triples = 20000,
                                  std::uint64_t seed = 0) {
  const int n = static_cast<int>(poses.size());
  if (emb.rows() != n || static_cast<int>(cats.size()) != n)
    throw Error(ErrKind::shape, "ranking_consistency: misaligned inputs");
  if (n_triples < 1)
    throw Error(ErrKind::config, "ranking_consistency: n_triples must be >= 1");
  const std::vector<int> anchors = detail::eligible_samples(cats, 3);
  if (anchors.empty()) return 1.0;

  Rng rng(seed, {kStreamEval, 0x7269});  // distinct stream from pair sampling
  auto pose_d = [&](int a, int b) {
    if (kind == PoseDistanceKind::translation)
      return translation_distance(poses[(std::size_t)a],
                                  poses[(std::size_t)b]);
    const bool sym = detail::category_symmetric(table, cats[(std::size_t)a]);
    return rotation_distance(poses[(std::size_t)a], poses[(std::size_t)b], sym);
  };

  std::int64_t collected = 0, matched = 0;
  std::int64_t attempts = 0;
  const std::int64_t max_attempts = 50ll * n_triples + 100;
  while (collected < n_triples && attempts < max_attempts) {
    ++attempts;
    const int i = anchors[(std::size_t)rng.uniform_int(
        static_cast<std::int64_t>(anchors.size()))];
    const int j = detail::draw_partner(rng, cats, i, {});
    const int k = detail::draw_partner(rng, cats, i, {j});
    const double dj = pose_d(i, j), dk = pose_d(i, k);
    if (dj == dk) continue;  // tie: this triple carries no order
    const double ej = (emb.row(i) - emb.row(j)).norm();
    const double ek = (emb.row(i) - emb.row(k)).norm();
    ++collected;
    if ((dj < dk) == (ej < ek)) ++matched;
  }
  if (collected == 0) return 1.0;
  return static_cast<double>(matched) / static_cast<double>(collected);
}

// ---------------------------------------------------------------------------
// Model evaluation and report assembly
// ---------------------------------------------------------------------------

struct EvalSettings {
  int mc_samples = kDefaultIouSamples;
  int n_pairs = 20000;
  int n_triples = 20000;
  std::uint64_t seed = 0;
};

// Forward pass over a dataset: pooled embeddings per branch and the decoded
// pose prediction per sample.
struct ModelOutputs {
  Eigen::MatrixXd emb_r, emb_t;  // n x D
  std::vector<Pose> preds;
  HeadDiagnostics diag;
};

inline ModelOutputs run_model(const Params& params,
                              const std::vector<PoseSample>& samples) {
  if (samples.empty())
    throw Error(ErrKind::shape, "run_model: empty dataset");
  ModelOutputs out;
  const int n = static_cast<int>(samples.size());
  out.emb_r.resize(n, params.cfg.d);
  out.emb_t.resize(n, params.cfg.d);
  for (int i = 0; i < n; ++i) {
    const Eigen::MatrixXf pts =
        samples[(std::size_t)i].points.cast<float>();
    const EmbeddingsT<float> emb = encode(params, pts);
    out.emb_r.row(i) = emb.f_r.cast<double>().transpose();
    out.emb_t.row(i) = emb.f_t.cast<double>().transpose();
    const Eigen::Vector3d centroid =
        pts.cast<double>().colwise().mean().transpose();
    out.preds.push_back(heads_forward(params, emb, centroid, &out.diag));
  }
  return out;
}

// Everything the CSV export needs: the precision table and the global
// correlation/consistency statistics.
struct EvalReport {
  struct Row {
    int category = 0;
    std::string name;
    double count = 0.0;  // pair count (mean row: mean of category counts)
    double p5d2 = 0.0, p5d5 = 0.0, p10d2 = 0.0, p10d5 = 0.0;
    double iou50 = 0.0, iou75 = 0.0;
  };
  std::vector<Row> rows;  // per category, ascending id
  Row mean;               // column-wise mean over the category rows
  BranchCorrelation corr_r, corr_t;
  double ranking_r = 0.0, ranking_t = 0.0;
  int total_samples = 0;
  EvalSettings settings;  // config echo
};

namespace detail {

inline std::string category_name(const std::vector<CategoryInfo>& table,
                                 int id) {
  for (const CategoryInfo& e : table)
    if (e.id == id) return e.name;
  return "cat" + std::to_string(id);
}

inline void fill_column(std::vector<EvalReport::Row>& rows,
                        EvalReport::Row& mean, const PrecisionResult& pr,
                        double EvalReport::Row::*field,
                        double PrecisionResult::PerCategory::*src) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    rows[i].*field = pr.per_category[i].*src;
  double sum = 0.0;
  for (const auto& row : rows) sum += row.*field;
  mean.*field = sum / static_cast<double>(rows.size());
}

}  // namespace detail

// Assembles the full evaluation report for aligned predictions/embeddings.
inline EvalReport build_eval_report(const ModelOutputs& outputs,
                                    const std::vector<PoseSample>& gts,
                                    const std::vector<CategoryInfo>& table,
                                    const EvalSettings& settings,
                                    CorrelationStats* scatter_out = nullptr) {
  detail::check_aligned(outputs.preds.size(), gts.size(), "build_eval_report");
  std::vector<Pose> poses;
  std::vector<int> cats;
  for (const PoseSample& g : gts) {
    poses.push_back(g.pose);
    cats.push_back(g.category);
  }

  EvalReport rep;
  rep.settings = settings;
  rep.total_samples = static_cast<int>(gts.size());

  const PrecisionResult p52 = pose_precision(outputs.preds, gts, 5.0, 2.0);
  const PrecisionResult p55 = pose_precision(outputs.preds, gts, 5.0, 5.0);
  const PrecisionResult p102 = pose_precision(outputs.preds, gts, 10.0, 2.0);
  const PrecisionResult p105 = pose_precision(outputs.preds, gts, 10.0, 5.0);
  const std::vector<double> ious =
      pairwise_iou(outputs.preds, gts, settings.mc_samples, settings.seed);
  const PrecisionResult i50 = iou_precision_from(ious, gts, 0.50);
  const PrecisionResult i75 = iou_precision_from(ious, gts, 0.75);

  rep.rows.resize(p52.per_category.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    rep.rows[i].category = p52.per_category[i].category;
    rep.rows[i].name = detail::category_name(table, rep.rows[i].category);
    rep.rows[i].count = p52.per_category[i].count;
  }
  rep.mean.category = -1;
  rep.mean.name = "mean";
  {
    double csum = 0.0;
    for (const auto& row : rep.rows) csum += row.count;
    rep.mean.count = csum / static_cast<double>(rep.rows.size());
  }
  using R = EvalReport::Row;
  using P = PrecisionResult::PerCategory;
  detail::fill_column(rep.rows, rep.mean, p52, &R::p5d2, &P::value);
  detail::fill_column(rep.rows, rep.mean, p55, &R::p5d5, &P::value);
  detail::fill_column(rep.rows, rep.mean, p102, &R::p10d2, &P::value);
  detail::fill_column(rep.rows, rep.mean, p105, &R::p10d5, &P::value);
  detail::fill_column(rep.rows, rep.mean, i50, &R::iou50, &P::value);
  detail::fill_column(rep.rows, rep.mean, i75, &R::iou75, &P::value);

  CorrelationStats corr =
      correlation_stats(outputs.emb_r, outputs.emb_t, poses, cats, table,
                        settings.n_pairs, settings.seed);
  rep.corr_r = corr.r;
  rep.corr_t = corr.t;
  rep.ranking_r =
      ranking_consistency(outputs.emb_r, poses, cats, table,
                          PoseDistanceKind::rotation, settings.n_triples,
                          settings.seed);
  rep.ranking_t =
      ranking_consistency(outputs.emb_t, poses, cats, table,
                          PoseDistanceKind::translation, settings.n_triples,
                          settings.seed);
  if (scatter_out) *scatter_out = std::move(corr);
  return rep;
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

namespace detail {

// %.12g: 12 significant digits everywhere in the exported tables
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::string corr_cell(double v, bool defined) {
  return defined ? fmt(v) : std::string("undefined");
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrKind::io, "cannot write " + path);
  os << content;
  if (!os) throw Error(ErrKind::io, "write failed: " + path);
}

}  // namespace detail

inline constexpr const char* kMetricsHeader =
    "category,name,count,prec_5deg_2cm,prec_5deg_5cm,prec_10deg_2cm,"
    "prec_10deg_5cm,iou_prec_50,iou_prec_75,pearson_R,spearman_R,pearson_t,"
    "spearman_t,ranking_consistency_R,ranking_consistency_t";

// Writes `<prefix>_metrics.csv` (one row per category plus a mean row; the
// global correlation/consistency columns repeat the same value on every row)
// and `<prefix>_scatter_{R,t}.csv` (category, pose distance, embedding
// distance per sampled pair).
inline void export_report(const EvalReport& rep, const CorrelationStats& corr,
                          const std::string& prefix) {
  std::string metrics = std::string(kMetricsHeader) + "\n";
  auto append_row = [&](const EvalReport::Row& row) {
    metrics += std::to_string(row.category) + "," + row.name + "," +
               detail::fmt(row.count) + "," + detail::fmt(row.p5d2) + "," +
               detail::fmt(row.p5d5) + "," + detail::fmt(row.p10d2) + "," +
               detail::fmt(row.p10d5) + "," + detail::fmt(row.iou50) + "," +
               detail::fmt(row.iou75) + "," +
               detail::corr_cell(rep.corr_r.pearson, rep.corr_r.defined) + "," +
               detail::corr_cell(rep.corr_r.spearman, rep.corr_r.defined) +
               "," +
               detail::corr_cell(rep.corr_t.pearson, rep.corr_t.defined) + "," +
               detail::corr_cell(rep.corr_t.spearman, rep.corr_t.defined) +
               "," + detail::fmt(rep.ranking_r) + "," +
               detail::fmt(rep.ranking_t) + "\n";
  };
  for (const auto& row : rep.rows) append_row(row);
  append_row(rep.mean);
  detail::write_text(prefix + "_metrics.csv", metrics);

  auto scatter_csv = [&](const std::vector<ScatterPoint>& pts) {
    std::string s = "category,pose_distance,embedding_distance\n";
    for (const ScatterPoint& p : pts)
      s += std::to_string(p.category) + "," + detail::fmt(p.pose_distance) +
           "," + detail::fmt(p.embedding_distance) + "\n";
    return s;
  };
  detail::write_text(prefix + "_scatter_R.csv", scatter_csv(corr.scatter_r));
  detail::write_text(prefix + "_scatter_t.csv", scatter_csv(corr.scatter_t));
}

// Parsed metrics table: header fields plus one vector of cells per row.
// Cells stay strings ("undefined" is a legal value); numeric access goes
// through cell_value.
struct MetricsTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw Error(ErrKind::parse, "metrics table has no column " + name);
  }
  const std::vector<std::string>& find_row(const std::string& name_cell) const {
    const int name_col = column("name");
    for (const auto& row : rows)
      if (row[(std::size_t)name_col] == name_cell) return row;
    throw Error(ErrKind::parse, "metrics table has no row " + name_cell);
  }
};

inline double cell_value(const std::string& cell) {
  if (cell == "undefined")
    throw Error(ErrKind::parse, "metrics cell is undefined");
  std::size_t used = 0;
  const double v = std::stod(cell, &used);
  if (used != cell.size())
    throw Error(ErrKind::parse, "malformed numeric cell: " + cell);
  return v;
}

inline MetricsTable read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrKind::io, "cannot read " + path);
  MetricsTable out;
  std::string line;
  if (!std::getline(is, line))
    throw Error(ErrKind::parse, "empty metrics file: " + path);
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::istringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  out.header = split(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != out.header.size())
      throw Error(ErrKind::parse, "ragged metrics row in " + path);
    out.rows.push_back(std::move(cells));
  }
  if (out.rows.empty())
    throw Error(ErrKind::parse, "metrics file has no rows: " + path);
  return out;
}

}  // namespace poserank
