#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "poserank/evalkit.hpp"
#include "poserank/rng.hpp"
#include "poserank/synthdata.hpp"
#include "test_util.hpp"

using namespace poserank;
using testutil::random_pose;
using testutil::spun_about_axis;

namespace {

Pose axis_aligned_box(const Eigen::Vector3d& t, const Eigen::Vector3d& s) {
  Pose p;
  p.t = t;
  p.s = s;
  return p;
}

// Ground-truth record without points (the precision metrics never touch them).
PoseSample gt_of(const Pose& pose, int category, bool symmetric) {
  PoseSample s;
  s.pose = pose;
  s.category = category;
  s.symmetric = symmetric;
  return s;
}

// pred = gt rotated by `deg` about a random axis, translated by `cm`.
Pose perturbed(const Pose& gt, Rng& rng, double deg, double cm) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  const Eigen::Matrix3d rot =
      Eigen::AngleAxisd(deg * std::numbers::pi / 180.0, axis).toRotationMatrix();
  Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
  dir.normalize();
  const Eigen::Matrix3d base = rotation_from_normals(gt.r_x, gt.r_y);
  return pose_from_rotation(rot * base, gt.t + (cm / 100.0) * dir, gt.s);
}

std::vector<CategoryInfo> asym_table(int n) {
  std::vector<CategoryInfo> out;
  for (int i = 0; i < n; ++i)
    out.push_back({i, "cat" + std::to_string(i), false});
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// n degree / m cm precision
// ---------------------------------------------------------------------------

TEST_CASE("exact predictions score perfectly at every threshold") {
  Rng rng(21, {kStreamEval});
  std::vector<Pose> preds;
  std::vector<PoseSample> gts;
  for (int i = 0; i < 12; ++i) {
    const Pose p = random_pose(rng);
    preds.push_back(p);
    gts.push_back(gt_of(p, i % 3, i % 3 == 0));
  }
  for (auto [n, m] : {std::pair{5.0, 2.0}, {5.0, 5.0}, {10.0, 2.0}, {10.0, 5.0}}) {
    const PrecisionResult r = pose_precision(preds, gts, n, m);
    REQUIRE(r.mean == 1.0);
    REQUIRE(r.per_category.size() == 3);
    for (const auto& row : r.per_category) REQUIRE(row.value == 1.0);
  }
}

TEST_CASE("thresholds separate a six degree one centimeter error") {
  // pred tilted 6 degrees about the x axis and shifted 1 cm
  Pose gt;  // identity frame at the origin
  const Eigen::Matrix3d rot =
      Eigen::AngleAxisd(6.0 * std::numbers::pi / 180.0,
                        Eigen::Vector3d::UnitX())
          .toRotationMatrix();
  const Pose pred = pose_from_rotation(
      rot * Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.01, 0, 0), gt.s);

  REQUIRE(rotation_error_deg(pred, gt, false) == Catch::Approx(6.0).margin(1e-9));
  REQUIRE(translation_error_cm(pred, gt) == Catch::Approx(1.0).margin(1e-12));

  const std::vector<Pose> preds = {pred};
  const std::vector<PoseSample> gts = {gt_of(gt, 0, false)};
  REQUIRE(pose_precision(preds, gts, 10.0, 2.0).mean == 1.0);
  REQUIRE(pose_precision(preds, gts, 5.0, 2.0).mean == 0.0);
  REQUIRE(pose_precision(preds, gts, 5.0, 5.0).mean == 0.0);
  REQUIRE(pose_precision(preds, gts, 10.0, 5.0).mean == 1.0);
}

TEST_CASE("symmetric categories ignore spin about the axis") {
  Rng rng(22, {kStreamEval});
  for (int i = 0; i < 10; ++i) {
    const Pose gt = random_pose(rng);
    const Pose pred = spun_about_axis(gt, rng.uniform(0.5, 3.0));
    REQUIRE(rotation_error_deg(pred, gt, true) == 0.0);
    const std::vector<Pose> preds = {pred};
    // same pair: passes as a symmetric category, fails as an asymmetric one
    REQUIRE(pose_precision(preds, {gt_of(gt, 0, true)}, 5.0, 2.0).mean == 1.0);
    REQUIRE(pose_precision(preds, {gt_of(gt, 0, false)}, 5.0, 2.0).mean == 0.0);
  }
}

TEST_CASE("precision grows with the thresholds") {
  Rng rng(23, {kStreamEval});
  std::vector<Pose> preds;
  std::vector<PoseSample> gts;
  for (int i = 0; i < 60; ++i) {
    const Pose gt = random_pose(rng);
    // error magnitudes straddling all four thresholds
    preds.push_back(
        perturbed(gt, rng, rng.uniform(0.0, 15.0), rng.uniform(0.0, 7.0)));
    gts.push_back(gt_of(gt, i % 3, false));
  }
  const double p52 = pose_precision(preds, gts, 5.0, 2.0).mean;
  const double p55 = pose_precision(preds, gts, 5.0, 5.0).mean;
  const double p102 = pose_precision(preds, gts, 10.0, 2.0).mean;
  const double p105 = pose_precision(preds, gts, 10.0, 5.0).mean;
  REQUIRE(p105 >= p102);
  REQUIRE(p102 >= p52);
  REQUIRE(p105 >= p55);
  REQUIRE(p55 >= p52);
  // the spread actually exercises the ordering
  REQUIRE(p105 > p52);
}

TEST_CASE("precision inputs must align") {
  Rng rng(24, {kStreamEval});
  const Pose p = random_pose(rng);
  try {
    pose_precision({p, p}, {gt_of(p, 0, false)}, 5.0, 2.0);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::shape);
  }
  try {
    pose_precision({}, {}, 5.0, 2.0);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::shape);
  }
}

// ---------------------------------------------------------------------------
// Oriented-box IoU
// ---------------------------------------------------------------------------

TEST_CASE("identical boxes measure unit overlap") {
  Rng rng(31, {kStreamEval});
  for (int i = 0; i < 5; ++i) {
    const Pose p = random_pose(rng);
    REQUIRE(box_iou(p, p, 20000, i) == 1.0);
  }
}

TEST_CASE("disjoint boxes measure zero overlap exactly") {
  const Pose a = axis_aligned_box({0, 0, 0}, {1, 1, 1});
  const Pose b = axis_aligned_box({5, 0, 0}, {1, 1, 1});
  REQUIRE(box_iou(a, b, 20000, 3) == 0.0);
}

TEST_CASE("half-shifted unit cubes overlap by one third") {
  const Pose a = axis_aligned_box({0, 0, 0}, {1, 1, 1});
  const Pose b = axis_aligned_box({0.5, 0, 0}, {1, 1, 1});
  REQUIRE(box_iou(a, b, 50000, 5) == Catch::Approx(1.0 / 3.0).margin(0.01));
}

TEST_CASE("quarter-shifted unit cubes overlap by three fifths") {
  const Pose a = axis_aligned_box({0, 0, 0}, {1, 1, 1});
  const Pose b = axis_aligned_box({0.25, 0, 0}, {1, 1, 1});
  // overlap 0.75 over union 1.25
  REQUIRE(box_iou(a, b, 50000, 6) == Catch::Approx(0.6).margin(0.01));
}

TEST_CASE("overlap estimates are symmetric in the arguments") {
  Rng rng(32, {kStreamEval});
  for (int i = 0; i < 5; ++i) {
    Pose a = random_pose(rng);
    Pose b = random_pose(rng);
    // keep the boxes near each other so the overlap is nontrivial
    b.t = a.t + Eigen::Vector3d(0.2, 0.1, -0.1);
    b.s = a.s;
    REQUIRE(box_iou(a, b, 20000, 77) == box_iou(b, a, 20000, 77));
  }
}

TEST_CASE("overlap is invariant under a common rigid motion") {
  Rng rng(33, {kStreamEval});
  for (int i = 0; i < 3; ++i) {
    Pose a = random_pose(rng);
    Pose b = random_pose(rng);
    b.t = a.t + Eigen::Vector3d(0.15, -0.1, 0.05);
    b.s = a.s;
    const Pose moved = random_pose(rng);  // borrow a random frame + offset
    const Eigen::Matrix3d m = rotation_from_normals(moved.r_x, moved.r_y);
    auto apply = [&](const Pose& p) {
      return pose_from_rotation(m * rotation_from_normals(p.r_x, p.r_y),
                                m * p.t + moved.t, p.s);
    };
    const double before = box_iou(a, b, 100000, 9);
    const double after = box_iou(apply(a), apply(b), 100000, 9);
    REQUIRE(std::abs(before - after) <= 0.01);
  }
}

TEST_CASE("degenerate boxes and sample counts are rejected") {
  Pose flat;
  flat.s = Eigen::Vector3d(1.0, 0.0, 1.0);
  const Pose ok = axis_aligned_box({0, 0, 0}, {1, 1, 1});
  try {
    box_iou(flat, ok, 1000, 0);
    FAIL("expected an invalid_pose error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::invalid_pose);
  }
  try {
    box_iou(ok, ok, 0, 0);
    FAIL("expected a config error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::config);
  }
}

// ---------------------------------------------------------------------------
// IoU precision
// ---------------------------------------------------------------------------

TEST_CASE("mixed overlap cases split at the half threshold") {
  const Pose unit = axis_aligned_box({0, 0, 0}, {1, 1, 1});
  const std::vector<Pose> preds = {
      unit,                                          // IoU 1.0
      axis_aligned_box({0.25, 0, 0}, {1, 1, 1}),     // IoU 0.6
      axis_aligned_box({0.5, 0, 0}, {1, 1, 1}),      // IoU 1/3
      axis_aligned_box({5, 0, 0}, {1, 1, 1}),        // IoU 0
  };
  const std::vector<PoseSample> gts(4, gt_of(unit, 0, false));

  // derive the split from per-pair values first
  const std::vector<double> ious = pairwise_iou(preds, gts, 50000, 0);
  REQUIRE(ious[0] == 1.0);
  REQUIRE(ious[1] == Catch::Approx(0.6).margin(0.01));
  REQUIRE(ious[2] == Catch::Approx(1.0 / 3.0).margin(0.01));
  REQUIRE(ious[3] == 0.0);
  REQUIRE(ious[1] >= 0.5);
  REQUIRE(ious[2] < 0.5);

  REQUIRE(iou_precision(preds, gts, 0.50, 50000, 0).mean == 0.5);
  REQUIRE(iou_precision(preds, gts, 0.75, 50000, 0).mean == 0.25);
}

TEST_CASE("exact predictions pass both overlap thresholds") {
  Rng rng(41, {kStreamEval});
  std::vector<Pose> preds;
  std::vector<PoseSample> gts;
  for (int i = 0; i < 6; ++i) {
    const Pose p = random_pose(rng);
    preds.push_back(p);
    gts.push_back(gt_of(p, i % 2, false));
  }
  REQUIRE(iou_precision(preds, gts, 0.50, 20000, 0).mean == 1.0);
  REQUIRE(iou_precision(preds, gts, 0.75, 20000, 0).mean == 1.0);
}

// ---------------------------------------------------------------------------
// Correlation statistics
// ---------------------------------------------------------------------------

namespace {

// Four categories of two samples each: every sampled within-category pair
// reproduces that category's single (pose distance, embedding distance)
// point, so the pair population is fully controlled.
struct TwoPerCategory {
  std::vector<Pose> poses;
  std::vector<int> cats;
  Eigen::MatrixXd emb_r, emb_t;
  std::vector<CategoryInfo> table = asym_table(4);
};

TwoPerCategory two_per_category(bool anti_monotone) {
  TwoPerCategory out;
  out.emb_r.resize(8, 1);
  out.emb_t.resize(8, 1);
  for (int c = 0; c < 4; ++c) {
    const double delta = 0.1 * (c + 1);  // translation gap of category c
    Pose a, b;
    a.t = Eigen::Vector3d::Zero();
    b.t = Eigen::Vector3d(delta, 0, 0);
    out.poses.push_back(a);
    out.poses.push_back(b);
    out.cats.push_back(c);
    out.cats.push_back(c);
    const double pose_d = translation_distance(a, b);
    const double emb_gap =
        anti_monotone ? (10.0 - c) : 2.0 * pose_d;  // per-category separation
    out.emb_t(2 * c, 0) = 0.0;
    out.emb_t(2 * c + 1, 0) = emb_gap;
    // rotation branch: all rotations equal, so its pose distances have zero
    // variance and the branch must come back undefined
    out.emb_r(2 * c, 0) = 0.0;
    out.emb_r(2 * c + 1, 0) = 1.0;
  }
  return out;
}

}  // namespace

TEST_CASE("an exact linear relation gives unit correlations") {
  const TwoPerCategory d = two_per_category(false);
  const CorrelationStats cs = correlation_stats(d.emb_r, d.emb_t, d.poses,
                                                d.cats, d.table, 4000, 17);
  REQUIRE(cs.t.defined);
  REQUIRE(cs.t.pearson == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(cs.t.spearman == Catch::Approx(1.0).margin(1e-12));
  // constant rotation distances: undefined marker, no NaN escape
  REQUIRE_FALSE(cs.r.defined);
  REQUIRE(cs.pairs == 4000);
  REQUIRE(cs.scatter_r.size() == 4000);
  REQUIRE(cs.scatter_t.size() == 4000);
}

TEST_CASE("an anti-monotone relation gives Spearman minus one") {
  const TwoPerCategory d = two_per_category(true);
  const CorrelationStats cs = correlation_stats(d.emb_r, d.emb_t, d.poses,
                                                d.cats, d.table, 4000, 18);
  REQUIRE(cs.t.defined);
  REQUIRE(cs.t.spearman == Catch::Approx(-1.0).margin(1e-12));
  REQUIRE(cs.t.pearson < 0.0);
}

TEST_CASE("constant embeddings come back undefined, not NaN") {
  Rng rng(51, {kStreamEval});
  std::vector<Pose> poses;
  std::vector<int> cats;
  for (int i = 0; i < 10; ++i) {
    poses.push_back(random_pose(rng));
    cats.push_back(0);
  }
  const Eigen::MatrixXd emb = Eigen::MatrixXd::Zero(10, 4);
  const CorrelationStats cs =
      correlation_stats(emb, emb, poses, cats, asym_table(1), 500, 3);
  REQUIRE_FALSE(cs.r.defined);
  REQUIRE_FALSE(cs.t.defined);
}

TEST_CASE("correlations ignore a common positive rescaling of embeddings") {
  Rng rng(52, {kStreamEval});
  const int n = 24;
  std::vector<Pose> poses;
  std::vector<int> cats;
  Eigen::MatrixXd emb_r(n, 6), emb_t(n, 3);
  for (int i = 0; i < n; ++i) {
    const Pose p = random_pose(rng);
    poses.push_back(p);
    cats.push_back(i % 2);
    emb_r.row(i) << p.r_x.transpose(), p.r_y.transpose();
    emb_t.row(i) = p.t.transpose();
  }
  const auto table = asym_table(2);
  const CorrelationStats base =
      correlation_stats(emb_r, emb_t, poses, cats, table, 3000, 5);
  const CorrelationStats scaled = correlation_stats(
      3.7 * emb_r, 3.7 * emb_t, poses, cats, table, 3000, 5);
  REQUIRE(scaled.r.pearson == Catch::Approx(base.r.pearson).margin(1e-12));
  REQUIRE(scaled.t.pearson == Catch::Approx(base.t.pearson).margin(1e-12));
  // identical ranks: the rank statistic reproduces bitwise
  REQUIRE(scaled.r.spearman == base.r.spearman);
  REQUIRE(scaled.t.spearman == base.t.spearman);
}

TEST_CASE("pair sampling is deterministic per seed") {
  Rng rng(53, {kStreamEval});
  const int n = 12;
  std::vector<Pose> poses;
  std::vector<int> cats;
  Eigen::MatrixXd emb(n, 4);
  for (int i = 0; i < n; ++i) {
    poses.push_back(random_pose(rng));
    cats.push_back(i % 3);
    for (int k = 0; k < 4; ++k) emb(i, k) = rng.normal();
  }
  const auto table = asym_table(3);
  const CorrelationStats a =
      correlation_stats(emb, emb, poses, cats, table, 800, 9);
  const CorrelationStats b =
      correlation_stats(emb, emb, poses, cats, table, 800, 9);
  REQUIRE(a.r.pearson == b.r.pearson);
  REQUIRE(a.r.spearman == b.r.spearman);
  for (std::size_t i = 0; i < a.scatter_r.size(); ++i) {
    REQUIRE(a.scatter_r[i].pose_distance == b.scatter_r[i].pose_distance);
    REQUIRE(a.scatter_r[i].embedding_distance ==
            b.scatter_r[i].embedding_distance);
  }
  const CorrelationStats c =
      correlation_stats(emb, emb, poses, cats, table, 800, 10);
  REQUIRE(c.r.pearson != a.r.pearson);  // a different draw, surely
}

TEST_CASE("correlation sampling rejects unusable inputs") {
  Rng rng(54, {kStreamEval});
  const Pose p = random_pose(rng);
  const Eigen::MatrixXd emb = Eigen::MatrixXd::Zero(2, 2);
  // singleton categories only
  try {
    correlation_stats(emb, emb, {p, p}, {0, 1}, asym_table(2), 100, 0);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::shape);
  }
  // misaligned embedding row count
  try {
    correlation_stats(Eigen::MatrixXd::Zero(3, 2), emb, {p, p}, {0, 0},
                      asym_table(1), 100, 0);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::shape);
  }
  // category missing from the table
  try {
    correlation_stats(emb, emb, {p, p}, {5, 5}, asym_table(2), 100, 0);
    FAIL("expected a config error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::config);
  }
}

// ---------------------------------------------------------------------------
// Ranking consistency
// ---------------------------------------------------------------------------

TEST_CASE("distance-generating embeddings rank perfectly") {
  Rng rng(61, {kStreamEval});
  const int n = 30;
  std::vector<Pose> poses;
  std::vector<int> cats;
  Eigen::MatrixXd emb_r(n, 6), emb_t(n, 3);
  for (int i = 0; i < n; ++i) {
    const Pose p = random_pose(rng);
    poses.push_back(p);
    cats.push_back(0);
    // embedding distance = sqrt(2 * rotation distance): order-preserving
    emb_r.row(i) << p.r_x.transpose(), p.r_y.transpose();
    emb_t.row(i) = p.t.transpose();
  }
  const auto table = asym_table(1);
  REQUIRE(ranking_consistency(emb_r, poses, cats, table,
                              PoseDistanceKind::rotation, 4000, 7) == 1.0);
  REQUIRE(ranking_consistency(emb_t, poses, cats, table,
                              PoseDistanceKind::translation, 4000, 7) == 1.0);
}

TEST_CASE("order-reversing embeddings rank at zero") {
  // three samples whose embedding side lengths invert the pose-distance order
  std::vector<Pose> poses(3);
  poses[0].t = Eigen::Vector3d(0.00, 0, 0);
  poses[1].t = Eigen::Vector3d(0.10, 0, 0);
  poses[2].t = Eigen::Vector3d(0.35, 0, 0);
  // pose distances: d01 < d12 < d02
  const double d01 = translation_distance(poses[0], poses[1]);
  const double d12 = translation_distance(poses[1], poses[2]);
  const double d02 = translation_distance(poses[0], poses[2]);
  REQUIRE(d01 < d12);
  REQUIRE(d12 < d02);
  // embedding triangle with side order reversed: e01 > e12 > e02
  Eigen::MatrixXd emb(3, 2);
  emb.row(0) << 0.0, 0.0;
  emb.row(1) << 3.0, 0.0;
  emb.row(2) << 7.25 / 6.0, std::sqrt(2.25 - (7.25 / 6.0) * (7.25 / 6.0));
  REQUIRE((emb.row(0) - emb.row(1)).norm() > (emb.row(1) - emb.row(2)).norm());
  REQUIRE((emb.row(1) - emb.row(2)).norm() > (emb.row(0) - emb.row(2)).norm());

  const std::vector<int> cats = {0, 0, 0};
  REQUIRE(ranking_consistency(emb, poses, cats, asym_table(1),
                              PoseDistanceKind::translation, 2000, 5) == 0.0);
}

TEST_CASE("random embeddings rank at chance level") {
  Rng rng(62, {kStreamEval});
  const int n = 60;
  std::vector<Pose> poses;
  std::vector<int> cats;
  Eigen::MatrixXd emb(n, 8);
  for (int i = 0; i < n; ++i) {
    poses.push_back(random_pose(rng));
    cats.push_back(0);
    for (int k = 0; k < 8; ++k) emb(i, k) = rng.normal();
  }
  const double frac = ranking_consistency(
      emb, poses, cats, asym_table(1), PoseDistanceKind::rotation, 20000, 3);
  REQUIRE(frac == Catch::Approx(0.5).margin(0.05));
}

TEST_CASE("no rankable triple passes vacuously") {
  Rng rng(63, {kStreamEval});
  const Pose a = random_pose(rng), b = random_pose(rng);
  const Eigen::MatrixXd emb = Eigen::MatrixXd::Random(2, 3);
  REQUIRE(ranking_consistency(emb, {a, b}, {0, 0}, asym_table(1),
                              PoseDistanceKind::rotation, 100, 0) == 1.0);
}

// ---------------------------------------------------------------------------
// Report assembly and export
// ---------------------------------------------------------------------------

namespace {

std::string tmp_prefix(const std::string& name) {
  return "/tmp/poserank_evalkit_" + name;
}

}  // namespace

TEST_CASE("report columns mirror the metric routines") {
  GenConfig gen;
  gen.seed = 91;
  gen.samples_per_category = 6;
  gen.n_points = 16;
  const std::vector<PoseSample> data = generate_dataset(gen);
  const auto table = category_info(gen.categories);

  EncoderConfig enc;
  enc.n_points = 16;
  enc.d = 12;
  enc.trunk_hidden = {8, 10};
  enc.head_hidden = 6;
  const Params params = init_params<float>(4, enc);
  const ModelOutputs outputs = run_model(params, data);
  REQUIRE(outputs.preds.size() == data.size());
  REQUIRE(outputs.emb_r.rows() == static_cast<int>(data.size()));

  EvalSettings st;
  st.mc_samples = 4000;
  st.n_pairs = 400;
  st.n_triples = 400;
  st.seed = 5;
  CorrelationStats corr;
  const EvalReport rep = build_eval_report(outputs, data, table, st, &corr);

  REQUIRE(rep.rows.size() == 3);
  REQUIRE(rep.total_samples == 18);
  for (std::size_t i = 1; i < rep.rows.size(); ++i)
    REQUIRE(rep.rows[i].category > rep.rows[i - 1].category);

  // wiring: each column reproduces the standalone metric call
  const std::vector<Pose>& preds = outputs.preds;
  const PrecisionResult p105 = pose_precision(preds, data, 10.0, 5.0);
  const std::vector<double> ious =
      pairwise_iou(preds, data, st.mc_samples, st.seed);
  const PrecisionResult i50 = iou_precision_from(ious, data, 0.50);
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    REQUIRE(rep.rows[i].p10d5 == p105.per_category[i].value);
    REQUIRE(rep.rows[i].iou50 == i50.per_category[i].value);
    REQUIRE(rep.rows[i].count == p105.per_category[i].count);
  }
  REQUIRE(rep.mean.p10d5 == Catch::Approx(p105.mean).margin(1e-15));

  std::vector<Pose> poses;
  std::vector<int> cats;
  for (const auto& s : data) {
    poses.push_back(s.pose);
    cats.push_back(s.category);
  }
  const CorrelationStats direct = correlation_stats(
      outputs.emb_r, outputs.emb_t, poses, cats, table, st.n_pairs, st.seed);
  REQUIRE(rep.corr_r.defined == direct.r.defined);
  if (rep.corr_r.defined) REQUIRE(rep.corr_r.pearson == direct.r.pearson);
  REQUIRE(rep.ranking_r ==
          ranking_consistency(outputs.emb_r, poses, cats, table,
                              PoseDistanceKind::rotation, st.n_triples,
                              st.seed));
  REQUIRE(corr.scatter_r.size() == static_cast<std::size_t>(st.n_pairs));
}

TEST_CASE("exported tables round-trip the report values") {
  GenConfig gen;
  gen.seed = 92;
  gen.samples_per_category = 5;
  gen.n_points = 16;
  const std::vector<PoseSample> data = generate_dataset(gen);
  const auto table = category_info(gen.categories);

  EncoderConfig enc;
  enc.n_points = 16;
  enc.d = 12;
  enc.trunk_hidden = {8, 10};
  enc.head_hidden = 6;
  const Params params = init_params<float>(8, enc);
  const ModelOutputs outputs = run_model(params, data);

  EvalSettings st;
  st.mc_samples = 3000;
  st.n_pairs = 300;
  st.n_triples = 300;
  st.seed = 6;
  CorrelationStats corr;
  const EvalReport rep = build_eval_report(outputs, data, table, st, &corr);

  const std::string prefix = tmp_prefix("roundtrip");
  export_report(rep, corr, prefix);

  const MetricsTable mt = read_metrics_csv(prefix + "_metrics.csv");
  REQUIRE(mt.header.size() == 15);
  REQUIRE(mt.header[0] == "category");
  REQUIRE(mt.rows.size() == rep.rows.size() + 1);

  auto check_row = [&](const std::vector<std::string>& cells,
                       const EvalReport::Row& row) {
    REQUIRE(std::stoi(cells[0]) == row.category);
    REQUIRE(cells[1] == row.name);
    REQUIRE(cell_value(cells[2]) == Catch::Approx(row.count).margin(1e-9));
    REQUIRE(cell_value(cells[3]) == Catch::Approx(row.p5d2).margin(1e-9));
    REQUIRE(cell_value(cells[4]) == Catch::Approx(row.p5d5).margin(1e-9));
    REQUIRE(cell_value(cells[5]) == Catch::Approx(row.p10d2).margin(1e-9));
    REQUIRE(cell_value(cells[6]) == Catch::Approx(row.p10d5).margin(1e-9));
    REQUIRE(cell_value(cells[7]) == Catch::Approx(row.iou50).margin(1e-9));
    REQUIRE(cell_value(cells[8]) == Catch::Approx(row.iou75).margin(1e-9));
  };
  for (std::size_t i = 0; i < rep.rows.size(); ++i)
    check_row(mt.rows[i], rep.rows[i]);
  check_row(mt.rows.back(), rep.mean);

  // global columns appear identically on every row
  for (const auto& cells : mt.rows) {
    if (rep.corr_r.defined)
      REQUIRE(cell_value(cells[9]) ==
              Catch::Approx(rep.corr_r.pearson).margin(1e-9));
    REQUIRE(cell_value(cells[13]) ==
            Catch::Approx(rep.ranking_r).margin(1e-9));
    REQUIRE(cell_value(cells[14]) ==
            Catch::Approx(rep.ranking_t).margin(1e-9));
  }

  // mean row equals the mean of the category rows, column by column
  const std::vector<std::string>& mean_row = mt.rows.back();
  for (int col : {2, 3, 4, 5, 6, 7, 8}) {
    double sum = 0.0;
    for (std::size_t i = 0; i < rep.rows.size(); ++i)
      sum += cell_value(mt.rows[i][(std::size_t)col]);
    REQUIRE(cell_value(mean_row[(std::size_t)col]) ==
            Catch::Approx(sum / static_cast<double>(rep.rows.size()))
                .margin(1e-9));
  }

  // scatter files: one row per sampled pair
  auto count_rows = [](const std::string& path) {
    std::ifstream is(path);
    REQUIRE(is.good());
    std::string line;
    REQUIRE(std::getline(is, line));
    REQUIRE(line == "category,pose_distance,embedding_distance");
    int n = 0;
    while (std::getline(is, line))
      if (!line.empty()) ++n;
    return n;
  };
  REQUIRE(count_rows(prefix + "_scatter_R.csv") == st.n_pairs);
  REQUIRE(count_rows(prefix + "_scatter_t.csv") == st.n_pairs);

  for (const char* suffix : {"_metrics.csv", "_scatter_R.csv", "_scatter_t.csv"})
    std::remove((prefix + suffix).c_str());
}

TEST_CASE("undefined correlations export as a marker cell") {
  // hand-built report with an undefined rotation branch
  EvalReport rep;
  EvalReport::Row row;
  row.category = 0;
  row.name = "only";
  row.count = 2;
  rep.rows = {row};
  rep.mean = row;
  rep.mean.category = -1;
  rep.mean.name = "mean";
  rep.corr_t.defined = true;
  rep.corr_t.pearson = 0.5;
  rep.corr_t.spearman = 0.25;
  CorrelationStats corr;
  corr.scatter_r.push_back({0, 1.0, 2.0});
  corr.scatter_t.push_back({0, 1.0, 2.0});

  const std::string prefix = tmp_prefix("undef");
  export_report(rep, corr, prefix);
  const MetricsTable mt = read_metrics_csv(prefix + "_metrics.csv");
  const int pr = mt.column("pearson_R");
  REQUIRE(mt.rows[0][(std::size_t)pr] == "undefined");
  try {
    cell_value(mt.rows[0][(std::size_t)pr]);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::parse);
  }
  REQUIRE(cell_value(mt.rows[0][(std::size_t)mt.column("pearson_t")]) == 0.5);
  for (const char* suffix : {"_metrics.csv", "_scatter_R.csv", "_scatter_t.csv"})
    std::remove((prefix + suffix).c_str());
}

TEST_CASE("export surfaces IO failures with the path") {
  EvalReport rep;
  rep.rows.push_back({});
  rep.mean = rep.rows[0];
  CorrelationStats corr;
  try {
    export_report(rep, corr, "/no/such/dir/report");
    FAIL("expected an io error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::io);
    REQUIRE(std::string(e.what()).find("/no/such/dir") != std::string::npos);
  }
}

TEST_CASE("metrics parsing rejects malformed tables") {
  const std::string p = tmp_prefix("badtable.csv");
  auto write = [&](const std::string& content) {
    std::ofstream os(p, std::ios::trunc);
    os << content;
  };
  write("");
  try {
    read_metrics_csv(p);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::parse);
  }
  write("a,b,c\n1,2\n");
  try {
    read_metrics_csv(p);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::parse);
  }
  std::remove(p.c_str());
  try {
    read_metrics_csv(p);
    FAIL("expected an io error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrKind::io);
  }
}
