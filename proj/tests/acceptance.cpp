// Release acceptance checks.  Each check prints one [PASS]/[FAIL] line with
// the measured value, the tolerance pinned here in code, and the runtime
// budget.  The binary runs a named subset so the quick numeric checks and
// the long training checks can be scheduled separately:
//
//   acceptance fast                 checks 1-4, 7, 9 (seconds)
//   acceptance training <cli-path>  checks 5, 6, 8   (several minutes)
//   acceptance all      <cli-path>  everything
//
// Exit code is the number of failed checks.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "poserank/cli.hpp"

using namespace poserank;

namespace {

int g_failures = 0;

void report(bool ok, int number, const std::string& what,
            const std::string& detail) {
  if (!ok) ++g_failures;
  std::cout << (ok ? "[PASS]" : "[FAIL]") << " check " << number << "/9 "
            << what << ": " << detail << "\n"
            << std::flush;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", s);
  return buf;
}

// First output line starting with `needle`, for relaying a command summary.
std::string line_starting_with(const std::string& text,
                               const std::string& needle) {
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);)
    if (line.rfind(needle, 0) == 0) return line;
  return "(no `" + needle + "` line in output)";
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return "<unreadable " + path + ">";
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Pose random_pose(Rng& rng) {
  const Eigen::Matrix3d r = sample_rotation(rng);
  Eigen::Vector3d t, s;
  for (int k = 0; k < 3; ++k) {
    t[k] = rng.uniform(-0.3, 0.3);
    s[k] = rng.uniform(0.1, 0.5);
  }
  return pose_from_rotation(r, t, s);
}

Eigen::MatrixXd random_features(Rng& rng, int n, int d) {
  Eigen::MatrixXd f(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) f(i, j) = rng.normal();
  return f;
}

// Random batch shape shared by the set-structure and reduction checks:
// 4-9 samples spread over 2-3 of the built-in categories.
struct RandomBatch {
  std::vector<Pose> poses;
  std::vector<int> cats;
};

RandomBatch random_batch(Rng& rng, const std::vector<CategoryInfo>& table) {
  RandomBatch b;
  const int n = 4 + static_cast<int>(rng.uniform_int(6));
  const int n_cats = 2 + static_cast<int>(rng.uniform_int(2));
  const std::vector<int> picks = sample_without_replacement(
      rng, static_cast<int>(table.size()), n_cats);
  for (int i = 0; i < n; ++i) {
    b.poses.push_back(random_pose(rng));
    b.cats.push_back(
        table[(std::size_t)picks[(std::size_t)rng.uniform_int(n_cats)]].id);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Check 1: the shipped loss implementation against the independent
// transcription bundled with the oracle-check command.
// ---------------------------------------------------------------------------

void check_loss_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream out, err;
  const int code = cli::run({"oracle-check"}, out, err);
  const double dt = seconds_since(t0);
  const bool ok = code == 0 && dt < 5.0;
  report(ok, 1, "loss oracle equivalence",
         line_starting_with(out.str(), "oracle-check: max") + "; " +
             fmt_seconds(dt) + " s (budget 5 s)");
}

// ---------------------------------------------------------------------------
// Check 2: finite-difference audit of the full training graph (encoder,
// heads, ranking losses, pose-regression loss) at 64-bit.
// ---------------------------------------------------------------------------

void check_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream out, err;
  const int code = cli::run({"grad-check"}, out, err);
  const double dt = seconds_since(t0);
  const bool ok = code == 0 && dt < 30.0;
  report(ok, 2, "gradient correctness",
         line_starting_with(out.str(), "grad-check: max") + "; " +
             fmt_seconds(dt) + " s (budget 30 s)");
}

// ---------------------------------------------------------------------------
// Check 3: structural properties of the ranked negative sets on 1000 random
// batches: the joint set is exactly the intersection of the per-component
// sets; a farther positive never enlarges a set; every loss component is
// nonnegative.
// ---------------------------------------------------------------------------

void check_negative_sets() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<CategoryInfo> table = category_info(default_categories());
  Rng rng(2024, {kStreamEval, 0x736574});
  constexpr int kBatches = 1000;
  constexpr int kDim = 8;

  long triples = 0;
  bool intersection_ok = true, shrink_ok = true, nonneg_ok = true;

  auto sorted = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  auto subset = [&](const std::vector<int>& small,
                    const std::vector<int>& big) {
    const auto ss = sorted(small), sb = sorted(big);
    return std::includes(sb.begin(), sb.end(), ss.begin(), ss.end());
  };

  for (int b = 0; b < kBatches && intersection_ok && shrink_ok && nonneg_ok;
       ++b) {
    const RandomBatch batch = random_batch(rng, table);
    const bool merged = b % 2 == 1;
    const DistanceMatrices dm =
        distance_matrices(batch.poses, batch.cats, table, merged);

    for (const auto& g : dm.groups) {
      const int m = static_cast<int>(g.members.size());
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
          if (j == i) continue;
          const NegativeSets sj = build_negative_sets(
              dm, g.members[(std::size_t)i], g.members[(std::size_t)j]);

          std::vector<int> meet;
          const auto sr = sorted(sj.rot), st = sorted(sj.trans);
          std::set_intersection(sr.begin(), sr.end(), st.begin(), st.end(),
                                std::back_inserter(meet));
          if (meet != sorted(sj.joint)) intersection_ok = false;

          for (int j2 = 0; j2 < m; ++j2) {
            if (j2 == i || j2 == j) continue;
            ++triples;
            const NegativeSets s2 = build_negative_sets(
                dm, g.members[(std::size_t)i], g.members[(std::size_t)j2]);
            const bool farther_rot = g.d_rot(i, j2) >= g.d_rot(i, j);
            const bool farther_trans = g.d_trans(i, j2) >= g.d_trans(i, j);
            if (farther_rot && !subset(s2.rot, sj.rot)) shrink_ok = false;
            if (farther_trans && !subset(s2.trans, sj.trans))
              shrink_ok = false;
            if (farther_rot && farther_trans && !subset(s2.joint, sj.joint))
              shrink_ok = false;
          }
        }
      }
    }

    CLConfig cfg;
    cfg.ignore_category = merged;
    const LossBreakdown lb =
        cl_loss(random_features(rng, (int)batch.poses.size(), kDim),
                random_features(rng, (int)batch.poses.size(), kDim),
                batch.poses, batch.cats, table, cfg);
    for (double v : {lb.joint_r, lb.joint_t, lb.task_r, lb.task_t, lb.cl_r,
                     lb.cl_t})
      if (!(v >= 0.0)) nonneg_ok = false;
  }

  const double dt = seconds_since(t0);
  const bool ok = intersection_ok && shrink_ok && nonneg_ok && dt < 5.0;
  std::ostringstream detail;
  detail << kBatches << " batches, " << triples
         << " (anchor, positive, positive') triples"
         << (intersection_ok ? "" : "; joint != rot n trans")
         << (shrink_ok ? "" : "; shrinkage violated")
         << (nonneg_ok ? "" : "; negative loss component") << "; "
         << fmt_seconds(dt) << " s (budget 5 s)";
  report(ok, 3, "negative-set structure", detail.str());
}

// ---------------------------------------------------------------------------
// Check 4: with a single category, each branch's per-component term must
// equal an independently coded Rank-N-Contrast loss whose label distance is
// the corresponding pose distance.  Transcribed here in the textbook
// -log(exp / sum exp) form, normalized by anchors then positives.
// ---------------------------------------------------------------------------

void check_rnc_reduction() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<CategoryInfo> table = category_info(default_categories());
  Rng rng(2024, {kStreamEval, 0x726e63});
  constexpr int kBatches = 300;
  constexpr int kDim = 8;
  constexpr double kTol = 1e-10;
  const CLConfig cfg;  // tau = 2

  auto rank_n_contrast = [&](const Eigen::MatrixXd& emb,
                             const Eigen::MatrixXd& label_d) {
    const int n = static_cast<int>(emb.rows());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double per_anchor = 0.0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        double den = 0.0;
        for (int k = 0; k < n; ++k) {
          if (k == i || label_d(i, k) < label_d(i, j)) continue;
          den += std::exp(-(emb.row(i) - emb.row(k)).norm() / cfg.tau);
        }
        per_anchor +=
            -std::log(std::exp(-(emb.row(i) - emb.row(j)).norm() / cfg.tau) /
                      den);
      }
      total += per_anchor / static_cast<double>(n - 1);
    }
    return total / static_cast<double>(n);
  };

  double max_dev = 0.0;
  for (int b = 0; b < kBatches; ++b) {
    const CategoryInfo& cat = table[(std::size_t)(b % 3)];
    const int n = 3 + static_cast<int>(rng.uniform_int(7));
    std::vector<Pose> poses;
    for (int i = 0; i < n; ++i) poses.push_back(random_pose(rng));
    const std::vector<int> cats(static_cast<std::size_t>(n), cat.id);
    const Eigen::MatrixXd f_r = random_features(rng, n, kDim);
    const Eigen::MatrixXd f_t = random_features(rng, n, kDim);

    Eigen::MatrixXd d_rot(n, n), d_trans(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        d_rot(i, j) = rotation_distance(poses[(std::size_t)i],
                                        poses[(std::size_t)j], cat.symmetric);
        d_trans(i, j) = translation_distance(poses[(std::size_t)i],
                                             poses[(std::size_t)j]);
      }
    }

    const auto [task_r, task_t] = task_loss(f_r, f_t, poses, cats, table, cfg);
    max_dev = std::max(max_dev, std::abs(task_r - rank_n_contrast(f_r, d_rot)));
    max_dev =
        std::max(max_dev, std::abs(task_t - rank_n_contrast(f_t, d_trans)));
  }

  const double dt = seconds_since(t0);
  const bool ok = max_dev < kTol;
  std::ostringstream detail;
  detail << "max deviation " << max_dev << " over " << kBatches
         << " single-category batches (tolerance " << kTol << "); "
         << fmt_seconds(dt) << " s";
  report(ok, 4, "single-category reduction to Rank-N-Contrast", detail.str());
}

// ---------------------------------------------------------------------------
// Check 7: unit correctness of the precision metrics on crafted poses.
// ---------------------------------------------------------------------------

void check_metric_units() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<CategoryInfo> table = category_info(default_categories());
  Rng rng(2024, {kStreamEval, 0x756e69});
  std::vector<std::string> problems;

  // exact predictions score 1.0 at every threshold, both metric families
  {
    std::vector<PoseSample> gts;
    std::vector<Pose> preds;
    for (const CategoryInfo& cat : table) {
      PoseSample s;
      s.pose = random_pose(rng);
      s.category = cat.id;
      s.symmetric = cat.symmetric;
      gts.push_back(s);
      preds.push_back(s.pose);
    }
    for (const auto [deg, cm] : std::vector<std::pair<double, double>>{
             {5, 2}, {5, 5}, {10, 2}, {10, 5}})
      if (pose_precision(preds, gts, deg, cm).mean != 1.0)
        problems.push_back("exact pair misses a degree/cm threshold");
    for (double thr : {0.50, 0.75})
      if (iou_precision(preds, gts, thr).mean != 1.0)
        problems.push_back("exact pair misses an IoU threshold");
  }

  // a 6-degree / 1 cm error passes the loose threshold, fails the tight one
  {
    PoseSample gt;
    gt.pose = pose_from_rotation(Eigen::Matrix3d::Identity(),
                                 Eigen::Vector3d::Zero(),
                                 Eigen::Vector3d(0.2, 0.3, 0.4));
    gt.category = 1;  // asymmetric
    gt.symmetric = false;
    const Eigen::Matrix3d r6 =
        Eigen::AngleAxisd(6.0 * M_PI / 180.0, Eigen::Vector3d::UnitZ())
            .toRotationMatrix();
    const Pose pred = pose_from_rotation(r6, Eigen::Vector3d(0.01, 0, 0),
                                         gt.pose.s);
    if (std::abs(rotation_error_deg(pred, gt.pose, false) - 6.0) > 1e-9)
      problems.push_back("crafted rotation error is not 6 degrees");
    if (std::abs(translation_error_cm(pred, gt.pose) - 1.0) > 1e-9)
      problems.push_back("crafted translation error is not 1 cm");
    if (pose_precision({pred}, {gt}, 10, 2).mean != 1.0)
      problems.push_back("6deg/1cm does not pass 10deg2cm");
    if (pose_precision({pred}, {gt}, 5, 2).mean != 0.0)
      problems.push_back("6deg/1cm does not fail 5deg2cm");
  }

  // a unit cube against itself shifted by half a side: IoU 1/2 / (3/2)
  double cube_iou = 0.0;
  {
    const Pose cube = pose_from_rotation(Eigen::Matrix3d::Identity(),
                                         Eigen::Vector3d::Zero(),
                                         Eigen::Vector3d(1, 1, 1));
    Pose shifted = cube;
    shifted.t = Eigen::Vector3d(0.5, 0, 0);
    cube_iou = box_iou(cube, shifted);
    if (std::abs(cube_iou - 1.0 / 3.0) > 0.01)
      problems.push_back("half-shifted cube IoU off (got " +
                         std::to_string(cube_iou) + ")");
  }

  // spinning a symmetric object about its symmetry axis costs no error
  {
    const Pose gt = random_pose(rng);
    const Eigen::Matrix3d spin =
        Eigen::AngleAxisd(117.0 * M_PI / 180.0, gt.r_y).toRotationMatrix();
    const Pose pred = pose_from_rotation(
        spin * rotation_from_normals(gt.r_x, gt.r_y), gt.t, gt.s);
    if (rotation_error_deg(pred, gt, true) > 1e-6)
      problems.push_back("symmetry-axis spin shows rotation error");
    if (rotation_error_deg(pred, gt, false) < 100.0)
      problems.push_back("asymmetric reading of the spin is implausibly low");
  }

  const double dt = seconds_since(t0);
  const bool ok = problems.empty() && dt < 10.0;
  std::ostringstream detail;
  detail << "4 degree/cm and 2 IoU thresholds, half-shifted-cube IoU "
         << cube_iou << " (want 1/3 +- 0.01), symmetry-axis spin";
  for (const std::string& p : problems) detail << "; " << p;
  detail << "; " << fmt_seconds(dt) << " s (budget 10 s)";
  report(ok, 7, "metric unit correctness", detail.str());
}

// ---------------------------------------------------------------------------
// Check 9: exact plateau-scheduler and decoupled-weight-decay behavior.
// ---------------------------------------------------------------------------

void check_scheduler_optimizer() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> problems;

  {
    SchedulerConfig cfg;
    cfg.patience = 4;
    cfg.factor = 0.5;
    cfg.min_lr = 2e-4;
    cfg.threshold = 1e-4;
    SchedulerState s;  // lr 1e-3
    plateau_step(s, 1.0, cfg);  // improves on +inf
    for (int i = 0; i < cfg.patience - 1; ++i)
      if (plateau_step(s, 1.0, cfg) != 1e-3)
        problems.push_back("rate moved before patience ran out");
    if (plateau_step(s, 1.0, cfg) != 1e-3 * 0.5)
      problems.push_back("no exact halving at patience");
    // an improvement restarts the count
    plateau_step(s, 0.5, cfg);
    for (int i = 0; i < cfg.patience - 1; ++i) plateau_step(s, 0.5, cfg);
    if (s.lr != 1e-3 * 0.5)
      problems.push_back("count not restarted by an improvement");
    if (plateau_step(s, 0.5, cfg) != 1e-3 * 0.5 * 0.5)
      problems.push_back("no exact second halving");
    // the floor binds exactly
    for (int i = 0; i < cfg.patience; ++i) plateau_step(s, 0.5, cfg);
    if (s.lr != 2e-4) problems.push_back("min_lr floor not exact");
  }

  {
    EncoderConfig ec;
    ec.n_points = 16;
    ec.d = 8;
    ec.trunk_hidden = {8, 8};
    ec.head_hidden = 6;
    Params params = init_params<float>(3, ec);
    OptimizerState opt = OptimizerState::zeros_like(params);
    std::vector<Eigen::MatrixXf> zeros, expected;
    params.for_each_array([&](const Eigen::MatrixXf& a) {
      zeros.push_back(Eigen::MatrixXf::Zero(a.rows(), a.cols()));
      expected.push_back(a);
    });
    const double lr = 0.01, wd = 0.1;
    const float decay = 1.0f - static_cast<float>(lr * wd);
    for (int step = 1; step <= 5; ++step) {
      adamw_update(params, zeros, opt, lr, wd);
      for (Eigen::MatrixXf& e : expected) e *= decay;
      std::size_t i = 0;
      bool match = true;
      params.for_each_array([&](const Eigen::MatrixXf& a) {
        if (!(a.array() == expected[i].array()).all()) match = false;
        ++i;
      });
      if (!match)
        problems.push_back("zero-gradient step " + std::to_string(step) +
                           " is not an exact (1 - lr*wd) scaling");
    }
    if (opt.t != 5) problems.push_back("update counter wrong");
  }

  const double dt = seconds_since(t0);
  const bool ok = problems.empty() && dt < 1.0;
  std::ostringstream detail;
  detail << "halving after exactly patience misses, exact (1 - lr*wd)^k decay"
            " under zero gradient";
  for (const std::string& p : problems) detail << "; " << p;
  detail << "; " << fmt_seconds(dt) << " s (budget 1 s)";
  report(ok, 9, "scheduler and optimizer unit behavior", detail.str());
}

// ---------------------------------------------------------------------------
// Checks 5, 6, 8: trained-model quality, the contrastive-loss ablation, and
// pipeline determinism, all through the installed command-line binary.
// ---------------------------------------------------------------------------

struct SeedMetrics {
  double pearson_r = 0.0, pearson_t = 0.0;
  double rank_r = 0.0, rank_t = 0.0;
  double p10d5 = 0.0;
  bool defined = true;
};

class TrainingLab {
 public:
  TrainingLab(std::string cli, std::string dir)
      : cli_(std::move(cli)), dir_(std::move(dir)) {
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }

  // Runs one shell command, logging its output; returns the exit code.
  int sh(const std::string& cmd, const std::string& log) {
    const std::string full = cmd + " > " + dir_ + "/" + log + " 2>&1";
    const int raw = std::system(full.c_str());
    if (raw == -1 || !WIFEXITED(raw)) return -1;
    return WEXITSTATUS(raw);
  }

  std::string path(const std::string& name) const { return dir_ + "/" + name; }

  // gen-data -> train -> eval for one seed and one loss variant.
  bool pipeline(int seed, bool cl_off, const std::string& tag) {
    const std::string train_data = path("data_" + std::to_string(seed) +
                                        ".jsonl");
    const std::string test_data = path("test_" + std::to_string(seed) +
                                       ".jsonl");
    if (!std::filesystem::exists(train_data) &&
        sh(cli_ + " gen-data --set seed=" + std::to_string(seed) + " --out " +
               train_data,
           "gen_" + tag + ".log") != 0)
      return false;
    if (!std::filesystem::exists(test_data) &&
        sh(cli_ + " gen-data --set seed=" + std::to_string(seed + 1000) +
               " --set gen.samples_per_category=50 --out " + test_data,
           "gen_test_" + tag + ".log") != 0)
      return false;
    const std::string overrides = " --set seed=" + std::to_string(seed) +
                                  " --set train.steps=4000" +
                                  (cl_off ? " --set cl.off=true" : "");
    if (sh(cli_ + " train" + overrides + " --data " + train_data +
               " --out-prefix " + path(tag),
           "train_" + tag + ".log") != 0)
      return false;
    return sh(cli_ + " eval" + overrides + " --data " + test_data +
                  " --checkpoint " + path(tag + ".ckpt") + " --out-prefix " +
                  path(tag + "_eval"),
              "eval_" + tag + ".log") == 0;
  }

  SeedMetrics metrics(const std::string& tag) const {
    const MetricsTable t = read_metrics_csv(path(tag + "_eval_metrics.csv"));
    const auto& mean = t.find_row("mean");
    auto cell = [&](const char* col) {
      return mean[(std::size_t)t.column(col)];
    };
    SeedMetrics m;
    for (const char* col : {"pearson_R", "pearson_t"})
      if (cell(col) == std::string("undefined")) m.defined = false;
    if (m.defined) {
      m.pearson_r = cell_value(cell("pearson_R"));
      m.pearson_t = cell_value(cell("pearson_t"));
    }
    m.rank_r = cell_value(cell("ranking_consistency_R"));
    m.rank_t = cell_value(cell("ranking_consistency_t"));
    m.p10d5 = cell_value(cell("prec_10deg_5cm"));
    return m;
  }

  const std::string& cli() const { return cli_; }

 private:
  std::string cli_, dir_;
};

void check_training(const std::string& cli_path) {
  constexpr double kPearsonMin = 0.7;
  constexpr double kRankConsMin = 0.8;
  const std::vector<int> seeds = {1, 2, 3};

  TrainingLab lab(cli_path, "acceptance_work");
  const auto t0 = std::chrono::steady_clock::now();

  bool runs_ok = true;
  double seed1_seconds = 0.0;
  std::vector<SeedMetrics> full, off;
  for (int seed : seeds) {
    const auto ts = std::chrono::steady_clock::now();
    const std::string full_tag = "full_" + std::to_string(seed);
    const std::string off_tag = "off_" + std::to_string(seed);
    if (!lab.pipeline(seed, false, full_tag)) {
      runs_ok = false;
      break;
    }
    if (seed == seeds.front()) seed1_seconds = seconds_since(ts);
    if (!lab.pipeline(seed, true, off_tag)) {
      runs_ok = false;
      break;
    }
    full.push_back(lab.metrics(full_tag));
    off.push_back(lab.metrics(off_tag));
  }

  if (!runs_ok) {
    const std::string detail =
        "a pipeline command failed; see acceptance_work/*.log";
    report(false, 5, "trained-embedding quality", detail);
    report(false, 6, "contrastive-term ablation direction", detail);
    report(false, 8, "pipeline determinism", detail);
    return;
  }

  // --- check 5: correlation and ranking consistency of the full model,
  // and the loss-off baseline trailing it on every seed ---
  {
    std::ostringstream detail;
    bool ok = true;
    const SeedMetrics& lead = full.front();
    ok &= lead.defined && lead.pearson_r >= kPearsonMin &&
          lead.pearson_t >= kPearsonMin;
    ok &= lead.rank_r >= kRankConsMin && lead.rank_t >= kRankConsMin;
    detail << "seed 1 held-out pearson R " << lead.pearson_r << " / t "
           << lead.pearson_t << " (min " << kPearsonMin
           << "), ranking consistency R " << lead.rank_r << " / t "
           << lead.rank_t << " (min " << kRankConsMin << ")";
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const bool beats = full[i].defined && off[i].defined &&
                         full[i].pearson_r > off[i].pearson_r &&
                         full[i].pearson_t > off[i].pearson_t;
      ok &= beats;
      detail << "; seed " << seeds[i] << " full vs off pearson (R "
             << full[i].pearson_r << " vs " << off[i].pearson_r << ", t "
             << full[i].pearson_t << " vs " << off[i].pearson_t << ")"
             << (beats ? "" : " NOT AHEAD");
    }
    ok &= seed1_seconds < 900.0;
    detail << "; full-model run " << fmt_seconds(seed1_seconds)
           << " s (budget 900 s)";
    report(ok, 5, "trained-embedding quality", detail.str());
  }

  // --- check 6: mean 10deg5cm precision with the contrastive terms on vs
  // off, averaged over the seeds, plus the merged comparison table ---
  {
    double full_avg = 0.0, off_avg = 0.0;
    std::string inputs;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      full_avg += full[i].p10d5 / static_cast<double>(seeds.size());
      off_avg += off[i].p10d5 / static_cast<double>(seeds.size());
      inputs += " " + lab.path("full_" + std::to_string(seeds[i]) +
                               "_eval_metrics.csv");
      inputs += " " + lab.path("off_" + std::to_string(seeds[i]) +
                               "_eval_metrics.csv");
    }
    const std::string table = lab.path("comparison.csv");
    const bool table_ok =
        lab.sh(lab.cli() + " report --out " + table + inputs, "report.log") ==
        0;
    const bool ok = table_ok && full_avg >= off_avg;
    std::ostringstream detail;
    detail << "mean 10deg5cm precision over 3 seeds: full " << full_avg
           << " vs off " << off_avg << (table_ok ? "" : "; report failed")
           << "; table " << table;
    report(ok, 6, "contrastive-term ablation direction", detail.str());
    if (table_ok) {
      std::istringstream is(slurp(table));
      for (std::string line; std::getline(is, line);)
        std::cout << "    " << line << "\n";
    }
  }

  // --- check 8: the seed-1 full pipeline repeated from scratch must
  // reproduce every artifact byte for byte ---
  {
    const auto t8 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string mismatches;
    const std::string rerun_data = lab.path("rerun_data.jsonl");
    const std::string rerun_test = lab.path("rerun_test.jsonl");
    ok &= lab.sh(lab.cli() + " gen-data --set seed=1 --out " + rerun_data,
                 "rerun_gen.log") == 0;
    ok &= lab.sh(lab.cli() + " gen-data --set seed=1001" +
                     " --set gen.samples_per_category=50 --out " + rerun_test,
                 "rerun_gen_test.log") == 0;
    ok &= lab.sh(lab.cli() +
                     " train --set seed=1 --set train.steps=4000 --data " +
                     rerun_data + " --out-prefix " + lab.path("rerun"),
                 "rerun_train.log") == 0;
    ok &= lab.sh(lab.cli() +
                     " eval --set seed=1 --set train.steps=4000 --data " +
                     rerun_test + " --checkpoint " + lab.path("rerun.ckpt") +
                     " --out-prefix " + lab.path("rerun_eval"),
                 "rerun_eval.log") == 0;
    const std::vector<std::pair<std::string, std::string>> artifacts = {
        {"data_1.jsonl", "rerun_data.jsonl"},
        {"test_1.jsonl", "rerun_test.jsonl"},
        {"full_1.ckpt", "rerun.ckpt"},
        {"full_1_train.csv", "rerun_train.csv"},
        {"full_1_eval_metrics.csv", "rerun_eval_metrics.csv"},
        {"full_1_eval_scatter_R.csv", "rerun_eval_scatter_R.csv"},
        {"full_1_eval_scatter_t.csv", "rerun_eval_scatter_t.csv"}};
    for (const auto& [a, b] : artifacts) {
      if (slurp(lab.path(a)) != slurp(lab.path(b))) {
        ok = false;
        mismatches += " " + a;
      }
    }
    const double dt = seconds_since(t8);
    std::ostringstream detail;
    detail << artifacts.size()
           << " artifacts byte-compared across two identical-seed runs"
           << (mismatches.empty() ? "" : "; mismatch:" + mismatches) << "; "
           << fmt_seconds(dt) << " s (budget 1800 s)";
    report(ok && dt < 1800.0, 8, "pipeline determinism", detail.str());
  }

  std::cout << "    training checks total: " << fmt_seconds(seconds_since(t0))
            << " s\n";
}

}  // namespace

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "all";
  const std::string cli_path = argc > 2 ? argv[2] : "";
  const bool fast = mode == "fast" || mode == "all";
  const bool training = mode == "training" || mode == "all";
  if (!fast && !training) {
    std::cerr << "usage: acceptance [fast|training|all] [cli-path]\n";
    return 2;
  }
  if (training && cli_path.empty()) {
    std::cerr << "the training checks need the command-line binary's path\n";
    return 2;
  }

  if (fast) {
    check_loss_oracle();
    check_gradients();
    check_negative_sets();
    check_rnc_reduction();
    check_metric_units();
    check_scheduler_optimizer();
  }
  if (training) check_training(cli_path);

  std::cout << "acceptance: " << (g_failures == 0 ? "all checks passed"
                                                  : std::to_string(g_failures) +
                                                        " check(s) failed")
            << "\n";
  return g_failures;
}
