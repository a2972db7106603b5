#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "poserank/diffcore.hpp"
#include "poserank/encoder.hpp"
#include "poserank/error.hpp"
#include "poserank/hrcl.hpp"
#include "poserank/rng.hpp"
#include "poserank/synthdata.hpp"

namespace poserank {

// Training loop: per-step seeded batches, one forward/backward pass through
// the stacked-batch graph, AdamW with decoupled weight decay, and a
// reduce-on-plateau schedule over interval-averaged loss.  Every stochastic
// choice derives from (seed, step), so a run is a pure function of its
// configuration and dataset — two runs with the same inputs produce
// bitwise-identical parameters, and a checkpoint restores mid-run state
// exactly.

struct SchedulerConfig {
  int patience = 10;        // non-improving windows tolerated before a cut
  double factor = 0.5;      // multiplicative learning-rate cut
  double min_lr = 1e-6;     // floor
  double threshold = 1e-4;  // relative improvement that resets the counter
};

struct TrainConfig {
  EncoderConfig encoder;
  CLConfig cl;
  bool cl_off = false;  // ablation: drop the contrastive terms entirely

  int batch_size = 16;
  int steps = 1000;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  double lambda_basic = 1.0;  // weight of the pose-regression term
  SchedulerConfig scheduler;
  int eval_interval = 50;  // scheduler window, in steps
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& cfg) {
  validate(cfg.cl);
  if (cfg.batch_size < 2)
    throw Error(ErrKind::config, "batch_size must be at least 2");
  if (cfg.steps < 1) throw Error(ErrKind::config, "steps must be positive");
  // lr == 0 is allowed (freezes parameters; useful for determinism checks)
  if (!(cfg.lr >= 0.0))
    throw Error(ErrKind::config, "learning rate must be nonnegative");
  if (!(cfg.weight_decay >= 0.0))
    throw Error(ErrKind::config, "weight decay must be nonnegative");
  if (!(cfg.lambda_basic >= 0.0))
    throw Error(ErrKind::config, "regression weight must be nonnegative");
  if (cfg.scheduler.patience < 1)
    throw Error(ErrKind::config, "scheduler patience must be positive");
  if (!(cfg.scheduler.factor > 0.0 && cfg.scheduler.factor < 1.0))
    throw Error(ErrKind::config, "scheduler factor must be in (0, 1)");
  if (!(cfg.scheduler.min_lr >= 0.0))
    throw Error(ErrKind::config, "scheduler min_lr must be nonnegative");
  if (!(cfg.scheduler.threshold >= 0.0))
    throw Error(ErrKind::config, "scheduler threshold must be nonnegative");
  if (cfg.eval_interval < 1)
    throw Error(ErrKind::config, "eval interval must be positive");
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct OptimizerState {
  std::vector<Eigen::MatrixXf> m, v;  // first/second moments, params order
  std::int64_t t = 0;                 // completed update count

  static OptimizerState zeros_like(const Params& params) {
    OptimizerState s;
    params.for_each_array([&](const Eigen::MatrixXf& a) {
      s.m.push_back(Eigen::MatrixXf::Zero(a.rows(), a.cols()));
      s.v.push_back(Eigen::MatrixXf::Zero(a.rows(), a.cols()));
    });
    return s;
  }
};

// One decoupled-weight-decay Adam update: parameters are first scaled by
// (1 - lr*wd), then moved by the bias-corrected moment step.  All arithmetic
// in float, fixed order.
inline void adamw_update(Params& params,
                         const std::vector<Eigen::MatrixXf>& grads,
                         OptimizerState& opt, double lr, double weight_decay) {
  const std::size_t n_arrays = opt.m.size();
  if (grads.size() != n_arrays)
    throw Error(ErrKind::shape, "adamw_update: gradient/parameter count mismatch");
  ++opt.t;
  const float b1 = static_cast<float>(kAdamBeta1);
  const float b2 = static_cast<float>(kAdamBeta2);
  const float corr1 =
      1.0f - std::pow(b1, static_cast<float>(opt.t));
  const float corr2 =
      1.0f - std::pow(b2, static_cast<float>(opt.t));
  const float flr = static_cast<float>(lr);
  const float decay = 1.0f - static_cast<float>(lr * weight_decay);
  std::size_t i = 0;
  params.for_each_array([&](Eigen::MatrixXf& p) {
    const Eigen::MatrixXf& g = grads[i];
    Eigen::MatrixXf& m = opt.m[i];
    Eigen::MatrixXf& v = opt.v[i];
    if (g.rows() != p.rows() || g.cols() != p.cols())
      throw Error(ErrKind::shape, "adamw_update: gradient shape mismatch");
    m = b1 * m + (1.0f - b1) * g;
    v = (b2 * v.array() + (1.0f - b2) * g.array().square()).matrix();
    p *= decay;
    p.array() -= flr * (m.array() / corr1) /
                 ((v.array() / corr2).sqrt() + static_cast<float>(kAdamEps));
    ++i;
  });
}

// ---------------------------------------------------------------------------
// Plateau scheduler
// ---------------------------------------------------------------------------

struct SchedulerState {
  double lr = 1e-3;
  double best = std::numeric_limits<double>::infinity();
  int bad_count = 0;
};

// Feeds one monitored value; returns the (possibly reduced) learning rate.
// An improvement is a drop of more than `threshold` relative to the best
// seen; `patience` consecutive non-improvements halve the rate (by
// `factor`), floored at min_lr, and restart the count.
inline double plateau_step(SchedulerState& s, double monitored,
                           const SchedulerConfig& cfg) {
  if (!std::isfinite(monitored))
    throw Error(ErrKind::numeric, "plateau_step: monitored loss not finite");
  if (monitored < s.best * (1.0 - cfg.threshold)) {
    s.best = monitored;
    s.bad_count = 0;
  } else {
    ++s.bad_count;
    if (s.bad_count >= cfg.patience) {
      s.lr = std::max(s.lr * cfg.factor, cfg.min_lr);
      s.bad_count = 0;
    }
  }
  return s.lr;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Per-sample pose-regression loss: axis misalignment (the in-plane axis term
// is dropped for symmetric categories), plus L1 translation and size errors.
inline double basic_pose_loss(const Pose& pred, const Pose& gt,
                              bool symmetric) {
  validate_pose(pred);
  validate_pose(gt);
  const double rx_term = symmetric ? 0.0 : 1.0 - pred.r_x.dot(gt.r_x);
  const double ry_term = 1.0 - pred.r_y.dot(gt.r_y);
  return rx_term + ry_term + (pred.t - gt.t).cwiseAbs().sum() +
         (pred.s - gt.s).cwiseAbs().sum();
}

// Ground-truth arrays for one batch, stacked one row per sample.
struct BatchTargets {
  Eigen::MatrixXf points;                    // (B*Np) x 3
  Eigen::MatrixXf rx, ry, t, s;              // B x 3 each
  Eigen::MatrixXf asym_mask;                 // B x 1 (0 for symmetric)
  std::vector<Pose> poses;
  std::vector<int> categories;
};

inline BatchTargets assemble_batch(const std::vector<PoseSample>& dataset,
                                   const std::vector<int>& indices,
                                   int n_points) {
  BatchTargets b;
  const int n = static_cast<int>(indices.size());
  b.points.resize(n * n_points, 3);
  b.rx.resize(n, 3);
  b.ry.resize(n, 3);
  b.t.resize(n, 3);
  b.s.resize(n, 3);
  b.asym_mask.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    const PoseSample& smp = dataset[static_cast<std::size_t>(indices[(size_t)i])];
    if (smp.points.rows() != n_points)
      throw Error(ErrKind::shape, "assemble_batch: sample point count mismatch");
    b.points.middleRows(i * n_points, n_points) = smp.points.cast<float>();
    b.rx.row(i) = smp.pose.r_x.cast<float>().transpose();
    b.ry.row(i) = smp.pose.r_y.cast<float>().transpose();
    b.t.row(i) = smp.pose.t.cast<float>().transpose();
    b.s.row(i) = smp.pose.s.cast<float>().transpose();
    b.asym_mask(i, 0) = smp.symmetric ? 0.0f : 1.0f;
    b.poses.push_back(smp.pose);
    b.categories.push_back(smp.category);
  }
  return b;
}

// Graph nodes of the batch-mean regression loss, matching basic_pose_loss
// sample by sample.
template <class S>
int build_basic_loss(Tape<S>& tape, const ModelGraph<S>& g,
                     const typename Tape<S>::Mat& gt_rx,
                     const typename Tape<S>::Mat& gt_ry,
                     const typename Tape<S>::Mat& gt_t,
                     const typename Tape<S>::Mat& gt_s,
                     const typename Tape<S>::Mat& asym_mask) {
  const int nrx = tape.input(gt_rx);
  const int nry = tape.input(gt_ry);
  const int nt = tape.input(gt_t);
  const int ns = tape.input(gt_s);
  const int mask = tape.input(asym_mask);
  const int rx_misfit = tape.add_const(
      tape.scale(tape.row_sum(tape.mul(g.rx, nrx)), S(-1)), S(1));
  const int ry_misfit = tape.add_const(
      tape.scale(tape.row_sum(tape.mul(g.ry, nry)), S(-1)), S(1));
  const int rot = tape.add(tape.mul(mask, rx_misfit), ry_misfit);
  const int t_l1 = tape.row_sum(tape.elem_abs(tape.sub(g.t, nt)));
  const int s_l1 = tape.row_sum(tape.elem_abs(tape.sub(g.s, ns)));
  return tape.mean_all(tape.add(rot, tape.add(t_l1, s_l1)));
}

// ---------------------------------------------------------------------------
// Train step and loop
// ---------------------------------------------------------------------------

struct StepBreakdown {
  double total = 0.0;   // recomposed in double from the parts below
  double cl_r = 0.0, cl_t = 0.0, basic = 0.0;
  int used_categories = 0;
};

inline std::vector<int> batch_indices(std::uint64_t seed, int step,
                                      int dataset_size, int batch_size) {
  Rng rng(seed, {kStreamBatch, static_cast<std::uint64_t>(step)});
  return sample_without_replacement(rng, dataset_size,
                                    std::min(batch_size, dataset_size));
}

// One optimization step on the given batch.  Deterministic given
// (params, opt, batch, cfg).  A non-finite loss aborts with the step's
// batch derivation so the offending draw can be replayed.
inline StepBreakdown train_step(Params& params, OptimizerState& opt,
                                const std::vector<PoseSample>& dataset,
                                const std::vector<int>& indices, int step,
                                double lr, const TrainConfig& cfg,
                                const std::vector<CategoryInfo>& table) {
  const BatchTargets batch =
      assemble_batch(dataset, indices, cfg.encoder.n_points);

  Tape<float> tape;
  const ModelGraph<float> g = build_model_graph(tape, params, batch.points);
  const int basic = build_basic_loss(tape, g, batch.rx, batch.ry, batch.t,
                                     batch.s, batch.asym_mask);
  StepBreakdown out;
  int total = -1;
  int cl_r_node = -1, cl_t_node = -1;
  if (cfg.cl_off) {
    total = tape.weighted_sum({basic}, {static_cast<float>(cfg.lambda_basic)});
  } else {
    const DistanceMatrices dm = distance_matrices(
        batch.poses, batch.categories, table, cfg.cl.ignore_category);
    const ClLossNodes cl = build_cl_loss(tape, g.f_r, g.f_t, dm, cfg.cl);
    out.used_categories = cl.used_categories;
    cl_r_node = cl.cl_r;
    cl_t_node = cl.cl_t;
    total = tape.weighted_sum({cl.cl_r, cl.cl_t, basic},
                              {1.0f, 1.0f, static_cast<float>(cfg.lambda_basic)});
  }
  tape.evaluate();
  if (cl_r_node >= 0) {
    out.cl_r = static_cast<double>(tape.value(cl_r_node)(0, 0));
    out.cl_t = static_cast<double>(tape.value(cl_t_node)(0, 0));
  }
  out.basic = static_cast<double>(tape.value(basic)(0, 0));
  out.total = out.cl_r + out.cl_t + cfg.lambda_basic * out.basic;

  if (!std::isfinite(out.total))
    throw Error(ErrKind::numeric,
                "train_step: non-finite loss at step " + std::to_string(step) +
                    " (batch stream seed " + std::to_string(cfg.seed) +
                    ", stream tag " + std::to_string(step) + ")");

  tape.gradients(total);
  std::vector<Eigen::MatrixXf> grads;
  grads.reserve(g.params.size());
  for (int node : g.params) grads.push_back(tape.grad(node));
  adamw_update(params, grads, opt, lr, cfg.weight_decay);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace detail {

inline void write_f32_le(std::ofstream& os, const Eigen::MatrixXf& m) {
  // column-major traversal, 32-bit little-endian (native here; asserted in
  // the build for portability of the format)
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(float) * (std::size_t)m.size()));
}

inline void read_f32_le(std::ifstream& is, Eigen::MatrixXf& m,
                        const std::string& path) {
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(float) * (std::size_t)m.size()));
  if (!is)
    throw Error(ErrKind::io, "checkpoint truncated: " + path);
}

}  // namespace detail

struct TrainerCheckpoint {
  Params params;
  OptimizerState opt;
  SchedulerState sched;
  int step = 0;               // completed steps
  double window_sum = 0.0;    // partial scheduler-window accumulator
  int window_count = 0;
};

// Layout: one JSON header line (version, widths, counts, optimizer/scheduler
// scalars printed with full round-trip precision), then the parameter
// arrays, then first and second moments, all flat 32-bit little-endian in
// the fixed parameter traversal order.
inline void save_checkpoint(const TrainerCheckpoint& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrKind::io, "cannot write checkpoint: " + path);
  nlohmann::json j;
  j["v"] = ParamsT<float>::kVersion;
  j["n_points"] = ck.params.cfg.n_points;
  j["d"] = ck.params.cfg.d;
  j["trunk_hidden"] = ck.params.cfg.trunk_hidden;
  j["head_hidden"] = ck.params.cfg.head_hidden;
  j["step"] = ck.step;
  j["opt_t"] = ck.opt.t;
  j["lr"] = ck.sched.lr;
  // a fresh scheduler's best is +infinity, which JSON cannot spell; nlohmann
  // serializes it as null and the loader maps null back
  j["best"] = ck.sched.best;
  j["bad_count"] = ck.sched.bad_count;
  j["window_sum"] = ck.window_sum;
  j["window_count"] = ck.window_count;
  os << j.dump() << '\n';
  ck.params.for_each_array(
      [&](const Eigen::MatrixXf& m) { detail::write_f32_le(os, m); });
  for (const auto& m : ck.opt.m) detail::write_f32_le(os, m);
  for (const auto& v : ck.opt.v) detail::write_f32_le(os, v);
  if (!os) throw Error(ErrKind::io, "checkpoint write failed: " + path);
}

inline TrainerCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrKind::io, "cannot read checkpoint: " + path);
  std::string header;
  if (!std::getline(is, header))
    throw Error(ErrKind::io, "checkpoint truncated: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrKind::parse,
                "checkpoint header unreadable: " + std::string(e.what()));
  }
  if (!j.contains("v") || !j["v"].is_number_integer() ||
      j["v"].get<int>() != ParamsT<float>::kVersion)
    throw Error(ErrKind::version, "checkpoint version unsupported in " + path);

  TrainerCheckpoint ck;
  EncoderConfig cfg;
  try {
    cfg.n_points = j.at("n_points").get<int>();
    cfg.d = j.at("d").get<int>();
    cfg.trunk_hidden = j.at("trunk_hidden").get<std::vector<int>>();
    cfg.head_hidden = j.at("head_hidden").get<int>();
    ck.step = j.at("step").get<int>();
    ck.opt.t = j.at("opt_t").get<std::int64_t>();
    ck.sched.lr = j.at("lr").get<double>();
    ck.sched.best = j.at("best").is_null()
                        ? std::numeric_limits<double>::infinity()
                        : j.at("best").get<double>();
    ck.sched.bad_count = j.at("bad_count").get<int>();
    ck.window_sum = j.at("window_sum").get<double>();
    ck.window_count = j.at("window_count").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrKind::parse,
                "checkpoint header missing fields: " + std::string(e.what()));
  }
  // allocate by config, then fill from the flat arrays
  const std::int64_t opt_t = ck.opt.t;  // parsed from the header above
  ck.params = init_params<float>(0, cfg);
  ck.params.for_each_array(
      [&](Eigen::MatrixXf& m) { detail::read_f32_le(is, m, path); });
  ck.opt = OptimizerState::zeros_like(ck.params);
  ck.opt.t = opt_t;
  for (auto& m : ck.opt.m) detail::read_f32_le(is, m, path);
  for (auto& v : ck.opt.v) detail::read_f32_le(is, v, path);
  is.peek();
  if (!is.eof())
    throw Error(ErrKind::parse, "checkpoint has trailing bytes: " + path);
  return ck;
}

// ---------------------------------------------------------------------------
// Full loop
// ---------------------------------------------------------------------------

struct TrainResult {
  Params params;
  SchedulerState sched;
  int steps_run = 0;
  double first_window_mean = 0.0;  // mean loss over the first 10% of steps
  double last_window_mean = 0.0;   // mean loss over the last 10% of steps
};

// Runs cfg.steps optimization steps (continuing from `resume`, when given,
// for cfg.steps total), logging one CSV row per step and saving a final
// checkpoint.  Empty paths skip the corresponding output.
inline TrainResult train(const std::vector<PoseSample>& dataset,
                         const std::vector<CategoryInfo>& table,
                         const TrainConfig& cfg, const std::string& csv_path,
                         const std::string& checkpoint_path,
                         const TrainerCheckpoint* resume = nullptr) {
  validate(cfg);
  if (dataset.empty())
    throw Error(ErrKind::shape, "train: dataset is empty");
  if (static_cast<int>(dataset.size()) < cfg.batch_size)
    throw Error(ErrKind::config, "train: dataset smaller than one batch");

  TrainerCheckpoint ck;
  if (resume) {
    const EncoderConfig& rc = resume->params.cfg;
    if (rc.n_points != cfg.encoder.n_points || rc.d != cfg.encoder.d ||
        rc.trunk_hidden != cfg.encoder.trunk_hidden ||
        rc.head_hidden != cfg.encoder.head_hidden)
      throw Error(ErrKind::config,
                  "train: resume checkpoint architecture does not match config");
    ck = *resume;
  } else {
    ck.params = init_params<float>(cfg.seed, cfg.encoder);
    ck.opt = OptimizerState::zeros_like(ck.params);
    ck.sched.lr = cfg.lr;
  }

  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path, std::ios::trunc);
    if (!csv) throw Error(ErrKind::io, "cannot write training log: " + csv_path);
    csv << "step,lr,loss_total,loss_cl_R,loss_cl_t,loss_basic\n";
  }

  const int first_region = std::max(1, cfg.steps / 10);
  double first_sum = 0.0, last_sum = 0.0;
  int first_n = 0, last_n = 0;

  TrainResult res;
  const int end_step = ck.step + cfg.steps;
  for (int step = ck.step + 1; step <= end_step; ++step) {
    const std::vector<int> idx = batch_indices(
        cfg.seed, step, static_cast<int>(dataset.size()), cfg.batch_size);
    const double lr_used = ck.sched.lr;
    const StepBreakdown b = train_step(ck.params, ck.opt, dataset, idx, step,
                                       lr_used, cfg, table);
    ck.step = step;
    ck.window_sum += b.total;
    ++ck.window_count;
    if (ck.window_count == cfg.eval_interval) {
      plateau_step(ck.sched, ck.window_sum / ck.window_count, cfg.scheduler);
      ck.window_sum = 0.0;
      ck.window_count = 0;
    }
    if (csv.is_open()) {
      char row[256];
      std::snprintf(row, sizeof(row), "%d,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                    step, lr_used, b.total, b.cl_r, b.cl_t, b.basic);
      csv << row;
    }
    const int rel = step - (end_step - cfg.steps);  // 1-based within this run
    if (rel <= first_region) {
      first_sum += b.total;
      ++first_n;
    }
    if (rel > cfg.steps - first_region) {
      last_sum += b.total;
      ++last_n;
    }
  }
  if (csv.is_open() && !csv)
    throw Error(ErrKind::io, "training log write failed: " + csv_path);

  if (!checkpoint_path.empty()) save_checkpoint(ck, checkpoint_path);
  res.params = ck.params;
  res.sched = ck.sched;
  res.steps_run = cfg.steps;
  res.first_window_mean = first_n ? first_sum / first_n : 0.0;
  res.last_window_mean = last_n ? last_sum / last_n : 0.0;
  return res;
}

}  // namespace poserank
