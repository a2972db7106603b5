#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "poserank/config.hpp"

namespace poserank::cli {

// Command-line front end: one binary, seven subcommands, one JSON config.
// Every command resolves defaults <- --config file <- --set overrides, echoes
// the resolved tree, and writes it beside its outputs so any artifact can be
// regenerated from the sidecar alone.  Exit codes: 0 success, 1 usage error,
// 2 data error, 3 failed numeric check.

struct ParsedArgs {
  std::string command;
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;  // --set k=v
  std::map<std::string, std::string> options;                  // --flag value
  std::vector<std::string> positional;
  bool help = false;
};

namespace detail {

struct CommandSpec {
  const char* name;
  std::vector<const char*> required;  // value-taking flags that must appear
  std::vector<const char*> optional;  // value-taking flags that may appear
  bool positionals = false;           // accepts bare arguments
  bool config = true;                 // accepts --config / --set
  const char* usage;
  const char* blurb;
};

inline const std::vector<CommandSpec>& command_specs() {
  static const std::vector<CommandSpec> specs = {
      {"gen-data", {"--out"}, {}, false, true, "--out PATH",
       "write a synthetic dataset as JSON lines"},
      {"train",
       {"--data", "--out-prefix"},
       {"--resume"},
       false,
       true,
       "--data PATH --out-prefix P [--resume CKPT]",
       "train; writes P_train.csv, P.ckpt, P.config.json"},
      {"eval",
       {"--data", "--checkpoint", "--out-prefix"},
       {},
       false,
       true,
       "--data PATH --checkpoint CKPT --out-prefix P",
       "evaluate a checkpoint; writes P_metrics.csv, P_scatter_{R,t}.csv"},
      {"embed",
       {"--data", "--checkpoint", "--out"},
       {},
       false,
       true,
       "--data PATH --checkpoint CKPT --out PATH",
       "write per-sample global embeddings (f_R, f_t columns) as CSV"},
      {"grad-check", {}, {}, false, true, "",
       "finite-difference audit of the training graph; exit 3 on failure"},
      {"oracle-check", {}, {}, false, true, "",
       "brute-force audit of the ranking losses; exit 3 on failure"},
      {"report",
       {"--out"},
       {},
       true,
       false,
       "--out PATH METRICS.csv ...",
       "merge eval metric tables into one comparison table"},
  };
  return specs;
}

inline const CommandSpec* find_command(const std::string& name) {
  for (const CommandSpec& s : command_specs())
    if (name == s.name) return &s;
  return nullptr;
}

inline bool known_flag(const CommandSpec& spec, const std::string& flag) {
  for (const char* f : spec.required)
    if (flag == f) return true;
  for (const char* f : spec.optional)
    if (flag == f) return true;
  return false;
}

// Removes this run's files unless committed; keeps failed runs from leaving
// half-written outputs behind.
class OutputGuard {
 public:
  std::string track(std::string path) {
    paths_.push_back(path);
    return path;
  }
  void commit() { paths_.clear(); }
  ~OutputGuard() {
    for (const std::string& p : paths_) std::remove(p.c_str());
  }

 private:
  std::vector<std::string> paths_;
};

}  // namespace detail

inline std::string help_text() {
  std::string s =
      "poserank - synthetic 6D pose representation laboratory\n"
      "\n"
      "usage: poserank <command> [--config FILE] [--set KEY=VALUE ...] "
      "[flags]\n"
      "\n"
      "commands:\n";
  for (const auto& spec : detail::command_specs()) {
    s += "  " + std::string(spec.name);
    if (spec.usage[0] != '\0') s += " " + std::string(spec.usage);
    s += "\n      " + std::string(spec.blurb) + "\n";
  }
  s +=
      "\n"
      "All commands except report accept --config FILE (JSON, keys below)\n"
      "and repeated --set KEY=VALUE overrides (dotted keys, values parsed\n"
      "as JSON literals; applied after the file).  --flag=value is\n"
      "equivalent to --flag value.  When nothing sets `seed`, the HRC_SEED\n"
      "environment variable supplies it.  Every command echoes the resolved\n"
      "config and writes it beside its outputs as *.config.json.\n"
      "\n"
      "config defaults:\n" +
      to_json(RunConfig{}).dump(2) + "\n";
  return s;
}

// Deterministic argv walk.  Usage problems throw ErrKind::config.
inline ParsedArgs parse_args(const std::vector<std::string>& args) {
  ParsedArgs out;
  if (args.empty())
    throw Error(ErrKind::config, "missing command (run with --help for usage)");
  if (args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
    out.help = true;
    return out;
  }
  const detail::CommandSpec* spec = detail::find_command(args[0]);
  if (!spec) throw Error(ErrKind::config, "unknown command: " + args[0]);
  out.command = args[0];

  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string tok = args[i];
    if (tok == "--help" || tok == "-h") {
      out.help = true;
      return out;
    }
    // --flag=value form
    std::string inline_value;
    bool has_inline = false;
    if (tok.rfind("--", 0) == 0) {
      const std::size_t eq = tok.find('=');
      if (eq != std::string::npos) {
        inline_value = tok.substr(eq + 1);
        tok = tok.substr(0, eq);
        has_inline = true;
      }
    }
    auto value_of = [&]() -> std::string {
      if (has_inline) return inline_value;
      if (i + 1 >= args.size())
        throw Error(ErrKind::config, "flag " + tok + " expects a value");
      return args[++i];
    };
    if (tok == "--set") {
      if (!spec->config)
        throw Error(ErrKind::config,
                    "command " + out.command + " takes no --set overrides");
      const std::string kv = value_of();
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos || eq == 0)
        throw Error(ErrKind::config,
                    "malformed --set (expected KEY=VALUE): " + kv);
      out.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    } else if (tok == "--config") {
      if (!spec->config)
        throw Error(ErrKind::config,
                    "command " + out.command + " takes no --config");
      if (!out.config_path.empty())
        throw Error(ErrKind::config, "duplicate flag: --config");
      out.config_path = value_of();
    } else if (detail::known_flag(*spec, tok)) {
      if (out.options.count(tok))
        throw Error(ErrKind::config, "duplicate flag: " + tok);
      out.options[tok] = value_of();
    } else if (!tok.empty() && tok[0] == '-') {
      throw Error(ErrKind::config, "unknown flag: " + args[i]);
    } else {
      if (!spec->positionals)
        throw Error(ErrKind::config, "unexpected argument: " + tok);
      out.positional.push_back(tok);
    }
  }

  for (const char* req : spec->required)
    if (!out.options.count(req))
      throw Error(ErrKind::config, out.command + ": missing required flag " +
                                       std::string(req));
  if (spec->positionals && out.positional.empty())
    throw Error(ErrKind::config,
                out.command + ": expects at least one input file argument");
  return out;
}

inline int exit_code_for(ErrKind kind) {
  switch (kind) {
    case ErrKind::config: return 1;
    case ErrKind::numeric: return 3;
    default: return 2;
  }
}

namespace detail {

inline void log_resolved(std::ostream& out, const nlohmann::json& resolved) {
  out << "resolved config:\n" << resolved.dump(2) << "\n";
}

inline void write_config_sidecar(const std::string& path,
                                 const nlohmann::json& resolved) {
  poserank::detail::write_text(path, resolved.dump(2) + "\n");
}

inline void require_matching_arch(const EncoderConfig& ck,
                                  const EncoderConfig& cfg) {
  if (ck.n_points != cfg.n_points || ck.d != cfg.d ||
      ck.trunk_hidden != cfg.trunk_hidden || ck.head_hidden != cfg.head_hidden)
    throw Error(ErrKind::config,
                "checkpoint architecture does not match the encoder.* config; "
                "pass the run's config (or matching --set overrides)");
}

inline const std::vector<CategoryInfo>& builtin_table() {
  static const std::vector<CategoryInfo> table =
      category_info(default_categories());
  return table;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data / train / eval / embed
// ---------------------------------------------------------------------------

inline int run_gen_data(const ParsedArgs& a, std::ostream& out) {
  const auto [cfg, resolved] = load_run_config(a.config_path, a.overrides);
  detail::log_resolved(out, resolved);
  const std::string& path = a.options.at("--out");

  detail::OutputGuard guard;
  guard.track(path);
  guard.track(path + ".config.json");
  const std::vector<PoseSample> samples = generate_dataset(cfg.gen);
  write_dataset(samples, path);
  detail::write_config_sidecar(path + ".config.json", resolved);
  out << "gen-data: wrote " << samples.size() << " samples to " << path
      << "\n";
  guard.commit();
  return 0;
}

inline int run_train(const ParsedArgs& a, std::ostream& out) {
  const auto [cfg, resolved] = load_run_config(a.config_path, a.overrides);
  detail::log_resolved(out, resolved);
  const std::vector<PoseSample> dataset =
      read_dataset(a.options.at("--data"));

  TrainerCheckpoint resume_ck;
  const TrainerCheckpoint* resume = nullptr;
  if (a.options.count("--resume")) {
    resume_ck = load_checkpoint(a.options.at("--resume"));
    resume = &resume_ck;
  }

  const std::string prefix = a.options.at("--out-prefix");
  detail::OutputGuard guard;
  const std::string csv = guard.track(prefix + "_train.csv");
  const std::string ckpt = guard.track(prefix + ".ckpt");
  const std::string sidecar = guard.track(prefix + ".config.json");
  const TrainResult res =
      train(dataset, detail::builtin_table(), cfg.train, csv, ckpt, resume);
  detail::write_config_sidecar(sidecar, resolved);
  out << "train: " << res.steps_run << " steps on " << dataset.size()
      << " samples; mean loss " << poserank::detail::fmt(res.first_window_mean)
      << " (first 10%) -> " << poserank::detail::fmt(res.last_window_mean)
      << " (last 10%); final lr " << poserank::detail::fmt(res.sched.lr)
      << "\n"
      << "train: wrote " << csv << ", " << ckpt << "\n";
  guard.commit();
  return 0;
}

inline int run_eval(const ParsedArgs& a, std::ostream& out) {
  const auto [cfg, resolved] = load_run_config(a.config_path, a.overrides);
  detail::log_resolved(out, resolved);
  const std::vector<PoseSample> dataset =
      read_dataset(a.options.at("--data"));
  const TrainerCheckpoint ck = load_checkpoint(a.options.at("--checkpoint"));
  detail::require_matching_arch(ck.params.cfg, cfg.encoder);

  const ModelOutputs outputs = run_model(ck.params, dataset);
  CorrelationStats scatter;
  const EvalReport rep = build_eval_report(outputs, dataset,
                                           detail::builtin_table(), cfg.eval,
                                           &scatter);

  const std::string prefix = a.options.at("--out-prefix");
  detail::OutputGuard guard;
  guard.track(prefix + "_metrics.csv");
  guard.track(prefix + "_scatter_R.csv");
  guard.track(prefix + "_scatter_t.csv");
  const std::string sidecar = guard.track(prefix + ".config.json");
  export_report(rep, scatter, prefix);
  detail::write_config_sidecar(sidecar, resolved);

  using poserank::detail::corr_cell;
  using poserank::detail::fmt;
  out << "eval: " << rep.total_samples << " samples; mean prec_10deg_5cm "
      << fmt(rep.mean.p10d5) << ", mean iou_prec_50 " << fmt(rep.mean.iou50)
      << "\n"
      << "eval: pearson_R "
      << corr_cell(rep.corr_r.pearson, rep.corr_r.defined) << ", pearson_t "
      << corr_cell(rep.corr_t.pearson, rep.corr_t.defined)
      << ", ranking_consistency_R " << fmt(rep.ranking_r)
      << ", ranking_consistency_t " << fmt(rep.ranking_t) << "\n"
      << "eval: wrote " << prefix << "_metrics.csv and scatter files\n";
  guard.commit();
  return 0;
}

inline int run_embed(const ParsedArgs& a, std::ostream& out) {
  const auto [cfg, resolved] = load_run_config(a.config_path, a.overrides);
  detail::log_resolved(out, resolved);
  const std::vector<PoseSample> dataset =
      read_dataset(a.options.at("--data"));
  const TrainerCheckpoint ck = load_checkpoint(a.options.at("--checkpoint"));
  detail::require_matching_arch(ck.params.cfg, cfg.encoder);

  const ModelOutputs outputs = run_model(ck.params, dataset);
  const int d = ck.params.cfg.d;
  std::string csv = "index,category";
  for (int j = 0; j < d; ++j) csv += ",f_R_" + std::to_string(j);
  for (int j = 0; j < d; ++j) csv += ",f_t_" + std::to_string(j);
  csv += "\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    csv += std::to_string(i) + "," + std::to_string(dataset[i].category);
    for (int j = 0; j < d; ++j)
      csv += "," + poserank::detail::fmt(outputs.emb_r((Eigen::Index)i, j));
    for (int j = 0; j < d; ++j)
      csv += "," + poserank::detail::fmt(outputs.emb_t((Eigen::Index)i, j));
    csv += "\n";
  }

  const std::string& path = a.options.at("--out");
  detail::OutputGuard guard;
  guard.track(path);
  guard.track(path + ".config.json");
  poserank::detail::write_text(path, csv);
  detail::write_config_sidecar(path + ".config.json", resolved);
  out << "embed: wrote " << dataset.size() << " rows (D = " << d << ") to "
      << path << "\n";
  guard.commit();
  return 0;
}

// ---------------------------------------------------------------------------
// grad-check
// ---------------------------------------------------------------------------

// Audit sizes and tolerances.  Pinned here rather than configurable: the
// checks are the yardstick, not the experiment.
inline constexpr int kGradCheckCoords = 120;
inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTol = 1e-4;
inline constexpr int kOracleBatches = 100;
inline constexpr double kOracleTol = 1e-10;
inline constexpr int kOracleDim = 8;

// Rebuilds the exact training graph (encoder, heads, ranking losses, pose
// regression, total) at 64 bits on a small generated batch and compares
// reverse-mode gradients against central differences on randomly sampled
// parameter coordinates.
inline int run_grad_check(const ParsedArgs& a, std::ostream& out) {
  const auto [cfg, resolved] = load_run_config(a.config_path, a.overrides);
  detail::log_resolved(out, resolved);

  GenConfig gen = cfg.gen;
  gen.samples_per_category = 2;  // six samples, three categories
  const std::vector<PoseSample> samples = generate_dataset(gen);
  std::vector<int> indices(samples.size());
  for (std::size_t i = 0; i < indices.size(); ++i)
    indices[i] = static_cast<int>(i);
  const BatchTargets batch =
      assemble_batch(samples, indices, cfg.encoder.n_points);

  const ParamsT<double> params = init_params<double>(cfg.seed, cfg.encoder);
  Tape<double> tape;
  const ModelGraph<double> g =
      build_model_graph(tape, params, batch.points.cast<double>().eval());
  const int basic = build_basic_loss<double>(
      tape, g, batch.rx.cast<double>(), batch.ry.cast<double>(),
      batch.t.cast<double>(), batch.s.cast<double>(),
      batch.asym_mask.cast<double>());
  int total = -1;
  if (cfg.cl_off) {
    total = tape.weighted_sum({basic}, {cfg.train.lambda_basic});
  } else {
    const DistanceMatrices dm =
        distance_matrices(batch.poses, batch.categories,
                          detail::builtin_table(), cfg.cl.ignore_category);
    const ClLossNodes cl = build_cl_loss(tape, g.f_r, g.f_t, dm, cfg.cl);
    total = tape.weighted_sum({cl.cl_r, cl.cl_t, basic},
                              {1.0, 1.0, cfg.train.lambda_basic});
  }

  const FdReport rep =
      tape.finite_diff_check(total, kGradCheckCoords, kGradCheckStep, cfg.seed);
  const bool ok =
      rep.coords_checked >= kGradCheckCoords && rep.max_rel_error < kGradCheckTol;
  out << "grad-check: max relative error "
      << poserank::detail::fmt(rep.max_rel_error) << " over "
      << rep.coords_checked << " coordinates (tolerance "
      << poserank::detail::fmt(kGradCheckTol) << ", "
      << rep.coords_skipped << " non-smooth coordinates replaced)\n"
      << "grad-check: " << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 3;
}

// ---------------------------------------------------------------------------
// oracle-check
// ---------------------------------------------------------------------------

namespace detail {

struct OracleLosses {
  double joint_r = 0.0, joint_t = 0.0;
  double task_r = 0.0, task_t = 0.0;
  double cl_r = 0.0, cl_t = 0.0;
  int used_groups = 0;
};

// Deliberately naive transcription of the loss definition: explicit loops,
// plain exp/log, no shared code with the graph path.  Groups are formed in
// first-appearance order and need at least two members; each (anchor,
// positive) term is d_ij/tau + log sum over the ranked set of exp(-d_ik/tau),
// averaged over positives, anchors, then groups.
inline OracleLosses oracle_cl_loss(const Eigen::MatrixXd& f_r,
                                   const Eigen::MatrixXd& f_t,
                                   const std::vector<Pose>& poses,
                                   const std::vector<int>& cats,
                                   const std::vector<CategoryInfo>& table,
                                   const CLConfig& cfg) {
  const int n = static_cast<int>(poses.size());
  auto sym_of = [&](int cat) {
    for (const CategoryInfo& c : table)
      if (c.id == cat) return c.symmetric;
    throw Error(ErrKind::config, "oracle: unknown category id");
  };

  std::vector<std::vector<int>> groups;
  if (cfg.ignore_category) {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[(std::size_t)i] = i;
    if (n >= 2) groups.push_back(all);
  } else {
    std::vector<int> seen;
    for (int i = 0; i < n; ++i) {
      const int c = cats[(std::size_t)i];
      std::size_t slot = seen.size();
      for (std::size_t s = 0; s < seen.size(); ++s)
        if (seen[s] == c) slot = s;
      if (slot == seen.size()) {
        seen.push_back(c);
        groups.emplace_back();
      }
      groups[slot].push_back(i);
    }
    std::vector<std::vector<int>> kept;
    for (auto& g : groups)
      if (g.size() >= 2) kept.push_back(g);
    groups.swap(kept);
  }

  // a pair ranks by the symmetry-reduced rotation metric only when both
  // members allow it (within one category that means the category does)
  auto d_rot = [&](int i, int j) {
    const bool sym =
        sym_of(cats[(std::size_t)i]) && sym_of(cats[(std::size_t)j]);
    return rotation_distance(poses[(std::size_t)i], poses[(std::size_t)j],
                             sym);
  };
  auto d_tr = [&](int i, int j) {
    return translation_distance(poses[(std::size_t)i], poses[(std::size_t)j]);
  };
  auto f_dist = [](const Eigen::MatrixXd& f, int i, int j) {
    return (f.row(i) - f.row(j)).norm();
  };

  enum class Set { joint, rot, trans };
  auto loss_of = [&](const Eigen::MatrixXd& f, Set which) {
    if (groups.empty()) return 0.0;
    double group_sum = 0.0;
    for (const std::vector<int>& g : groups) {
      const int m = static_cast<int>(g.size());
      double anchor_sum = 0.0;
      for (int ii = 0; ii < m; ++ii) {
        const int i = g[(std::size_t)ii];
        double pos_sum = 0.0;
        for (int jj = 0; jj < m; ++jj) {
          if (jj == ii) continue;
          const int j = g[(std::size_t)jj];
          double den = 0.0;
          for (int kk = 0; kk < m; ++kk) {
            if (kk == ii) continue;
            const int k = g[(std::size_t)kk];
            const bool in_rot = d_rot(i, k) >= d_rot(i, j);
            const bool in_trans = d_tr(i, k) >= d_tr(i, j);
            const bool in = which == Set::joint ? (in_rot && in_trans)
                            : which == Set::rot ? in_rot
                                                : in_trans;
            if (in) den += std::exp(-f_dist(f, i, k) / cfg.tau);
          }
          pos_sum += f_dist(f, i, j) / cfg.tau + std::log(den);
        }
        anchor_sum += pos_sum / (m - 1);
      }
      group_sum += anchor_sum / m;
    }
    return group_sum / static_cast<double>(groups.size());
  };

  OracleLosses o;
  o.used_groups = static_cast<int>(groups.size());
  o.joint_r = loss_of(f_r, cfg.single_task ? Set::rot : Set::joint);
  o.joint_t = loss_of(f_t, cfg.single_task ? Set::trans : Set::joint);
  o.task_r = loss_of(f_r, Set::rot);
  o.task_t = loss_of(f_t, Set::trans);
  const double lam = cfg.joint_only ? 0.0 : cfg.lambda;
  o.cl_r = cfg.disable_joint ? lam * o.task_r : o.joint_r + lam * o.task_r;
  o.cl_t = cfg.disable_joint ? lam * o.task_t : o.joint_t + lam * o.task_t;
  return o;
}

inline Pose oracle_random_pose(Rng& rng) {
  const Eigen::Matrix3d r = sample_rotation(rng);
  Eigen::Vector3d t, s;
  for (int i = 0; i < 3; ++i) t[i] = rng.uniform(-0.3, 0.3);
  for (int i = 0; i < 3; ++i) s[i] = rng.uniform(0.1, 0.5);
  return pose_from_rotation(r, t, s);
}

}  // namespace detail

// Draws random small batches (4-8 samples, 2-3 categories, random poses and
// features) and compares every loss component of the graph implementation
// against the naive transcription above.
inline int run_oracle_check(const ParsedArgs& a, std::ostream& out) {
  const auto [cfg, resolved] = load_run_config(a.config_path, a.overrides);
  detail::log_resolved(out, resolved);
  const std::vector<CategoryInfo>& table = detail::builtin_table();

  double max_delta = 0.0;
  for (int b = 0; b < kOracleBatches; ++b) {
    Rng rng(cfg.seed, {kStreamEval, 0x6F7263, static_cast<std::uint64_t>(b)});
    const int n = 4 + static_cast<int>(rng.uniform_int(5));
    const int n_cats = 2 + static_cast<int>(rng.uniform_int(2));
    const std::vector<int> chosen =
        sample_without_replacement(rng, static_cast<int>(table.size()), n_cats);

    std::vector<Pose> poses;
    std::vector<int> cats;
    Eigen::MatrixXd f_r(n, kOracleDim), f_t(n, kOracleDim);
    for (int i = 0; i < n; ++i) {
      cats.push_back(table[(std::size_t)chosen[(std::size_t)rng.uniform_int(
                               n_cats)]].id);
      poses.push_back(detail::oracle_random_pose(rng));
      for (int j = 0; j < kOracleDim; ++j) f_r(i, j) = rng.normal();
      for (int j = 0; j < kOracleDim; ++j) f_t(i, j) = rng.normal();
    }

    const LossBreakdown m = cl_loss(f_r, f_t, poses, cats, table, cfg.cl);
    const detail::OracleLosses o =
        detail::oracle_cl_loss(f_r, f_t, poses, cats, table, cfg.cl);
    if (m.used_categories != o.used_groups) {
      out << "oracle-check: group count mismatch on batch " << b << " ("
          << m.used_categories << " vs " << o.used_groups << ")\n"
          << "oracle-check: FAIL\n";
      return 3;
    }
    const double deltas[] = {
        std::abs(m.joint_r - o.joint_r), std::abs(m.joint_t - o.joint_t),
        std::abs(m.task_r - o.task_r),   std::abs(m.task_t - o.task_t),
        std::abs(m.cl_r - o.cl_r),       std::abs(m.cl_t - o.cl_t)};
    for (double d : deltas) max_delta = std::max(max_delta, d);
  }

  const bool ok = max_delta < kOracleTol;
  out << "oracle-check: max loss deviation "
      << poserank::detail::fmt(max_delta) << " over " << kOracleBatches
      << " batches (tolerance " << poserank::detail::fmt(kOracleTol) << ")\n"
      << "oracle-check: " << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 3;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace detail {

inline std::string run_label(const std::string& path) {
  std::string base = path.substr(path.find_last_of('/') + 1);
  if (base.ends_with("_metrics.csv"))
    base.resize(base.size() - std::string("_metrics.csv").size());
  else if (base.ends_with(".csv"))
    base.resize(base.size() - 4);
  return base.empty() ? path : base;
}

}  // namespace detail

// Joins the mean rows of several eval metric tables into one table, one row
// per run.  Cells are copied verbatim, so formatting and any `undefined`
// correlation markers survive the merge.
inline int run_report(const ParsedArgs& a, std::ostream& out) {
  const std::string& path = a.options.at("--out");

  std::vector<std::string> expected;
  {
    std::string cell;
    std::istringstream ss{std::string(kMetricsHeader)};
    while (std::getline(ss, cell, ',')) expected.push_back(cell);
  }
  std::string merged = "run";
  for (std::size_t c = 2; c < expected.size(); ++c) merged += "," + expected[c];
  merged += "\n";

  for (const std::string& input : a.positional) {
    const MetricsTable t = read_metrics_csv(input);
    if (t.header != expected)
      throw Error(ErrKind::parse,
                  "unexpected metrics header in " + input +
                      " (not an eval metrics table?)");
    const std::vector<std::string>& mean = t.find_row("mean");
    merged += detail::run_label(input);
    for (std::size_t c = 2; c < mean.size(); ++c) merged += "," + mean[c];
    merged += "\n";
  }

  detail::OutputGuard guard;
  guard.track(path);
  guard.track(path + ".config.json");
  poserank::detail::write_text(path, merged);
  nlohmann::json sidecar;
  sidecar["command"] = "report";
  sidecar["inputs"] = a.positional;
  poserank::detail::write_text(path + ".config.json", sidecar.dump(2) + "\n");
  out << "report: merged " << a.positional.size() << " runs into " << path
      << "\n";
  guard.commit();
  return 0;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
  try {
    const ParsedArgs a = parse_args(args);
    if (a.help) {
      out << help_text();
      return 0;
    }
    if (a.command == "gen-data") return run_gen_data(a, out);
    if (a.command == "train") return run_train(a, out);
    if (a.command == "eval") return run_eval(a, out);
    if (a.command == "embed") return run_embed(a, out);
    if (a.command == "grad-check") return run_grad_check(a, out);
    if (a.command == "oracle-check") return run_oracle_check(a, out);
    if (a.command == "report") return run_report(a, out);
    err << "error: unknown command: " << a.command << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (e.kind() == ErrKind::config)
      err << "run with --help for usage\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace poserank::cli
