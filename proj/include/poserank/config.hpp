#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "poserank/error.hpp"
#include "poserank/evalkit.hpp"
#include "poserank/synthdata.hpp"
#include "poserank/trainer.hpp"

namespace poserank {

// One JSON document configures the whole pipeline.  The tree mirrors the
// module config structs; a single global seed feeds every stage (each stage
// derives its own streams from it).  Categories are the three built-in
// shapes and are not configurable here.
//
//   seed                      global seed; HRC_SEED env fallback when absent
//   gen.*                     dataset generation (GenConfig scalars)
//   encoder.*                 network architecture
//   cl.*                      contrastive loss + ablation toggles (cl.off
//                             drops the contrastive terms entirely)
//   train.*                   optimization; train.scheduler.* the plateau rule
//   eval.*                    evaluation sampling sizes
struct RunConfig {
  std::uint64_t seed = 42;
  GenConfig gen;
  EncoderConfig encoder;
  CLConfig cl;
  bool cl_off = false;
  TrainConfig train;  // encoder/cl/cl_off/seed filled from the fields above
  EvalSettings eval;
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["gen"] = {{"samples_per_category", c.gen.samples_per_category},
              {"n_points", c.gen.n_points},
              {"t_lo", c.gen.t_lo},
              {"t_hi", c.gen.t_hi},
              {"scale_lo", c.gen.scale_lo},
              {"scale_hi", c.gen.scale_hi},
              {"noise_sigma", c.gen.noise_sigma}};
  j["encoder"] = {{"n_points", c.encoder.n_points},
                  {"d", c.encoder.d},
                  {"trunk_hidden", c.encoder.trunk_hidden},
                  {"head_hidden", c.encoder.head_hidden}};
  j["cl"] = {{"tau", c.cl.tau},
             {"lambda", c.cl.lambda},
             {"disable_joint", c.cl.disable_joint},
             {"joint_only", c.cl.joint_only},
             {"single_task", c.cl.single_task},
             {"ignore_category", c.cl.ignore_category},
             {"off", c.cl_off}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"steps", c.train.steps},
                {"lr", c.train.lr},
                {"weight_decay", c.train.weight_decay},
                {"lambda_basic", c.train.lambda_basic},
                {"eval_interval", c.train.eval_interval},
                {"scheduler",
                 {{"patience", c.train.scheduler.patience},
                  {"factor", c.train.scheduler.factor},
                  {"min_lr", c.train.scheduler.min_lr},
                  {"threshold", c.train.scheduler.threshold}}}};
  j["eval"] = {{"mc_samples", c.eval.mc_samples},
               {"n_pairs", c.eval.n_pairs},
               {"n_triples", c.eval.n_triples}};
  return j;
}

namespace detail {

// Rejects any key the schema tree does not contain, recursing into nested
// sections; `where` accumulates the dotted path for the message.
inline void reject_unknown_keys(const nlohmann::json& input,
                                const nlohmann::json& schema,
                                const std::string& where) {
  if (!input.is_object())
    throw Error(ErrKind::config,
                "config section " + (where.empty() ? "(root)" : where) +
                    " must be an object");
  for (const auto& [key, value] : input.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!schema.contains(key))
      throw Error(ErrKind::config, "unknown config key: " + path);
    if (schema.at(key).is_object()) {
      reject_unknown_keys(value, schema.at(key), path);
    } else if (value.is_object()) {
      throw Error(ErrKind::config, "config key " + path + " is not a section");
    }
  }
}

// Leaf-wise overwrite of `base` by `input` (already schema-checked).
inline void merge_config(nlohmann::json& base, const nlohmann::json& input) {
  for (const auto& [key, value] : input.items()) {
    if (base.at(key).is_object())
      merge_config(base.at(key), value);
    else
      base.at(key) = value;
  }
}

template <class T>
T get_field(const nlohmann::json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrKind::config, "config value " + std::string(section) + "." +
                                     key + " has the wrong type: " + e.what());
  }
}

}  // namespace detail

// json -> RunConfig, with type checking; the tree must already be complete
// (built by merging onto the defaults).
inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrKind::config,
                std::string("config value seed has the wrong type: ") +
                    e.what());
  }
  c.gen.samples_per_category =
      detail::get_field<int>(j, "gen", "samples_per_category");
  c.gen.n_points = detail::get_field<int>(j, "gen", "n_points");
  c.gen.t_lo = detail::get_field<double>(j, "gen", "t_lo");
  c.gen.t_hi = detail::get_field<double>(j, "gen", "t_hi");
  c.gen.scale_lo = detail::get_field<double>(j, "gen", "scale_lo");
  c.gen.scale_hi = detail::get_field<double>(j, "gen", "scale_hi");
  c.gen.noise_sigma = detail::get_field<double>(j, "gen", "noise_sigma");
  c.gen.seed = c.seed;

  c.encoder.n_points = detail::get_field<int>(j, "encoder", "n_points");
  c.encoder.d = detail::get_field<int>(j, "encoder", "d");
  c.encoder.trunk_hidden =
      detail::get_field<std::vector<int>>(j, "encoder", "trunk_hidden");
  c.encoder.head_hidden = detail::get_field<int>(j, "encoder", "head_hidden");

  c.cl.tau = detail::get_field<double>(j, "cl", "tau");
  c.cl.lambda = detail::get_field<double>(j, "cl", "lambda");
  c.cl.disable_joint = detail::get_field<bool>(j, "cl", "disable_joint");
  c.cl.joint_only = detail::get_field<bool>(j, "cl", "joint_only");
  c.cl.single_task = detail::get_field<bool>(j, "cl", "single_task");
  c.cl.ignore_category = detail::get_field<bool>(j, "cl", "ignore_category");
  c.cl_off = detail::get_field<bool>(j, "cl", "off");

  c.train.batch_size = detail::get_field<int>(j, "train", "batch_size");
  c.train.steps = detail::get_field<int>(j, "train", "steps");
  c.train.lr = detail::get_field<double>(j, "train", "lr");
  c.train.weight_decay = detail::get_field<double>(j, "train", "weight_decay");
  c.train.lambda_basic = detail::get_field<double>(j, "train", "lambda_basic");
  c.train.eval_interval = detail::get_field<int>(j, "train", "eval_interval");
  const nlohmann::json& sch = j.at("train").at("scheduler");
  try {
    c.train.scheduler.patience = sch.at("patience").get<int>();
    c.train.scheduler.factor = sch.at("factor").get<double>();
    c.train.scheduler.min_lr = sch.at("min_lr").get<double>();
    c.train.scheduler.threshold = sch.at("threshold").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrKind::config,
                std::string("config value train.scheduler.* has the wrong "
                            "type: ") +
                    e.what());
  }
  c.train.encoder = c.encoder;
  c.train.cl = c.cl;
  c.train.cl_off = c.cl_off;
  c.train.seed = c.seed;

  c.eval.mc_samples = detail::get_field<int>(j, "eval", "mc_samples");
  c.eval.n_pairs = detail::get_field<int>(j, "eval", "n_pairs");
  c.eval.n_triples = detail::get_field<int>(j, "eval", "n_triples");
  c.eval.seed = c.seed;

  if (c.gen.n_points != c.encoder.n_points)
    throw Error(ErrKind::config,
                "gen.n_points and encoder.n_points must agree");
  validate(c.gen);
  validate(c.train);
  if (c.eval.mc_samples < 1 || c.eval.n_pairs < 2 || c.eval.n_triples < 1)
    throw Error(ErrKind::config, "eval sampling sizes must be positive");
  return c;
}

// One dotted-path override (--set key=value).  The path must name an existing
// leaf; the value is parsed as a JSON literal (number, bool, array) and falls
// back to a plain string.
inline void apply_override(nlohmann::json& j, const std::string& key,
                           const std::string& value) {
  std::vector<std::string> parts;
  std::istringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty() || key.empty() || key.front() == '.' || key.back() == '.')
    throw Error(ErrKind::config, "malformed override key: " + key);

  nlohmann::json* node = &j;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i]))
      throw Error(ErrKind::config, "unknown config key: " + key);
    node = &node->at(parts[i]);
  }
  if (!node->is_object() || !node->contains(parts.back()))
    throw Error(ErrKind::config, "unknown config key: " + key);
  nlohmann::json& leaf = node->at(parts.back());
  if (leaf.is_object())
    throw Error(ErrKind::config,
                "config key " + key + " is a section, not a value");
  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;  // plain string
  leaf = std::move(parsed);
}

// Builds the resolved config tree: defaults <- config file <- overrides,
// with the HRC_SEED environment variable supplying the seed when nothing
// names one explicitly.  Returns the RunConfig and the resolved JSON (the
// log/echo form).  Config-file problems are usage errors (ErrKind::config).
inline std::pair<RunConfig, nlohmann::json> load_run_config(
    const std::string& config_path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  nlohmann::json j = to_json(RunConfig{});
  bool seed_explicit = false;

  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is)
      throw Error(ErrKind::config, "cannot read config file: " + config_path);
    nlohmann::json input;
    try {
      is >> input;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrKind::config,
                  "config file " + config_path + " is not valid JSON: " +
                      e.what());
    }
    detail::reject_unknown_keys(input, j, "");
    detail::merge_config(j, input);
    seed_explicit = input.contains("seed");
  }
  for (const auto& [key, value] : overrides) {
    apply_override(j, key, value);
    seed_explicit = seed_explicit || key == "seed";
  }
  if (!seed_explicit) {
    if (const char* env = std::getenv("HRC_SEED")) {
      try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument(env);
        j["seed"] = static_cast<std::uint64_t>(v);
      } catch (const std::exception&) {
        throw Error(ErrKind::config,
                    std::string("HRC_SEED is not an unsigned integer: ") + env);
      }
    }
  }
  return {config_from_json(j), j};
}

}  // namespace poserank
