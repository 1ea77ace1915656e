// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration (JSON). Unknown keys are rejected; every field has
// a default, and the resolved form is written next to each run.
//
// {
//   "env":       {"vocab_size", "horizon", "answer_space", "reward_rule",
//                 "num_queries", "window", "pivot", "lock_length"},
//   "estimator": {"variant", "alpha", "evidence_clip", "norm_eps",
//                 "surrogate_clip", "oracle_mode", "teacher"},
//   "trainer":   {"lr", "steps", "inner_epochs", "group_size",
//                 "queries_per_step", "oracle_fit_rate", "seeds"},
//   "output_dir": "runs/example",
//   "workers": 0,
//   "sweep":     {"evidence_clip": [..], "alpha": [..], "group_size": [..], "variant": [..]}
// }
//
// "teacher" is "ideal" or a policy-table path, resolved against the config file's directory.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "oppo/env.hpp"
#include "oppo/error.hpp"
#include "oppo/evidence.hpp"
#include "oppo/trainer.hpp"

namespace oppo {

struct SweepAxes {
  std::vector<double> evidence_clip;
  std::vector<double> alpha;
  std::vector<int> group_size;
  std::vector<Variant> variant;

  bool empty() const { return evidence_clip.empty() && alpha.empty() && group_size.empty() && variant.empty(); }
};

struct ExperimentConfig {
  EnvSpec env;
  EstimatorConfig estimator;
  TrainerConfig trainer;
  std::string teacher;  // "", "ideal", or a resolved path
  std::string output_dir = "runs/default";
  int workers = 0;      // 0: hardware concurrency
  SweepAxes sweep;

  void validate() const {
    env.validate();
    estimator.validate();
    trainer.validate();
    if (workers < 0) throw ConfigError("workers must be >= 0");
    if (estimator.oracle_mode == OracleMode::teacher_oracle && teacher.empty())
      throw ConfigError("estimator.teacher is required with teacher_oracle");
    if (!teacher.empty() && teacher != "ideal" && !std::filesystem::exists(teacher))
      throw ConfigError("teacher table '" + teacher + "' does not exist");
    if (teacher == "ideal" && !env.exact_mode())
      throw ConfigError("the ideal teacher needs vocab_size <= 8 and horizon <= 12");
    if (estimator.oracle_mode == OracleMode::exact_oracle && !env.exact_mode())
      throw ConfigError("exact_oracle needs vocab_size <= 8 and horizon <= 12");
    for (double c : sweep.evidence_clip)
      if (!(c > 0)) throw ConfigError("sweep.evidence_clip values must be > 0");
    for (double a : sweep.alpha)
      if (!(a > 0) || !std::isfinite(a)) throw ConfigError("sweep.alpha values must be > 0");
    for (int g : sweep.group_size)
      if (g < 2) throw ConfigError("sweep.group_size values must be >= 2");
  }

  TeacherSource teacher_source() const {
    TeacherSource t;
    if (teacher == "ideal") {
      t.ideal = true;
    } else if (!teacher.empty()) {
      t.table = std::make_shared<TabularPolicy>(TabularPolicy::load(teacher, env, PolicyRole::frozen_teacher));
    }
    return t;
  }
};

namespace detail {

using cjson = nlohmann::ordered_json;

inline void reject_unknown(const cjson& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read_opt(const cjson& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const cjson::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::ordered_json& j,
                                                const std::filesystem::path& base_dir = {}) {
  using detail::read_opt;
  ExperimentConfig c;
  detail::reject_unknown(j, {"env", "estimator", "trainer", "output_dir", "workers", "sweep"}, "config");
  if (j.contains("env")) {
    const auto& e = j.at("env");
    detail::reject_unknown(e, {"vocab_size", "horizon", "answer_space", "reward_rule", "num_queries", "window",
                               "pivot", "lock_length"},
                           "env");
    read_opt(e, "vocab_size", c.env.vocab_size, "env");
    read_opt(e, "horizon", c.env.horizon, "env");
    read_opt(e, "answer_space", c.env.answer_space, "env");
    std::string rule = std::string(to_string(c.env.reward_rule));
    read_opt(e, "reward_rule", rule, "env");
    c.env.reward_rule = parse_reward_rule(rule);
    read_opt(e, "num_queries", c.env.num_queries, "env");
    read_opt(e, "window", c.env.window, "env");
    read_opt(e, "pivot", c.env.pivot, "env");
    read_opt(e, "lock_length", c.env.lock_length, "env");
  }
  if (j.contains("estimator")) {
    const auto& e = j.at("estimator");
    detail::reject_unknown(e, {"variant", "alpha", "evidence_clip", "norm_eps", "surrogate_clip", "oracle_mode",
                               "teacher"},
                           "estimator");
    std::string v = std::string(to_string(c.estimator.variant));
    read_opt(e, "variant", v, "estimator");
    c.estimator.variant = parse_variant(v);
    read_opt(e, "alpha", c.estimator.alpha, "estimator");
    if (e.contains("evidence_clip") && e.at("evidence_clip").is_string() &&
        e.at("evidence_clip").get<std::string>() == "inf")
      c.estimator.evidence_clip = std::numeric_limits<double>::infinity();
    else
      read_opt(e, "evidence_clip", c.estimator.evidence_clip, "estimator");
    read_opt(e, "norm_eps", c.estimator.norm_eps, "estimator");
    read_opt(e, "surrogate_clip", c.estimator.surrogate_clip, "estimator");
    std::string m = std::string(to_string(c.estimator.oracle_mode));
    read_opt(e, "oracle_mode", m, "estimator");
    c.estimator.oracle_mode = parse_oracle_mode(m);
    read_opt(e, "teacher", c.teacher, "estimator");
    if (!c.teacher.empty() && c.teacher != "ideal") {
      std::filesystem::path p(c.teacher);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      c.teacher = std::filesystem::absolute(p).lexically_normal().string();
    }
  }
  if (j.contains("trainer")) {
    const auto& t = j.at("trainer");
    detail::reject_unknown(t, {"lr", "steps", "inner_epochs", "group_size", "queries_per_step", "oracle_fit_rate",
                               "seeds"},
                           "trainer");
    read_opt(t, "lr", c.trainer.lr, "trainer");
    read_opt(t, "steps", c.trainer.steps, "trainer");
    read_opt(t, "inner_epochs", c.trainer.inner_epochs, "trainer");
    read_opt(t, "group_size", c.trainer.group_size, "trainer");
    read_opt(t, "queries_per_step", c.trainer.queries_per_step, "trainer");
    read_opt(t, "oracle_fit_rate", c.trainer.oracle_fit_rate, "trainer");
    read_opt(t, "seeds", c.trainer.seeds, "trainer");
  }
  read_opt(j, "output_dir", c.output_dir, "config");
  read_opt(j, "workers", c.workers, "config");
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    detail::reject_unknown(s, {"evidence_clip", "alpha", "group_size", "variant"}, "sweep");
    read_opt(s, "evidence_clip", c.sweep.evidence_clip, "sweep");
    read_opt(s, "alpha", c.sweep.alpha, "sweep");
    read_opt(s, "group_size", c.sweep.group_size, "sweep");
    std::vector<std::string> vs;
    read_opt(s, "variant", vs, "sweep");
    for (const auto& v : vs) c.sweep.variant.push_back(parse_variant(v));
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config '" + path + "'");
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(f);
  } catch (const nlohmann::ordered_json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j, std::filesystem::path(path).parent_path());
}

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["env"] = {{"vocab_size", c.env.vocab_size},   {"horizon", c.env.horizon},
              {"answer_space", c.env.answer_space}, {"reward_rule", std::string(to_string(c.env.reward_rule))},
              {"num_queries", c.env.num_queries}, {"window", c.env.context_window()},
              {"pivot", c.env.pivot},             {"lock_length", c.env.lock_length}};
  nlohmann::ordered_json est = {{"variant", std::string(to_string(c.estimator.variant))},
                                {"alpha", c.estimator.alpha}};
  if (std::isinf(c.estimator.evidence_clip))
    est["evidence_clip"] = "inf";
  else
    est["evidence_clip"] = c.estimator.evidence_clip;
  est["norm_eps"] = c.estimator.norm_eps;
  est["surrogate_clip"] = c.estimator.surrogate_clip;
  est["oracle_mode"] = std::string(to_string(c.estimator.oracle_mode));
  if (!c.teacher.empty()) est["teacher"] = c.teacher;
  j["estimator"] = est;
  j["trainer"] = {{"lr", c.trainer.lr},
                  {"steps", c.trainer.steps},
                  {"inner_epochs", c.trainer.inner_epochs},
                  {"group_size", c.trainer.group_size},
                  {"queries_per_step", c.trainer.queries_per_step},
                  {"oracle_fit_rate", c.trainer.oracle_fit_rate},
                  {"seeds", c.trainer.seeds}};
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  if (!c.sweep.empty()) {
    nlohmann::ordered_json s = nlohmann::ordered_json::object();
    if (!c.sweep.evidence_clip.empty()) s["evidence_clip"] = c.sweep.evidence_clip;
    if (!c.sweep.alpha.empty()) s["alpha"] = c.sweep.alpha;
    if (!c.sweep.group_size.empty()) s["group_size"] = c.sweep.group_size;
    if (!c.sweep.variant.empty()) {
      std::vector<std::string> vs;
      for (Variant v : c.sweep.variant) vs.emplace_back(to_string(v));
      s["variant"] = vs;
    }
    j["sweep"] = s;
  }
  return j;
}

}  // namespace oppo
