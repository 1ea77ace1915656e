// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON-lines trajectory records: streaming reader, offline scorer, writer.
//
// One record per line:
//   {"query_id": "q7", "traj_id": "t3", "group_id": "g7", "tokens": [..],
//    "logp_plain": [..], "logp_oracle": [..], "reward": 0|1}
// Scored records also carry "advantage" (length T) and "v_trace" (length T+1).
// Unknown fields are kept and written back after the known ones.
//
// Records of one group must be contiguous; the reader holds one group at a time.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "oppo/baselines.hpp"
#include "oppo/error.hpp"
#include "oppo/evidence.hpp"
#include "oppo/trainer.hpp"

namespace oppo {

using ojson = nlohmann::ordered_json;

struct TrajectoryRecord {
  std::string query_id;
  std::string traj_id;
  std::string group_id;
  std::vector<int> tokens;
  std::vector<double> logp_plain;
  std::vector<double> logp_oracle;
  int reward = 0;
  std::optional<std::vector<double>> advantage;
  std::optional<std::vector<double>> v_trace;
  ojson extra = ojson::object();

  bool operator==(const TrajectoryRecord&) const = default;
};

struct Diagnostic {
  std::size_t line = 0;  // 0 when not tied to an input line
  std::string message;
};

namespace detail {

inline const char* const kKnownFields[] = {"query_id", "traj_id",  "group_id", "tokens",  "logp_plain",
                                           "logp_oracle", "reward", "advantage", "v_trace"};

inline bool is_known_field(const std::string& k) {
  for (const char* f : kKnownFields)
    if (k == f) return true;
  return false;
}

inline std::string id_field(const ojson& j, const char* name, std::size_t line) {
  if (!j.contains(name)) throw ParseError(line, std::string("missing field '") + name + "'");
  const ojson& v = j.at(name);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return v.dump();
  throw ParseError(line, std::string("field '") + name + "' must be a string");
}

inline std::vector<double> real_array(const ojson& j, const char* name, std::size_t line) {
  if (!j.contains(name)) throw ParseError(line, std::string("missing field '") + name + "'");
  const ojson& v = j.at(name);
  if (!v.is_array()) throw ParseError(line, std::string("field '") + name + "' must be an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw ParseError(line, std::string("field '") + name + "' must hold numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace detail

/// Validates and converts one parsed JSON object. `line` is used in error messages.
inline TrajectoryRecord record_from_json(const ojson& j, std::size_t line = 0) {
  if (!j.is_object()) throw ParseError(line, "record must be a JSON object");
  TrajectoryRecord r;
  r.query_id = detail::id_field(j, "query_id", line);
  r.traj_id = detail::id_field(j, "traj_id", line);
  r.group_id = detail::id_field(j, "group_id", line);
  if (!j.contains("tokens") || !j.at("tokens").is_array()) throw ParseError(line, "field 'tokens' must be an array");
  for (const auto& x : j.at("tokens")) {
    if (!x.is_number_integer()) throw ParseError(line, "field 'tokens' must hold integers");
    r.tokens.push_back(x.get<int>());
  }
  r.logp_plain = detail::real_array(j, "logp_plain", line);
  r.logp_oracle = detail::real_array(j, "logp_oracle", line);
  if (!j.contains("reward") || !j.at("reward").is_number_integer()) throw ParseError(line, "field 'reward' must be 0 or 1");
  const auto rw = j.at("reward").get<long long>();
  if (rw != 0 && rw != 1) throw ParseError(line, "reward must be 0 or 1, got " + std::to_string(rw));
  r.reward = static_cast<int>(rw);
  if (r.tokens.empty()) throw ParseError(line, "empty trajectory");
  if (r.logp_plain.size() != r.tokens.size() || r.logp_oracle.size() != r.tokens.size())
    throw ParseError(line, "length mismatch: tokens " + std::to_string(r.tokens.size()) + ", logp_plain " +
                               std::to_string(r.logp_plain.size()) + ", logp_oracle " +
                               std::to_string(r.logp_oracle.size()));
  for (std::size_t t = 0; t < r.tokens.size(); ++t)
    if (!(r.logp_plain[t] <= 0) || !(r.logp_oracle[t] <= 0))
      throw ParseError(line, "log-probability above 0 at position " + std::to_string(t));
  if (j.contains("advantage")) r.advantage = detail::real_array(j, "advantage", line);
  if (j.contains("v_trace")) r.v_trace = detail::real_array(j, "v_trace", line);
  for (const auto& [k, v] : j.items())
    if (!detail::is_known_field(k)) r.extra[k] = v;
  return r;
}

inline ojson record_to_json(const TrajectoryRecord& r) {
  ojson j;
  j["query_id"] = r.query_id;
  j["traj_id"] = r.traj_id;
  j["group_id"] = r.group_id;
  j["tokens"] = r.tokens;
  j["logp_plain"] = r.logp_plain;
  j["logp_oracle"] = r.logp_oracle;
  j["reward"] = r.reward;
  for (const auto& [k, v] : r.extra.items()) j[k] = v;
  if (r.advantage) j["advantage"] = *r.advantage;
  if (r.v_trace) j["v_trace"] = *r.v_trace;
  return j;
}

/// Streams groups out of a JSON-lines source. With skip_bad, malformed lines are
/// recorded as diagnostics and dropped; otherwise the first one throws ParseError.
class TrajectoryLogReader {
 public:
  explicit TrajectoryLogReader(std::istream& in, bool skip_bad = false) : in_(in), skip_bad_(skip_bad) {}

  std::optional<std::vector<TrajectoryRecord>> next_group() {
    std::vector<TrajectoryRecord> group;
    while (true) {
      std::optional<Numbered> rec;
      if (pending_) {
        rec = std::move(pending_);
        pending_.reset();
      } else {
        rec = next_record();
      }
      if (!rec) break;
      if (group.empty()) {
        if (!seen_.insert(rec->record.group_id).second) {
          const std::string msg = "group '" + rec->record.group_id + "' is not contiguous in the input";
          if (!skip_bad_) throw ParseError(rec->line, msg);
          diagnostics_.push_back({rec->line, msg + "; record dropped"});
          continue;
        }
      } else if (rec->record.group_id != group.front().group_id) {
        pending_ = std::move(rec);
        break;
      }
      group.push_back(std::move(rec->record));
    }
    if (group.empty()) return std::nullopt;
    return group;
  }

  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }
  std::size_t lines_read() const { return line_; }

 private:
  struct Numbered {
    TrajectoryRecord record;
    std::size_t line = 0;
  };

  std::optional<Numbered> next_record() {
    std::string text;
    while (std::getline(in_, text)) {
      ++line_;
      if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        return Numbered{record_from_json(ojson::parse(text), line_), line_};
      } catch (const ojson::parse_error& e) {
        if (!skip_bad_) throw ParseError(line_, std::string("invalid JSON: ") + e.what());
        diagnostics_.push_back({line_, std::string("invalid JSON: ") + e.what()});
      } catch (const ojson::exception& e) {
        if (!skip_bad_) throw ParseError(line_, e.what());
        diagnostics_.push_back({line_, e.what()});
      } catch (const ParseError& e) {
        if (!skip_bad_) throw;
        diagnostics_.push_back({e.line(), e.what()});
      }
    }
    return std::nullopt;
  }

  std::istream& in_;
  bool skip_bad_;
  std::size_t line_ = 0;
  std::optional<Numbered> pending_;
  std::set<std::string> seen_;
  std::vector<Diagnostic> diagnostics_;
};

inline std::vector<std::vector<TrajectoryRecord>> read_trajectory_log(std::istream& in, bool skip_bad = false,
                                                                      std::vector<Diagnostic>* diags = nullptr) {
  TrajectoryLogReader reader(in, skip_bad);
  std::vector<std::vector<TrajectoryRecord>> groups;
  while (auto g = reader.next_group()) groups.push_back(std::move(*g));
  if (diags) *diags = reader.diagnostics();
  return groups;
}

inline std::vector<std::vector<TrajectoryRecord>> read_trajectory_log(const std::string& path, bool skip_bad = false,
                                                                      std::vector<Diagnostic>* diags = nullptr) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read trajectory log '" + path + "'");
  return read_trajectory_log(f, skip_bad, diags);
}

/// Scores one group in place. Returns false (and leaves it untouched) for singleton groups.
inline bool score_group(std::vector<TrajectoryRecord>& group, const EstimatorConfig& cfg) {
  if (group.size() < 2) return false;
  const double clip = cfg.effective_clip();
  std::vector<int> rewards;
  TokenMatrix ratios;
  for (const auto& r : group) {
    rewards.push_back(r.reward);
    std::vector<double> row(r.tokens.size());
    for (std::size_t t = 0; t < row.size(); ++t) row[t] = clip_log_evidence(r.logp_oracle[t], r.logp_plain[t], clip);
    ratios.push_back(std::move(row));
  }
  GroupAdvantages ga = spectrum_advantage(cfg, GroupRewards(rewards), ratios);
  for (std::size_t i = 0; i < group.size(); ++i) {
    group[i].advantage = std::move(ga.normalized[i]);
    group[i].v_trace = ga.traces[i].values;
  }
  return true;
}

/// Scores every group; singleton groups are passed through unscored with a diagnostic.
inline void score_log(std::vector<std::vector<TrajectoryRecord>>& groups, const EstimatorConfig& cfg,
                      std::vector<Diagnostic>* diags = nullptr) {
  for (auto& g : groups)
    if (!score_group(g, cfg) && diags)
      diags->push_back({0, "group '" + g.front().group_id + "' has a single record; skipped"});
}

inline void write_records(std::ostream& out, const std::vector<TrajectoryRecord>& recs) {
  for (const auto& r : recs) out << record_to_json(r).dump() << '\n';
}

inline void write_advantage_log(const std::vector<std::vector<TrajectoryRecord>>& groups, std::ostream& out) {
  for (const auto& g : groups) write_records(out, g);
}

inline void write_advantage_log(const std::vector<std::vector<TrajectoryRecord>>& groups, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  write_advantage_log(groups, f);
  if (!f) throw ConfigError("write to '" + path + "' failed");
}

/// Converts an in-process batch (with evidence) into unscored records.
inline std::vector<TrajectoryRecord> export_batch(const GroupBatch& b, const std::string& group_id) {
  if (!b.has_evidence()) throw ConfigError("export_batch: batch carries no evidence");
  std::vector<TrajectoryRecord> out;
  for (std::size_t i = 0; i < b.trajectories.size(); ++i) {
    const Trajectory& tr = b.trajectories[i];
    TrajectoryRecord r;
    r.query_id = std::to_string(b.query.id);
    r.traj_id = group_id + "-" + std::to_string(i);
    r.group_id = group_id;
    r.tokens = tr.tokens;
    r.reward = tr.reward;
    for (const auto& e : tr.evidence) {
      r.logp_plain.push_back(e.plain_logp);
      r.logp_oracle.push_back(e.oracle_logp);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace oppo
