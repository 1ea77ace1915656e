// SPDX-License-Identifier: Apache-2.0
#pragma once

// Group rollouts, evidence scoring, advantage estimation and the clipped
// surrogate update for tabular policies.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "oppo/baselines.hpp"
#include "oppo/env.hpp"
#include "oppo/error.hpp"
#include "oppo/evidence.hpp"
#include "oppo/exact.hpp"
#include "oppo/oracle.hpp"

namespace oppo {

struct TrainerConfig {
  double lr = 0.05;
  int steps = 300;
  int inner_epochs = 1;
  int group_size = 8;
  int queries_per_step = 1;
  double oracle_fit_rate = 0.5;  // step size of the answer-row fit in self-oracle mode
  std::vector<std::uint64_t> seeds = {0};

  void validate() const {
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("trainer: lr must be > 0");
    if (steps < 0) throw ConfigError("trainer: steps must be >= 0");
    if (inner_epochs < 1) throw ConfigError("trainer: inner_epochs must be >= 1");
    if (group_size < 2) throw ConfigError("trainer: group_size must be >= 2");
    if (queries_per_step < 1) throw ConfigError("trainer: queries_per_step must be >= 1");
    if (!(oracle_fit_rate >= 0) || !std::isfinite(oracle_fit_rate))
      throw ConfigError("trainer: oracle_fit_rate must be >= 0");
    if (seeds.empty()) throw ConfigError("trainer: at least one seed required");
  }
};

struct Trajectory {
  std::vector<int> tokens;
  int reward = 0;
  std::vector<TokenEvidence> evidence;  // empty when the variant needs none
  std::vector<double> old_logp;         // plain-context log π_old of each token
  std::vector<double> advantage;        // Ã per token
  double residual = std::numeric_limits<double>::quiet_NaN();  // |Σ A_raw − (R − V̂_0)|
};

struct GroupBatch {
  Query query;
  std::vector<Trajectory> trajectories;
  GroupPrior prior;
  std::vector<double> seq_adv;
  std::vector<BeliefTrace> traces;
  TokenMatrix anchored;
  double sign_flip_fraction = 0;
  double evidence_clip_fraction = 0;

  bool has_evidence() const {
    return !trajectories.empty() &&
           std::all_of(trajectories.begin(), trajectories.end(),
                       [](const Trajectory& t) { return t.evidence.size() == t.tokens.size(); });
  }
  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.tokens.size();
    return n;
  }
};

/// Log-probabilities of the sampled tokens under the plain or answer-conditioned context.
inline std::vector<double> score_tokens(const Scorer& policy, const Query& q, std::span<const int> tokens,
                                        bool with_answer_feature) {
  const std::optional<int> ans = with_answer_feature ? std::optional<int>(q.answer) : std::nullopt;
  std::vector<double> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) out.push_back(policy.log_prob(q, ans, tokens.first(t), tokens[t]));
  return out;
}

inline bool variant_needs_evidence(Variant v) { return v != Variant::grpo_uniform; }

/// Rolls out a group and records old-policy log-probabilities; evidence is attached separately.
inline GroupBatch make_batch(const TabularPolicy& policy, const Query& q, int group_size, std::uint64_t seed) {
  GroupBatch b;
  b.query = q;
  for (auto& s : rollout_group(policy, q, group_size, seed)) {
    Trajectory tr;
    tr.old_logp = score_tokens(policy, q, s.tokens, false);
    tr.tokens = std::move(s.tokens);
    tr.reward = s.reward;
    b.trajectories.push_back(std::move(tr));
  }
  return b;
}

/// Scores every trajectory of the batch with the oracle and records the evidence clip rate.
inline void attach_evidence(GroupBatch& b, const Oracle& oracle, double clip) {
  std::size_t clipped = 0, total = 0;
  for (auto& tr : b.trajectories) {
    tr.evidence = score_evidence(oracle, b.query, tr.tokens, clip);
    for (const auto& e : tr.evidence) {
      ++total;
      const double raw = e.oracle_logp - e.plain_logp;
      if (std::abs(raw) > clip) ++clipped;
    }
  }
  b.evidence_clip_fraction = total ? static_cast<double>(clipped) / static_cast<double>(total) : 0.0;
}

/// Fills seq_adv, traces, anchored values, Ã and per-trajectory telescoping residuals.
inline void compute_advantages(GroupBatch& b, const EstimatorConfig& cfg) {
  std::vector<int> rewards;
  for (const auto& tr : b.trajectories) rewards.push_back(tr.reward);
  const GroupRewards gr(rewards);
  std::optional<TokenMatrix> ratios;
  if (b.has_evidence()) {
    TokenMatrix m;
    for (const auto& tr : b.trajectories) {
      std::vector<double> row;
      row.reserve(tr.evidence.size());
      for (const auto& e : tr.evidence) row.push_back(e.log_ratio);
      m.push_back(std::move(row));
    }
    ratios = std::move(m);
  } else if (variant_needs_evidence(cfg.variant)) {
    throw ConfigError("compute_advantages: variant '" + std::string(to_string(cfg.variant)) +
                      "' needs per-token evidence");
  }
  GroupAdvantages ga = spectrum_advantage(cfg, gr, ratios);
  b.prior = ga.prior;
  b.seq_adv = ga.seq_adv;
  b.traces = std::move(ga.traces);
  b.sign_flip_fraction = ga.sign_flip_fraction;
  b.anchored = std::move(ga.anchored);
  for (std::size_t i = 0; i < b.trajectories.size(); ++i) {
    Trajectory& tr = b.trajectories[i];
    if (ratios) {
      tr.advantage = ga.normalized[i];
    } else {
      tr.advantage.assign(tr.tokens.size(), b.seq_adv[i]);
      b.anchored[i] = tr.advantage;
    }
    if (!b.traces.empty()) {
      const BeliefTrace& t = b.traces[i];
      double s = 0;
      for (double a : t.raw_adv) s += a;
      tr.residual = std::abs(s - (tr.reward - t.values.front()));
    }
  }
}

using Gradient = std::map<ContextKey, std::vector<double>>;

struct SurrogateStats {
  double objective = 0;
  double clip_fraction = 0;  // tokens with |ρ − 1| > ε
};

/// Objective mean_b (1/G) Σ_i (1/T_i) Σ_t min(ρÃ, clip(ρ, 1−ε, 1+ε)Ã) at the current
/// parameters, and its gradient with respect to the plain-context logits.
inline SurrogateStats surrogate_eval(const TabularPolicy& policy, std::span<const GroupBatch> batches, double eps,
                                     Gradient* grad) {
  SurrogateStats st;
  if (batches.empty()) return st;
  std::size_t clipped = 0, total = 0;
  const double nb = static_cast<double>(batches.size());
  for (const auto& b : batches) {
    const double G = static_cast<double>(b.trajectories.size());
    for (const auto& tr : b.trajectories) {
      if (tr.advantage.size() != tr.tokens.size() || tr.old_logp.size() != tr.tokens.size())
        throw ConfigError("surrogate: advantages and old log-probabilities must align with tokens");
      const double T = static_cast<double>(tr.tokens.size());
      const double w = 1.0 / (nb * G * T);
      const std::span<const int> toks(tr.tokens);
      for (std::size_t t = 0; t < tr.tokens.size(); ++t) {
        const ContextKey k = policy.key(b.query, std::nullopt, toks.first(t));
        const double a = tr.advantage[t];
        const double rho = std::exp(policy.log_prob(k, tr.tokens[t]) - tr.old_logp[t]);
        const double clipped_rho = std::clamp(rho, 1.0 - eps, 1.0 + eps);
        st.objective += w * std::min(rho * a, clipped_rho * a);
        ++total;
        if (std::abs(rho - 1.0) > eps) ++clipped;
        if (!grad || a == 0) continue;
        const bool active = a > 0 ? rho < 1.0 + eps : rho > 1.0 - eps;
        if (!active) continue;
        // d(ρ·Ã)/dz = Ã·ρ·(onehot − p)
        const std::vector<double> p = policy.probs(k);
        auto& g = (*grad)[k];
        if (g.empty()) g.assign(p.size(), 0.0);
        const double f = w * a * rho;
        for (std::size_t y = 0; y < p.size(); ++y) g[y] -= f * p[y];
        g[static_cast<std::size_t>(tr.tokens[t])] += f;
      }
    }
  }
  st.clip_fraction = total ? static_cast<double>(clipped) / static_cast<double>(total) : 0.0;
  return st;
}

inline double surrogate_objective(const TabularPolicy& policy, std::span<const GroupBatch> batches, double eps) {
  return surrogate_eval(policy, batches, eps, nullptr).objective;
}

inline Gradient surrogate_gradient(const TabularPolicy& policy, std::span<const GroupBatch> batches, double eps) {
  Gradient g;
  surrogate_eval(policy, batches, eps, &g);
  return g;
}

struct UpdateStats {
  double objective = 0;      // at the first inner pass
  double clip_fraction = 0;  // mean over inner passes
};

/// Gradient ascent on the clipped surrogate. Old log-probabilities stored in the
/// batches act as the rollout-time snapshot.
inline UpdateStats surrogate_update(TabularPolicy& policy, std::span<const GroupBatch> batches, double lr,
                                    int inner_epochs, double eps) {
  UpdateStats us;
  for (int e = 0; e < inner_epochs; ++e) {
    Gradient g;
    const SurrogateStats st = surrogate_eval(policy, batches, eps, &g);
    if (e == 0) us.objective = st.objective;
    us.clip_fraction += st.clip_fraction / inner_epochs;
    for (const auto& [k, row] : g)
      for (double v : row)
        if (!std::isfinite(v))
          throw NumericalError("surrogate_update: non-finite gradient at context position " +
                               std::to_string(k.position) + " of query " + std::to_string(k.query));
    for (const auto& [k, row] : g) {
      auto& z = policy.mutable_logits(k);
      for (std::size_t y = 0; y < row.size(); ++y) z[y] += lr * row[y];
    }
  }
  return us;
}

/// Self-oracle fit: one log-likelihood step of the answer-conditioned rows toward
/// the tokens of successful trajectories, so those rows track the success branch.
inline void fit_answer_rows(TabularPolicy& policy, std::span<const GroupBatch> batches, double rate) {
  if (rate == 0) return;
  for (const auto& b : batches)
    for (const auto& tr : b.trajectories) {
      if (tr.reward != 1) continue;
      const std::span<const int> toks(tr.tokens);
      for (std::size_t t = 0; t < tr.tokens.size(); ++t) {
        const ContextKey k = policy.key(b.query, b.query.answer, toks.first(t));
        const std::vector<double> p = policy.probs(k);
        auto& z = policy.mutable_logits(k);
        for (std::size_t y = 0; y < p.size(); ++y) z[y] -= rate * p[y];
        z[static_cast<std::size_t>(tr.tokens[t])] += rate;
      }
    }
}

struct TrainMetrics {
  int step = 0;
  double mean_reward = 0;
  double entropy = 0;                  // mean over plain contexts visited this step
  double surrogate_clip_fraction = 0;
  double evidence_clip_fraction = 0;
  double telescoping_residual = std::numeric_limits<double>::quiet_NaN();  // NaN without evidence
  double sign_flip_fraction = 0;
};

/// Greedy decoding success averaged over queries.
inline double greedy_success(const TabularPolicy& policy) {
  const EnvSpec& env = policy.env();
  int wins = 0;
  for (int id = 0; id < env.num_queries; ++id) {
    const Query q = env.query(id);
    std::vector<int> toks;
    for (int t = 0; t < env.horizon; ++t) {
      const auto p = policy.probs(policy.key(q, std::nullopt, toks));
      toks.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
    }
    wins += env.reward(q.answer, toks);
  }
  return static_cast<double>(wins) / env.num_queries;
}

/// Success of the sampling policy: enumerated in exact mode, otherwise a fixed-seed estimate.
inline double policy_success(const TabularPolicy& policy, bool* enumerated = nullptr) {
  const EnvSpec& env = policy.env();
  if (env.exact_mode()) {
    if (enumerated) *enumerated = true;
    return enumerated_success(policy);
  }
  if (enumerated) *enumerated = false;
  constexpr int kRollouts = 4096;
  double s = 0;
  for (int id = 0; id < env.num_queries; ++id) {
    for (const auto& tr : rollout_group(policy, env.query(id), kRollouts, 0x5eedull + static_cast<std::uint64_t>(id)))
      s += tr.reward;
  }
  return s / (static_cast<double>(kRollouts) * env.num_queries);
}

struct TeacherSource {
  std::shared_ptr<const TabularPolicy> table;  // frozen teacher loaded from a file
  bool ideal = false;                          // exact success-conditional of the live student
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<TrainMetrics> timeline;
  double initial_success = 0;
  double final_success = 0;
  double final_greedy_success = 0;
  bool success_enumerated = true;
  TabularPolicy policy;
};

/// One step: rollouts, evidence, advantages, surrogate update and (self mode) answer-row fit.
inline TrainMetrics train_step(TabularPolicy& policy, const EstimatorConfig& est, const TrainerConfig& tc,
                               const TeacherSource& teacher, std::mt19937_64& rng, int step) {
  const EnvSpec& env = policy.env();
  std::vector<GroupBatch> batches;
  batches.reserve(static_cast<std::size_t>(tc.queries_per_step));
  std::unique_ptr<IdealTeacher> ideal;
  Oracle oracle{est.oracle_mode, &policy, nullptr};
  if (est.oracle_mode == OracleMode::teacher_oracle) {
    if (teacher.ideal) {
      ideal = std::make_unique<IdealTeacher>(policy);
      oracle.teacher = ideal.get();
    } else {
      oracle.teacher = teacher.table.get();
    }
  }
  const bool need_evidence = variant_needs_evidence(est.variant);
  TrainMetrics m;
  m.step = step;
  double reward_sum = 0, clip_sum = 0, flip_sum = 0, resid_sum = 0;
  std::size_t n_traj = 0, n_resid = 0;
  std::set<ContextKey> visited;
  for (int b = 0; b < tc.queries_per_step; ++b) {
    const Query q = env.sample_query(rng);
    GroupBatch batch = make_batch(policy, q, tc.group_size, rng());
    if (need_evidence) attach_evidence(batch, oracle, est.effective_clip());
    compute_advantages(batch, est);
    for (const auto& tr : batch.trajectories) {
      reward_sum += tr.reward;
      ++n_traj;
      if (!std::isnan(tr.residual)) {
        resid_sum += tr.residual;
        ++n_resid;
      }
      for (std::size_t t = 0; t < tr.tokens.size(); ++t)
        visited.insert(policy.key(q, std::nullopt, std::span<const int>(tr.tokens).first(t)));
    }
    clip_sum += batch.evidence_clip_fraction;
    flip_sum += batch.sign_flip_fraction;
    batches.push_back(std::move(batch));
  }
  double h = 0;
  for (const auto& k : visited) h += policy.entropy(k);
  m.entropy = visited.empty() ? 0.0 : h / static_cast<double>(visited.size());
  m.mean_reward = reward_sum / static_cast<double>(n_traj);
  m.evidence_clip_fraction = clip_sum / tc.queries_per_step;
  m.sign_flip_fraction = flip_sum / tc.queries_per_step;
  if (n_resid) m.telescoping_residual = resid_sum / static_cast<double>(n_resid);

  const UpdateStats us = surrogate_update(policy, batches, tc.lr, tc.inner_epochs, est.surrogate_clip);
  m.surrogate_clip_fraction = us.clip_fraction;
  if (est.oracle_mode == OracleMode::self_oracle) fit_answer_rows(policy, batches, tc.oracle_fit_rate);
  return m;
}

inline RunResult train_run(const EnvSpec& env, const EstimatorConfig& est, const TrainerConfig& tc,
                           std::uint64_t seed, const TeacherSource& teacher = {}) {
  est.validate();
  tc.validate();
  env.validate();
  if (est.oracle_mode == OracleMode::teacher_oracle && !teacher.ideal && !teacher.table)
    throw ConfigError("teacher_oracle mode needs a teacher table or the ideal teacher");
  if (est.oracle_mode == OracleMode::exact_oracle && !env.exact_mode())
    throw SizeError("exact_oracle mode needs an environment within enumeration bounds");
  RunResult r{seed, {}, 0, 0, 0, true, TabularPolicy(env)};
  r.initial_success = policy_success(r.policy);
  std::mt19937_64 rng(seed);
  r.timeline.reserve(static_cast<std::size_t>(tc.steps));
  for (int s = 0; s < tc.steps; ++s) r.timeline.push_back(train_step(r.policy, est, tc, teacher, rng, s));
  r.final_success = policy_success(r.policy, &r.success_enumerated);
  r.final_greedy_success = greedy_success(r.policy);
  return r;
}

}  // namespace oppo
