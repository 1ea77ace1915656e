// SPDX-License-Identifier: Apache-2.0
#pragma once

// Advantage estimators across the credit-assignment spectrum: uniform
// group-standardized reward, state-blind log-ratios, anchored log-ratios,
// and the Bayesian estimator with its ablations.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oppo/error.hpp"
#include "oppo/evidence.hpp"

namespace oppo {

struct GroupRewards {
  std::vector<int> rewards;
  double mean = 0;
  double std = 0;  // population

  explicit GroupRewards(std::vector<int> r) : rewards(std::move(r)) {
    if (rewards.empty()) throw ConfigError("GroupRewards: empty group");
    double s = 0;
    for (int x : rewards) {
      if (x != 0 && x != 1) throw ConfigError("GroupRewards: rewards must be 0 or 1");
      s += x;
    }
    const double n = static_cast<double>(rewards.size());
    mean = s / n;
    double ss = 0;
    for (int x : rewards) ss += (x - mean) * (x - mean);
    std = std::sqrt(ss / n);
  }

  int size() const { return static_cast<int>(rewards.size()); }
  int successes() const {
    int k = 0;
    for (int x : rewards) k += x;
    return k;
  }
};

/// (R_i − μ)/σ; zero for every trajectory when the group has no reward variance.
inline std::vector<double> grpo_group_advantage(const GroupRewards& g) {
  if (g.size() < 2) throw ConfigError("grpo_group_advantage: group size must be >= 2");
  std::vector<double> out(g.rewards.size(), 0.0);
  if (g.std > 0)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (g.rewards[i] - g.mean) / g.std;
  return out;
}

/// Distillation-style weighting: each token's advantage is its own log-ratio.
inline std::vector<double> state_blind_advantage(std::span<const double> log_ratios) {
  return {log_ratios.begin(), log_ratios.end()};
}

struct GroupAdvantages {
  GroupPrior prior;
  double logit0 = 0;               // prior log-odds actually used for the traces
  std::vector<double> seq_adv;     // per trajectory
  std::vector<BeliefTrace> traces; // empty when no evidence was supplied
  TokenMatrix anchored;            // pre-normalization token values
  TokenMatrix normalized;          // Ã, what the policy update consumes
  double sign_flip_fraction = 0;
};

/// Dispatches on the estimator variant. `log_ratios` holds the already clipped
/// log λ̂ per token; it may be omitted only for grpo_uniform.
inline GroupAdvantages spectrum_advantage(const EstimatorConfig& cfg, const GroupRewards& rewards,
                                          const std::optional<TokenMatrix>& log_ratios) {
  cfg.validate();
  GroupAdvantages out;
  out.seq_adv = grpo_group_advantage(rewards);
  out.prior = prior_from_group(rewards.successes(), rewards.size(), cfg.alpha);
  out.logit0 = cfg.uses_prior() ? out.prior.logit0 : 0.0;

  if (log_ratios) {
    if (log_ratios->size() != rewards.rewards.size())
      throw EvidenceError("spectrum_advantage: evidence for every trajectory required");
    out.traces.reserve(log_ratios->size());
    for (const auto& row : *log_ratios) out.traces.push_back(belief_trace(out.logit0, row));
  } else if (cfg.variant != Variant::grpo_uniform) {
    throw ConfigError("spectrum_advantage: variant '" + std::string(to_string(cfg.variant)) +
                      "' needs per-token evidence");
  }

  auto raw_matrix = [&] {
    TokenMatrix m;
    m.reserve(out.traces.size());
    for (const auto& tr : out.traces) m.push_back(tr.raw_adv);
    return m;
  };

  NormalizedAdvantages na;
  switch (cfg.variant) {
    case Variant::grpo_uniform: {
      // Token counts come from the evidence when present; otherwise the caller broadcasts.
      TokenMatrix m(rewards.rewards.size());
      if (log_ratios)
        for (std::size_t i = 0; i < m.size(); ++i) m[i].assign((*log_ratios)[i].size(), out.seq_adv[i]);
      out.anchored = m;
      out.normalized = std::move(m);
      return out;
    }
    case Variant::logratio_only: {
      TokenMatrix m;
      for (const auto& row : *log_ratios) m.push_back(state_blind_advantage(row));
      na = normalize_group(std::move(m), cfg.norm_eps);
      break;
    }
    case Variant::anchored_logratio:
    case Variant::oppo_no_tracking:
      na = anchor_and_normalize(*log_ratios, out.seq_adv, cfg.norm_eps);
      break;
    case Variant::oppo_full:
    case Variant::oppo_no_clip:
    case Variant::oppo_no_prior:
      na = anchor_and_normalize(raw_matrix(), out.seq_adv, cfg.norm_eps);
      break;
    case Variant::oppo_no_anchor:
      na = normalize_group(raw_matrix(), cfg.norm_eps);
      break;
  }
  out.anchored = std::move(na.anchored);
  out.normalized = std::move(na.normalized);
  out.sign_flip_fraction = na.sign_flip_fraction;
  return out;
}

}  // namespace oppo
