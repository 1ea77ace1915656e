// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * Bayesian evidence aggregation along a sampled trajectory.
 *
 * Every sampled token carries a log-likelihood ratio log λ_t between an
 * answer-conditioned score and a plain score. Accumulated from a group prior,
 * the ratios give running log-odds ℓ_t of eventual success:
 *
 *   ℓ_{t+1} = ℓ_t + log λ_t,   V_t = σ(ℓ_t),   A_t = V_{t+1} − V_t
 *
 * A_t is evaluated through the rational form
 *
 *   A_t = V_t (1 − V_t) (λ_t − 1) / (λ_t V_t + 1 − V_t)
 *
 * in the log domain, which stays accurate where the naive sigmoid
 * difference cancels. Token advantages are then sign-anchored to the
 * trajectory's group-standardized reward and normalized over the group.
 */

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oppo/error.hpp"

namespace oppo {

enum class Variant {
  grpo_uniform,
  logratio_only,
  anchored_logratio,
  oppo_full,
  oppo_no_anchor,
  oppo_no_tracking,
  oppo_no_clip,
  oppo_no_prior,
};

enum class OracleMode { self_oracle, teacher_oracle, exact_oracle };

inline constexpr Variant kAllVariants[] = {
    Variant::grpo_uniform,   Variant::logratio_only,    Variant::anchored_logratio,
    Variant::oppo_full,      Variant::oppo_no_anchor,   Variant::oppo_no_tracking,
    Variant::oppo_no_clip,   Variant::oppo_no_prior,
};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::grpo_uniform: return "grpo_uniform";
    case Variant::logratio_only: return "logratio_only";
    case Variant::anchored_logratio: return "anchored_logratio";
    case Variant::oppo_full: return "oppo_full";
    case Variant::oppo_no_anchor: return "oppo_no_anchor";
    case Variant::oppo_no_tracking: return "oppo_no_tracking";
    case Variant::oppo_no_clip: return "oppo_no_clip";
    case Variant::oppo_no_prior: return "oppo_no_prior";
  }
  return "unknown";
}

inline Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (to_string(v) == name) return v;
  throw ConfigError("unknown estimator variant '" + std::string(name) + "'");
}

inline std::string_view to_string(OracleMode m) {
  switch (m) {
    case OracleMode::self_oracle: return "self_oracle";
    case OracleMode::teacher_oracle: return "teacher_oracle";
    case OracleMode::exact_oracle: return "exact_oracle";
  }
  return "unknown";
}

inline OracleMode parse_oracle_mode(std::string_view name) {
  for (OracleMode m : {OracleMode::self_oracle, OracleMode::teacher_oracle, OracleMode::exact_oracle})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown oracle mode '" + std::string(name) + "'");
}

struct EstimatorConfig {
  Variant variant = Variant::oppo_full;
  double alpha = 1.0;          // Beta(α, α) prior strength
  double evidence_clip = 3.0;  // C, bound on |log λ̂|
  double norm_eps = 1e-8;      // added to the group std in token normalization
  double surrogate_clip = 0.2; // importance-ratio clip of the policy objective
  OracleMode oracle_mode = OracleMode::self_oracle;

  void validate() const {
    if (!(alpha > 0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a positive finite real");
    if (!(evidence_clip > 0)) throw ConfigError("evidence_clip must be > 0");
    if (!(norm_eps > 0) || !std::isfinite(norm_eps)) throw ConfigError("norm_eps must be > 0");
    if (!(surrogate_clip > 0 && surrogate_clip < 1)) throw ConfigError("surrogate_clip must lie in (0, 1)");
  }

  // The clip actually applied when building evidence; the no-clip ablation removes it.
  double effective_clip() const {
    return variant == Variant::oppo_no_clip ? std::numeric_limits<double>::infinity() : evidence_clip;
  }

  bool uses_prior() const { return variant != Variant::oppo_no_prior; }
};

/// Logistic function, evaluated on the branch that never overflows.
inline double sigmoid_logodds(double l) {
  if (!std::isfinite(l)) throw EvidenceError("sigmoid_logodds: non-finite log-odds (corrupted evidence upstream)");
  if (l >= 0) return 1.0 / (1.0 + std::exp(-l));
  const double e = std::exp(l);
  return e / (1.0 + e);
}

struct TokenEvidence {
  double plain_logp = 0;   // s_t
  double oracle_logp = 0;  // o_t
  double log_ratio = 0;    // clip(o_t − s_t, −C, C)
};

struct GroupPrior {
  int success_count = 0;
  int group_size = 0;
  double alpha = 1.0;
  double v0 = 0.5;
  double logit0 = 0.0;
};

/// Beta(α, α) posterior mean of the group success rate and its logit.
inline GroupPrior prior_from_group(int k, int group_size, double alpha) {
  if (group_size < 1) throw ConfigError("prior_from_group: group size must be >= 1");
  if (k < 0 || k > group_size) throw ConfigError("prior_from_group: success count out of range");
  if (!(alpha > 0) || !std::isfinite(alpha)) throw ConfigError("prior_from_group: alpha must be > 0");
  GroupPrior p;
  p.success_count = k;
  p.group_size = group_size;
  p.alpha = alpha;
  p.v0 = (k + alpha) / (group_size + 2.0 * alpha);
  p.logit0 = std::log(k + alpha) - std::log(group_size - k + alpha);
  return p;
}

/// clamp(oracle − plain, −C, C). An impossible token under the oracle context
/// (oracle = −∞) maps to −C; a sampled token the plain context rules out is an error.
inline double clip_log_evidence(double oracle_logp, double plain_logp, double clip) {
  if (!(clip > 0)) throw ConfigError("clip_log_evidence: clip bound must be > 0");
  if (std::isnan(oracle_logp) || std::isnan(plain_logp))
    throw EvidenceError("clip_log_evidence: NaN log-probability");
  if (plain_logp == -std::numeric_limits<double>::infinity())
    throw EvidenceError("clip_log_evidence: sampled token has zero plain probability");
  if (oracle_logp == std::numeric_limits<double>::infinity() || plain_logp == std::numeric_limits<double>::infinity())
    throw EvidenceError("clip_log_evidence: log-probability of +inf");
  if (oracle_logp == -std::numeric_limits<double>::infinity()) return -clip;
  const double diff = oracle_logp - plain_logp;
  if (diff > clip) return clip;
  if (diff < -clip) return -clip;
  return diff;
}

inline TokenEvidence make_token_evidence(double oracle_logp, double plain_logp, double clip) {
  return {plain_logp, oracle_logp, clip_log_evidence(oracle_logp, plain_logp, clip)};
}

namespace detail {

// A for success probability v with complement w = 1 − v supplied separately,
// so both can come from σ(ℓ) and σ(−ℓ) without losing the small one.
inline double advantage_kernel(double v, double w, double log_lambda) {
  if (log_lambda == 0.0 || v == 0.0 || w == 0.0) return 0.0;
  if (log_lambda < 0) return v * w * std::expm1(log_lambda) / (w + v * std::exp(log_lambda));
  return v * w * -std::expm1(-log_lambda) / (v + w * std::exp(-log_lambda));
}

}  // namespace detail

/// Exact one-step advantage V' − V when evidence log λ is applied to belief v.
inline double advantage_exact(double v, double log_lambda) {
  if (!(v >= 0.0 && v <= 1.0)) throw DomainError("advantage_exact: v must lie in [0, 1]");
  if (!std::isfinite(log_lambda)) throw DomainError("advantage_exact: λ must be positive and finite");
  return detail::advantage_kernel(v, 1.0 - v, log_lambda);
}

/// Same quantity from the log-odds of the current belief.
inline double advantage_from_logodds(double logodds, double log_lambda) {
  if (!std::isfinite(logodds) || !std::isfinite(log_lambda))
    throw EvidenceError("advantage_from_logodds: non-finite input");
  return detail::advantage_kernel(sigmoid_logodds(logodds), sigmoid_logodds(-logodds), log_lambda);
}

/// State weight times evidence: V(1 − V) log λ.
inline double advantage_first_order(double v, double log_lambda) {
  if (!(v >= 0.0 && v <= 1.0)) throw DomainError("advantage_first_order: v must lie in [0, 1]");
  return v * (1.0 - v) * log_lambda;
}

struct BeliefTrace {
  std::vector<double> logodds;  // ℓ_1 .. ℓ_{T+1}
  std::vector<double> values;   // V_1 .. V_{T+1}
  std::vector<double> raw_adv;  // A_1 .. A_T

  std::size_t length() const { return raw_adv.size(); }
  // Σ_t A_t − (V_{T+1} − V_1); zero up to rounding.
  double telescoping_gap() const {
    double s = 0;
    for (double a : raw_adv) s += a;
    return s - (values.back() - values.front());
  }
};

inline BeliefTrace belief_trace(double logit0, std::span<const double> log_ratios) {
  if (!std::isfinite(logit0)) throw EvidenceError("belief_trace: non-finite prior log-odds");
  BeliefTrace tr;
  tr.logodds.reserve(log_ratios.size() + 1);
  tr.values.reserve(log_ratios.size() + 1);
  tr.raw_adv.reserve(log_ratios.size());
  double l = logit0;
  tr.logodds.push_back(l);
  tr.values.push_back(sigmoid_logodds(l));
  for (double x : log_ratios) {
    if (!std::isfinite(x)) throw EvidenceError("belief_trace: non-finite log-ratio (clip evidence first)");
    tr.raw_adv.push_back(advantage_from_logodds(l, x));
    l += x;
    tr.logodds.push_back(l);
    tr.values.push_back(sigmoid_logodds(l));
  }
  return tr;
}

inline double sign_of(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

using TokenMatrix = std::vector<std::vector<double>>;  // [trajectory][token]

struct NormalizedAdvantages {
  TokenMatrix anchored;    // before normalization
  TokenMatrix normalized;  // Ã
  double mean = 0;
  double std = 0;
  double sign_flip_fraction = 0;  // tokens whose sign normalization reversed, over all tokens
};

/// (x − mean) / (std + eps) with population moments over every token of the group.
inline NormalizedAdvantages normalize_group(TokenMatrix values, double norm_eps) {
  if (values.empty()) throw EvidenceError("normalize_group: empty group");
  if (!(norm_eps > 0)) throw ConfigError("normalize_group: norm_eps must be > 0");
  NormalizedAdvantages out;
  std::size_t n = 0;
  double sum = 0;
  for (const auto& row : values)
    for (double x : row) {
      sum += x;
      ++n;
    }
  out.normalized.resize(values.size());
  if (n == 0) {
    out.anchored = std::move(values);
    return out;
  }
  const double mean = sum / static_cast<double>(n);
  double ss = 0;
  for (const auto& row : values)
    for (double x : row) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  std::size_t flips = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.normalized[i].reserve(values[i].size());
    for (double x : values[i]) {
      const double z = (x - mean) / (sd + norm_eps);
      if (x != 0 && sign_of(z) != sign_of(x)) ++flips;
      out.normalized[i].push_back(z);
    }
  }
  out.mean = mean;
  out.std = sd;
  out.sign_flip_fraction = static_cast<double>(flips) / static_cast<double>(n);
  out.anchored = std::move(values);
  return out;
}

/// Anchors every token's sign to its trajectory's sequence advantage, then
/// normalizes over the group. A group whose sequence advantages are all zero
/// (equal rewards) yields all-zero outputs.
inline NormalizedAdvantages anchor_and_normalize(const TokenMatrix& raw_adv, std::span<const double> seq_adv,
                                                 double norm_eps) {
  if (raw_adv.empty()) throw EvidenceError("anchor_and_normalize: empty group");
  if (raw_adv.size() != seq_adv.size())
    throw EvidenceError("anchor_and_normalize: one sequence advantage per trajectory required");
  TokenMatrix anchored(raw_adv.size());
  bool any_direction = false;
  for (std::size_t i = 0; i < raw_adv.size(); ++i) {
    const double s = sign_of(seq_adv[i]);
    any_direction = any_direction || s != 0;
    anchored[i].reserve(raw_adv[i].size());
    for (double a : raw_adv[i]) anchored[i].push_back(s * std::abs(a));
  }
  if (!any_direction) {
    NormalizedAdvantages out;
    out.normalized.resize(anchored.size());
    for (std::size_t i = 0; i < anchored.size(); ++i) out.normalized[i].assign(anchored[i].size(), 0.0);
    out.anchored = std::move(anchored);
    return out;
  }
  return normalize_group(std::move(anchored), norm_eps);
}

}  // namespace oppo
