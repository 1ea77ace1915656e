// SPDX-License-Identifier: Apache-2.0
#pragma once

// Evidence scorers. A single scorer supplies both the answer-conditioned
// numerator and the plain denominator of log λ̂; the exact mode reads the
// Bayes factor from enumeration instead.

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "oppo/env.hpp"
#include "oppo/error.hpp"
#include "oppo/evidence.hpp"
#include "oppo/exact.hpp"

namespace oppo {

/// KL(p ‖ q) in nats. +∞ when q is zero somewhere p is not.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DomainError("kl_divergence: size mismatch");
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    if (q[i] <= 0) return std::numeric_limits<double>::infinity();
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(kl, 0.0);
}

/// Scorer built from the student's exact branch tables: the answer-conditioned
/// row is the true success-conditional, the plain row is the student marginal.
/// Where the success branch is empty the answer row falls back to the marginal.
class IdealTeacher : public Scorer {
 public:
  explicit IdealTeacher(const TabularPolicy& student) : student_(&student) {}

  const EnvSpec& env() const override { return student_->env(); }

  std::vector<double> distribution(const Query& q, std::optional<int> answer,
                                   std::span<const int> prefix) const override {
    if (!answer) return student_->distribution(q, std::nullopt, prefix);
    const ExactConditionals c = exact_conditionals(*student_, Query{q.id, *answer}, prefix);
    return c.value > 0 ? c.success : c.marginal;
  }

 private:
  const TabularPolicy* student_;
};

struct Oracle {
  OracleMode mode = OracleMode::self_oracle;
  const TabularPolicy* student = nullptr;  // sampling policy; scorer in self mode
  const Scorer* teacher = nullptr;         // scorer in teacher mode

  const Scorer& scorer() const {
    if (mode == OracleMode::teacher_oracle) {
      if (!teacher) throw ConfigError("teacher_oracle mode needs a teacher scorer");
      return *teacher;
    }
    if (!student) throw ConfigError("oracle needs a student policy");
    return *student;
  }

  const TabularPolicy& policy() const {
    if (!student) throw ConfigError("oracle needs a student policy");
    return *student;
  }
};

/// Unclipped log λ̂ for `token` after `prefix`, the ground-truth answer taken from the query.
inline double oracle_log_ratio(const Oracle& o, const Query& q, std::span<const int> prefix, int token) {
  if (o.mode == OracleMode::exact_oracle) {
    const ExactConditionals c = exact_conditionals(o.policy(), q, prefix);
    if (c.marginal.at(static_cast<std::size_t>(token)) == 0)
      throw EvidenceError("oracle_log_ratio: token has zero plain probability");
    return c.log_bayes[static_cast<std::size_t>(token)];
  }
  const Scorer& s = o.scorer();
  const double plain = s.log_prob(q, std::nullopt, prefix, token);
  if (plain == -std::numeric_limits<double>::infinity())
    throw EvidenceError("oracle_log_ratio: token has zero plain probability");
  return s.log_prob(q, q.answer, prefix, token) - plain;
}

/// Scores every token of a trajectory into clipped evidence. Exact mode uses the
/// branch-conditional pair, with log 0 replaced by kLogZeroFloor.
inline std::vector<TokenEvidence> score_evidence(const Oracle& o, const Query& q, std::span<const int> tokens,
                                                 double clip) {
  std::vector<TokenEvidence> ev;
  ev.reserve(tokens.size());
  if (o.mode == OracleMode::exact_oracle) {
    Enumerator en(o.policy(), q);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const ExactConditionals c = exact_conditionals(en, tokens.first(t));
      if (c.marginal.at(static_cast<std::size_t>(tokens[t])) == 0)
        throw EvidenceError("score_evidence: sampled token has zero plain probability");
      const auto [oracle_lp, plain_lp] = c.evidence_pair(tokens[t]);
      ev.push_back(make_token_evidence(oracle_lp, plain_lp, clip));
    }
    return ev;
  }
  const Scorer& s = o.scorer();
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto prefix = tokens.first(t);
    ev.push_back(make_token_evidence(s.log_prob(q, q.answer, prefix, tokens[t]),
                                     s.log_prob(q, std::nullopt, prefix, tokens[t]), clip));
  }
  return ev;
}

/// ε_t = KL(true success-conditional ‖ scorer's answer-conditioned row). Zero in
/// exact mode; NaN where the success branch is empty.
inline double oracle_kl_eps(const Oracle& o, const Query& q, std::span<const int> prefix) {
  if (o.mode == OracleMode::exact_oracle) return 0.0;
  const ExactConditionals c = exact_conditionals(o.policy(), q, prefix);
  if (c.value == 0) return std::numeric_limits<double>::quiet_NaN();
  return kl_divergence(c.success, o.scorer().distribution(q, q.answer, prefix));
}

/// KL(true failure-conditional ‖ scorer's plain row): the error of using the
/// plain marginal in place of the failure branch. NaN where that branch is empty.
inline double failure_branch_kl(const Oracle& o, const Query& q, std::span<const int> prefix) {
  const ExactConditionals c = exact_conditionals(o.policy(), q, prefix);
  if (c.value == 1) return std::numeric_limits<double>::quiet_NaN();
  const std::vector<double> plain = o.mode == OracleMode::exact_oracle
                                        ? c.failure
                                        : o.scorer().distribution(q, std::nullopt, prefix);
  return kl_divergence(c.failure, plain);
}

/// True and estimated log-ratios over a common denominator π(y | s):
/// exact = log p − log π, estimated = log q − log π, so estimated − exact = log q − log p.
struct SharedReferenceRatios {
  std::vector<double> success_conditional;  // p, the sampling law for the bias check
  std::vector<double> exact;
  std::vector<double> estimated;
  double eps = 0;                           // KL(p ‖ q)
};

inline SharedReferenceRatios shared_reference_ratios(const Oracle& o, const Query& q, std::span<const int> prefix) {
  const ExactConditionals c = exact_conditionals(o.policy(), q, prefix);
  if (c.value == 0) throw DomainError("shared_reference_ratios: success branch is empty at this prefix");
  const std::vector<double> qrow = o.mode == OracleMode::exact_oracle
                                       ? c.success
                                       : o.scorer().distribution(q, q.answer, prefix);
  SharedReferenceRatios r;
  r.success_conditional = c.success;
  r.eps = kl_divergence(c.success, qrow);
  const std::size_t K = c.marginal.size();
  const double ninf = -std::numeric_limits<double>::infinity();
  r.exact.assign(K, ninf);
  r.estimated.assign(K, ninf);
  for (std::size_t y = 0; y < K; ++y) {
    if (c.marginal[y] <= 0) continue;
    const double lpi = std::log(c.marginal[y]);
    if (c.success[y] > 0) r.exact[y] = std::log(c.success[y]) - lpi;
    if (qrow[y] > 0) r.estimated[y] = std::log(qrow[y]) - lpi;
  }
  return r;
}

struct OracleQualityReport {
  std::vector<double> eps;             // ε_t per position (NaN where undefined)
  std::vector<double> mean_bias;       // E_p[log λ̂ − log λ*] on the shared reference, = −ε_t
  std::vector<double> failure_gap;     // KL(true failure-conditional ‖ plain row)
  double cumulative = 0;               // Σ ε_t over defined positions
};

inline OracleQualityReport oracle_quality(const Oracle& o, const Query& q, std::span<const int> tokens) {
  OracleQualityReport r;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto prefix = tokens.first(t);
    const double e = oracle_kl_eps(o, q, prefix);
    r.eps.push_back(e);
    r.mean_bias.push_back(std::isnan(e) ? e : -e);
    r.failure_gap.push_back(failure_branch_kl(o, q, prefix));
    if (!std::isnan(e)) r.cumulative += e;
  }
  return r;
}

}  // namespace oppo
