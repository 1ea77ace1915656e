// SPDX-License-Identifier: Apache-2.0
#pragma once

// Brute-force enumeration of continuations: exact success posteriors, exact
// branch-conditional next-token distributions and exact Bayes factors.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "oppo/env.hpp"
#include "oppo/error.hpp"

namespace oppo {

/// Stand-in for log 0 where a finite log-probability is required (serialized evidence).
inline constexpr double kLogZeroFloor = -1000.0;

/// Largest subtree (K^remaining leaves) that enumeration accepts.
inline constexpr double kMaxEnumerationLeaves = 16777216.0;

struct BranchMass {
  double success = 0;  // P(R = 1 | prefix)
  double failure = 0;  // P(R = 0 | prefix)
};

struct ContextKeyHash {
  std::size_t operator()(const ContextKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.query) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.answer + 1) + 0x7F4A7C159E3779B9ull + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.position) + 0x9E3779B9ull + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.residue) + 0x85EBCA6Bull + (h << 6) + (h >> 2);
    h ^= k.window + 0xC2B2AE35ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

/// Enumerates every continuation of a prefix under the plain-context policy.
/// Probability rows and subtree masses are cached per context key for the
/// lifetime of the object; the key (query, position, residue, window) fixes
/// every future context and the reward, so subtrees sharing a key share a mass.
/// The policy must not change while an Enumerator is alive.
class Enumerator {
 public:
  Enumerator(const TabularPolicy& policy, Query query) : policy_(policy), env_(policy.env()), query_(query) {
    if (!env_.exact_mode())
      throw SizeError("enumeration needs vocab_size <= " + std::to_string(EnvSpec::kMaxExactVocab) +
                      " and horizon <= " + std::to_string(EnvSpec::kMaxExactHorizon));
  }

  BranchMass mass(std::span<const int> prefix) {
    check_prefix(prefix);
    std::vector<int> buf(prefix.begin(), prefix.end());
    buf.reserve(static_cast<std::size_t>(env_.horizon));
    return recurse(buf);
  }

  const std::vector<double>& probs(std::span<const int> prefix) {
    const ContextKey k = policy_.key(query_, std::nullopt, prefix);
    auto it = cache_.find(k);
    if (it == cache_.end()) it = cache_.emplace(k, policy_.probs(k)).first;
    return it->second;
  }

  const EnvSpec& env() const { return env_; }
  const Query& query() const { return query_; }

 private:
  void check_prefix(std::span<const int> prefix) const {
    if (static_cast<int>(prefix.size()) > env_.horizon) throw DomainError("prefix longer than the horizon");
    for (int t : prefix)
      if (t < 0 || t >= env_.vocab_size) throw DomainError("prefix token outside vocabulary");
    const double leaves = std::pow(static_cast<double>(env_.vocab_size),
                                   static_cast<double>(env_.horizon - static_cast<int>(prefix.size())));
    if (leaves > kMaxEnumerationLeaves)
      throw SizeError("enumeration of " + std::to_string(leaves) + " continuations exceeds the limit");
  }

  BranchMass recurse(std::vector<int>& buf) {
    if (static_cast<int>(buf.size()) == env_.horizon) {
      return env_.reward(query_.answer, buf) ? BranchMass{1.0, 0.0} : BranchMass{0.0, 1.0};
    }
    const ContextKey k = policy_.key(query_, std::nullopt, buf);
    if (auto it = mass_.find(k); it != mass_.end()) return it->second;
    const std::vector<double> p = probs(buf);  // copy: the cache may rehash below
    BranchMass m;
    for (int y = 0; y < env_.vocab_size; ++y) {
      if (p[y] == 0) continue;
      buf.push_back(y);
      const BranchMass c = recurse(buf);
      buf.pop_back();
      m.success += p[y] * c.success;
      m.failure += p[y] * c.failure;
    }
    mass_.emplace(k, m);
    return m;
  }

  const TabularPolicy& policy_;
  const EnvSpec& env_;
  Query query_;
  std::unordered_map<ContextKey, std::vector<double>, ContextKeyHash> cache_;
  std::unordered_map<ContextKey, BranchMass, ContextKeyHash> mass_;
};

/// P(R = 1 | query, prefix) under the policy, by exhaustive enumeration.
inline double exact_success_prob(const TabularPolicy& policy, const Query& q, std::span<const int> prefix) {
  return Enumerator(policy, q).mass(prefix).success;
}

struct ExactConditionals {
  double value = 0;                  // V_t at the prefix
  std::vector<double> marginal;      // π(y | s)
  std::vector<double> success;       // P(y | s, R = 1); NaN when V_t = 0
  std::vector<double> failure;       // P(y | s, R = 0); NaN when V_t = 1
  std::vector<double> log_bayes;     // log λ*(y); ±∞ where a branch rules the token in or out
  std::vector<double> child_value;   // V_{t+1} after each token
  bool determined = false;           // V_t ∈ {0, 1}

  // Largest |marginal − (success·V + failure·(1 − V))| over tokens; 0 when determined.
  double total_probability_gap() const {
    if (determined) return 0;
    double g = 0;
    for (std::size_t y = 0; y < marginal.size(); ++y)
      g = std::max(g, std::abs(marginal[y] - (success[y] * value + failure[y] * (1 - value))));
    return g;
  }

  // Evidence pair whose difference is log λ*: (log success-conditional, log failure-conditional),
  // with probability zero mapped to kLogZeroFloor.
  std::pair<double, double> evidence_pair(int token) const {
    const auto safe_log = [](double p) { return (p > 0 && std::isfinite(p)) ? std::log(p) : kLogZeroFloor; };
    const std::size_t y = static_cast<std::size_t>(token);
    double o = std::isnan(success[y]) ? kLogZeroFloor : safe_log(success[y]);
    double s = std::isnan(failure[y]) ? kLogZeroFloor : safe_log(failure[y]);
    return {o, s};
  }
};

inline ExactConditionals exact_conditionals(Enumerator& en, std::span<const int> prefix) {
  const EnvSpec& env = en.env();
  if (static_cast<int>(prefix.size()) >= env.horizon) throw DomainError("exact_conditionals: prefix is complete");
  const int K = env.vocab_size;
  ExactConditionals c;
  c.marginal = en.probs(prefix);
  std::vector<BranchMass> child(static_cast<std::size_t>(K));
  std::vector<int> buf(prefix.begin(), prefix.end());
  BranchMass total;
  for (int y = 0; y < K; ++y) {
    buf.push_back(y);
    child[y] = en.mass(buf);
    buf.pop_back();
    total.success += c.marginal[y] * child[y].success;
    total.failure += c.marginal[y] * child[y].failure;
  }
  c.value = total.success;
  c.determined = total.success == 0 || total.failure == 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  c.success.assign(K, nan);
  c.failure.assign(K, nan);
  c.log_bayes.assign(K, nan);
  c.child_value.resize(K);
  const double log_odds_parent = std::log(total.success) - std::log(total.failure);
  for (int y = 0; y < K; ++y) {
    c.child_value[y] = child[y].success;
    if (total.success > 0) c.success[y] = c.marginal[y] * child[y].success / total.success;
    if (total.failure > 0) c.failure[y] = c.marginal[y] * child[y].failure / total.failure;
    if (c.marginal[y] == 0) continue;
    if (total.failure == 0) {
      c.log_bayes[y] = inf;
    } else if (total.success == 0) {
      c.log_bayes[y] = -inf;
    } else if (child[y].failure == 0) {
      c.log_bayes[y] = inf;
    } else if (child[y].success == 0) {
      c.log_bayes[y] = -inf;
    } else {
      c.log_bayes[y] = (std::log(child[y].success) - std::log(child[y].failure)) - log_odds_parent;
    }
  }
  return c;
}

inline ExactConditionals exact_conditionals(const TabularPolicy& policy, const Query& q,
                                            std::span<const int> prefix) {
  Enumerator en(policy, q);
  return exact_conditionals(en, prefix);
}

/// Expected success of the sampling policy, averaged over all queries.
inline double enumerated_success(const TabularPolicy& policy) {
  const EnvSpec& env = policy.env();
  double s = 0;
  for (int id = 0; id < env.num_queries; ++id) s += exact_success_prob(policy, env.query(id), {});
  return s / env.num_queries;
}

}  // namespace oppo
