// SPDX-License-Identifier: Apache-2.0
#pragma once

// Fixed-horizon token environments with a verifiable terminal reward, and a
// tabular softmax policy over contexts.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "oppo/error.hpp"

namespace oppo {

enum class RewardRule {
  parity_chain,  // R = 1 iff the sum of all token ids ≡ y* (mod M)
  prefix_lock,   // R = 1 iff the tokens of the lock span sum to y* (mod M); the rest is filler
};

inline std::string_view to_string(RewardRule r) {
  return r == RewardRule::parity_chain ? "parity_chain" : "prefix_lock";
}

inline RewardRule parse_reward_rule(std::string_view s) {
  if (s == "parity_chain") return RewardRule::parity_chain;
  if (s == "prefix_lock") return RewardRule::prefix_lock;
  throw ConfigError("unknown reward rule '" + std::string(s) + "'");
}

struct Query {
  int id = 0;
  int answer = 0;  // ground-truth y*
};

struct EnvSpec {
  int vocab_size = 4;   // K
  int horizon = 6;      // T
  int answer_space = 4; // M
  RewardRule reward_rule = RewardRule::parity_chain;
  int num_queries = 4;  // query q has answer q mod M
  int window = -1;      // last-w-token context; −1 means min(T, 3)
  int pivot = 1;        // prefix_lock: first (1-based) position of the lock span
  int lock_length = 1;  // prefix_lock: number of lock tokens

  static constexpr int kMaxExactVocab = 8;
  static constexpr int kMaxExactHorizon = 12;

  int context_window() const { return window < 0 ? std::min(horizon, 3) : window; }

  bool exact_mode() const { return vocab_size <= kMaxExactVocab && horizon <= kMaxExactHorizon; }

  Query query(int id) const { return {id, id % answer_space}; }

  template <class Rng>
  Query sample_query(Rng& rng) const {
    std::uniform_int_distribution<int> d(0, num_queries - 1);
    return query(d(rng));
  }

  // Whether 1-based position t contributes to the reward residue.
  bool counts_toward_reward(int t) const {
    if (reward_rule == RewardRule::parity_chain) return true;
    return t >= pivot && t < pivot + lock_length;
  }

  // Reward-relevant residue of a prefix (the running token sum mod M over counted positions).
  int residue(std::span<const int> prefix) const {
    long s = 0;
    for (std::size_t i = 0; i < prefix.size(); ++i)
      if (counts_toward_reward(static_cast<int>(i) + 1)) s += prefix[i];
    return static_cast<int>(s % answer_space);
  }

  int reward(int answer, std::span<const int> tokens) const {
    if (static_cast<int>(tokens.size()) != horizon) throw DomainError("reward: trajectory length must equal the horizon");
    return residue(tokens) == answer ? 1 : 0;
  }

  void validate() const {
    if (vocab_size < 2) throw ConfigError("env: vocab_size must be >= 2");
    if (horizon < 1) throw ConfigError("env: horizon must be >= 1");
    if (answer_space < 1 || answer_space > 255) throw ConfigError("env: answer_space must lie in [1, 255]");
    if (num_queries < 1) throw ConfigError("env: num_queries must be >= 1");
    if (window < -1) throw ConfigError("env: window must be >= 0 (or -1 for the default)");
    if (context_window() > 6) throw ConfigError("env: window must be <= 6");
    if (horizon > 31) throw ConfigError("env: horizon must be <= 31");
    if (reward_rule == RewardRule::prefix_lock) {
      if (pivot < 1 || lock_length < 1 || pivot + lock_length - 1 > horizon)
        throw ConfigError("env: lock span [pivot, pivot + lock_length) must fit in the horizon");
    }
    // Every answer must be reachable: residues reachable by the counted positions cover Z_M.
    const int counted = reward_rule == RewardRule::parity_chain ? horizon : lock_length;
    std::vector<char> reach(answer_space, 0);
    reach[0] = 1;
    for (int i = 0; i < counted; ++i) {
      std::vector<char> next(answer_space, 0);
      for (int r = 0; r < answer_space; ++r)
        if (reach[r])
          for (int k = 0; k < vocab_size; ++k) next[(r + k) % answer_space] = 1;
      reach.swap(next);
    }
    if (std::find(reach.begin(), reach.end(), 0) != reach.end())
      throw ConfigError("env: some answer has no rewarded sequence");
  }
};

/// Tabular context: query, optional answer feature, position, reward residue
/// and the last w tokens (padded with the symbol K before the sequence start).
struct ContextKey {
  int query = 0;
  int answer = -1;  // −1: plain context
  int position = 0; // tokens emitted so far
  int residue = 0;
  std::uint64_t window = 0;

  auto operator<=>(const ContextKey&) const = default;
};

inline ContextKey make_context(const EnvSpec& env, int query, std::optional<int> answer,
                               std::span<const int> prefix) {
  ContextKey k;
  k.query = query;
  k.answer = answer ? *answer : -1;
  k.position = static_cast<int>(prefix.size());
  k.residue = env.residue(prefix);
  const int w = env.context_window();
  std::uint64_t code = 0;
  for (int j = 0; j < w; ++j) {
    const long idx = static_cast<long>(prefix.size()) - 1 - j;
    const int sym = idx >= 0 ? prefix[idx] : env.vocab_size;
    code = code * static_cast<std::uint64_t>(env.vocab_size + 1) + static_cast<std::uint64_t>(sym);
  }
  k.window = code;
  return k;
}

inline double log_sum_exp(std::span<const double> x) {
  double m = -INFINITY;
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

/// Anything that can score a token under the plain or answer-conditioned context.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual const EnvSpec& env() const = 0;
  virtual std::vector<double> distribution(const Query& q, std::optional<int> answer,
                                           std::span<const int> prefix) const = 0;
  virtual double log_prob(const Query& q, std::optional<int> answer, std::span<const int> prefix,
                          int token) const {
    return std::log(distribution(q, answer, prefix).at(static_cast<std::size_t>(token)));
  }
};

enum class PolicyRole { student, frozen_teacher };

class TabularPolicy : public Scorer {
 public:
  using Row = std::vector<double>;
  using Table = std::map<ContextKey, Row>;

  explicit TabularPolicy(EnvSpec env, PolicyRole role = PolicyRole::student) : env_(env), role_(role) {
    env_.validate();
  }

  const EnvSpec& env() const override { return env_; }
  PolicyRole role() const { return role_; }
  void set_role(PolicyRole r) { role_ = r; }

  const Table& table() const { return rows_; }
  std::size_t num_rows() const { return rows_.size(); }

  ContextKey key(const Query& q, std::optional<int> answer, std::span<const int> prefix) const {
    return make_context(env_, q.id, answer, prefix);
  }

  // Logits of a context; rows never written are all-zero (uniform).
  Row logits(const ContextKey& k) const {
    auto it = rows_.find(k);
    return it == rows_.end() ? Row(env_.vocab_size, 0.0) : it->second;
  }

  Row& mutable_logits(const ContextKey& k) {
    auto it = rows_.find(k);
    if (it == rows_.end()) it = rows_.emplace(k, Row(env_.vocab_size, 0.0)).first;
    return it->second;
  }

  std::vector<double> probs(const ContextKey& k) const {
    auto it = rows_.find(k);
    if (it == rows_.end()) return std::vector<double>(env_.vocab_size, 1.0 / env_.vocab_size);
    const Row& r = it->second;
    const double lse = log_sum_exp(r);
    std::vector<double> p(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) p[i] = std::exp(r[i] - lse);
    return p;
  }

  double log_prob(const ContextKey& k, int token) const {
    check_token(token);
    auto it = rows_.find(k);
    if (it == rows_.end()) return -std::log(static_cast<double>(env_.vocab_size));
    return it->second[token] - log_sum_exp(it->second);
  }

  double entropy(const ContextKey& k) const {
    double h = 0;
    for (double p : probs(k))
      if (p > 0) h -= p * std::log(p);
    return h;
  }

  std::vector<double> distribution(const Query& q, std::optional<int> answer,
                                   std::span<const int> prefix) const override {
    return probs(key(q, answer, prefix));
  }

  double log_prob(const Query& q, std::optional<int> answer, std::span<const int> prefix,
                  int token) const override {
    return log_prob(key(q, answer, prefix), token);
  }

  // Text format: header, then one "query answer position residue window token logit" line per entry.
  void save(std::ostream& os) const {
    os << "# oppo-policy v1\n";
    os << "# env vocab_size=" << env_.vocab_size << " horizon=" << env_.horizon
       << " answer_space=" << env_.answer_space << " window=" << env_.context_window() << "\n";
    os << "# columns: query answer position residue window token logit\n";
    char buf[64];
    for (const auto& [k, row] : rows_)
      for (int t = 0; t < env_.vocab_size; ++t) {
        auto res = std::to_chars(buf, buf + sizeof buf, row[t]);
        os << k.query << ' ' << k.answer << ' ' << k.position << ' ' << k.residue << ' ' << k.window << ' ' << t
           << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf)) << '\n';
      }
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write policy table '" + path + "'");
    save(f);
  }

  static TabularPolicy load(std::istream& is, const EnvSpec& env, PolicyRole role) {
    TabularPolicy p(env, role);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      ContextKey k;
      int tok = 0;
      std::string logit_text;
      if (!(ss >> k.query >> k.answer >> k.position >> k.residue >> k.window >> tok >> logit_text))
        throw ParseError(lineno, "policy table: expected 7 columns");
      double logit = 0;
      auto res = std::from_chars(logit_text.data(), logit_text.data() + logit_text.size(), logit);
      if (res.ec != std::errc() || !std::isfinite(logit)) throw ParseError(lineno, "policy table: bad logit");
      if (tok < 0 || tok >= env.vocab_size) throw ParseError(lineno, "policy table: token outside vocabulary");
      p.mutable_logits(k)[tok] = logit;
    }
    return p;
  }

  static TabularPolicy load(const std::string& path, const EnvSpec& env, PolicyRole role) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read policy table '" + path + "'");
    return load(f, env, role);
  }

 private:
  void check_token(int token) const {
    if (token < 0 || token >= env_.vocab_size) throw DomainError("token outside vocabulary");
  }

  EnvSpec env_;
  PolicyRole role_;
  Table rows_;
};

/// Gives every reachable plain row (and, with `answer_rows`, every row conditioned on
/// the query's own answer) independent N(0, scale²) logits. Deterministic in `seed`.
inline void randomize_policy(TabularPolicy& policy, std::uint64_t seed, double scale, bool plain_rows = true,
                             bool answer_rows = false) {
  const EnvSpec& env = policy.env();
  if (!env.exact_mode()) throw SizeError("randomize_policy: environment exceeds enumeration bounds");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  std::map<ContextKey, bool> seen;
  std::vector<int> prefix;
  // Keys fix their whole subtree of keys, so each distinct key is expanded once.
  auto dfs = [&](auto&& self, const Query& q, std::optional<int> ans) -> void {
    const ContextKey k = policy.key(q, ans, prefix);
    if (!seen.emplace(k, true).second) return;
    auto& row = policy.mutable_logits(k);
    for (double& z : row) z = nd(rng);
    if (static_cast<int>(prefix.size()) + 1 >= env.horizon) return;
    for (int y = 0; y < env.vocab_size; ++y) {
      prefix.push_back(y);
      self(self, q, ans);
      prefix.pop_back();
    }
  };
  for (int id = 0; id < env.num_queries; ++id) {
    const Query q = env.query(id);
    if (plain_rows) dfs(dfs, q, std::nullopt);
    if (answer_rows) dfs(dfs, q, q.answer);
  }
}

struct SampledTrajectory {
  std::vector<int> tokens;
  int reward = 0;
};

/// Draws one token from a probability vector with a uniform variate u ∈ [0, 1).
inline int sample_index(std::span<const double> p, double u) {
  double c = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    c += p[i];
    if (u < c) return static_cast<int>(i);
  }
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0) return static_cast<int>(i);
  return static_cast<int>(p.size()) - 1;
}

/// G trajectories from the plain-context policy; deterministic in `seed`.
inline std::vector<SampledTrajectory> rollout_group(const TabularPolicy& policy, const Query& q, int group_size,
                                                    std::uint64_t seed) {
  if (group_size < 2) throw ConfigError("rollout_group: group size must be >= 2");
  const EnvSpec& env = policy.env();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<SampledTrajectory> out(static_cast<std::size_t>(group_size));
  for (auto& tr : out) {
    tr.tokens.reserve(env.horizon);
    for (int t = 0; t < env.horizon; ++t) {
      const auto p = policy.probs(policy.key(q, std::nullopt, tr.tokens));
      tr.tokens.push_back(sample_index(p, unif(rng)));
    }
    tr.reward = env.reward(q.answer, tr.tokens);
  }
  return out;
}

}  // namespace oppo
