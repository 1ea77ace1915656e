// SPDX-License-Identifier: Apache-2.0
#pragma once

// Property suites behind `oppo verify`. Each property reports how many cases
// it checked, how many violated it, and the worst observed error.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "oppo/analysis.hpp"
#include "oppo/baselines.hpp"
#include "oppo/env.hpp"
#include "oppo/evidence.hpp"
#include "oppo/exact.hpp"
#include "oppo/interop.hpp"
#include "oppo/oracle.hpp"
#include "oppo/trainer.hpp"

namespace oppo {

struct PropertyResult {
  std::string suite;
  std::string name;
  std::size_t checked = 0;
  std::size_t violations = 0;
  double worst = 0;      // largest observed error (meaning depends on the property)
  double tolerance = 0;

  bool pass() const { return checked > 0 && violations == 0; }

  void observe(double err) {
    ++checked;
    if (std::isnan(err) || err > tolerance) ++violations;
    if (std::isnan(err) || err > worst) worst = std::isnan(err) ? err : std::max(worst, err);
  }
};

inline const char* const kSuites[] = {"identities", "oracle_exactness", "bias", "variance", "gradients", "roundtrip"};

namespace vdetail {

using hp = boost::multiprecision::cpp_bin_float_50;

inline hp hp_sigmoid(const hp& l) { return 1 / (1 + exp(-l)); }

// Extended-real σ: ±∞ → 1 / 0.
inline double ext_sigmoid(double l) {
  if (l == std::numeric_limits<double>::infinity()) return 1.0;
  if (l == -std::numeric_limits<double>::infinity()) return 0.0;
  return sigmoid_logodds(l);
}

inline double ext_logit(double v) {
  if (v <= 0) return -std::numeric_limits<double>::infinity();
  if (v >= 1) return std::numeric_limits<double>::infinity();
  return std::log(v) - std::log1p(-v);
}

}  // namespace vdetail

inline std::vector<PropertyResult> verify_identities(std::uint64_t seed = 1, std::size_t n = 100000) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * U(rng); };
  std::vector<PropertyResult> out;

  PropertyResult sym{"identities", "sigmoid symmetry |l|<=50", 0, 0, 0, 1e-15};
  PropertyResult mono{"identities", "sigmoid increasing on grid", 0, 0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const double l = uni(-50, 50);
    sym.observe(std::abs(sigmoid_logodds(-l) - (1 - sigmoid_logodds(l))));
  }
  // Strict where neighbouring grid values are distinct doubles; σ rounds to 1 past l ≈ 36.
  double prev = sigmoid_logodds(-50);
  for (int i = 1; i <= 10000; ++i) {
    const double l = -50 + i * 0.01;
    const double v = sigmoid_logodds(l);
    mono.observe((std::abs(l) <= 30 ? v > prev : v >= prev) ? 0.0 : 1.0);
    prev = v;
  }
  out.push_back(sym);
  out.push_back(mono);

  PropertyResult closed{"identities", "closed form vs sigmoid difference (relative)", 0, 0, 0, 1e-12};
  PropertyResult lip{"identities", "|A| <= min(|log lambda|/4, 1)", 0, 0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const double l = uni(-30, 30), x = uni(-10, 10);
    const double a = advantage_from_logodds(l, x);
    const vdetail::hp ref = vdetail::hp_sigmoid(vdetail::hp(l) + x) - vdetail::hp_sigmoid(vdetail::hp(l));
    const double r = ref.convert_to<double>();
    closed.observe(r == 0 ? std::abs(a) : std::abs(a - r) / std::abs(r));
    lip.observe(std::abs(a) > std::min(std::abs(x) / 4, 1.0) ? 1.0 : 0.0);
  }
  out.push_back(closed);
  out.push_back(lip);

  PropertyResult tele{"identities", "telescoping sum of A = V_{T+1} - V_1", 0, 0, 0, 1e-12};
  PropertyResult cap{"identities", "max |A| <= 0.75 with C = 3", 0, 0, 0, 0.75};
  std::normal_distribution<double> N(0.0, 2.0);
  std::uniform_int_distribution<int> len(1, 64);
  for (std::size_t i = 0; i < n; ++i) {
    const int T = len(rng);
    std::vector<double> raw(static_cast<std::size_t>(T)), clipped(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      raw[t] = N(rng);
      clipped[t] = std::clamp(raw[t], -3.0, 3.0);
    }
    const double l0 = uni(-5, 5);
    tele.observe(std::abs(belief_trace(l0, raw).telescoping_gap()));
    double m = 0;
    for (double a : belief_trace(l0, clipped).raw_adv) m = std::max(m, std::abs(a));
    cap.checked++;
    cap.worst = std::max(cap.worst, m);
    if (m > 0.75) cap.violations++;
  }
  out.push_back(tele);
  out.push_back(cap);

  PropertyResult zero{"identities", "A = 0 when lambda = 1 or v in {0,1}", 0, 0, 0, 0};
  for (std::size_t i = 0; i < 1000; ++i) {
    zero.observe(std::abs(advantage_exact(U(rng), 0.0)));
    zero.observe(std::abs(advantage_exact(0.0, uni(-10, 10))));
    zero.observe(std::abs(advantage_exact(1.0, uni(-10, 10))));
  }
  out.push_back(zero);

  PropertyResult anchor{"identities", "anchored sign in {0, sign(seq)}", 0, 0, 0, 0};
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < 2000; ++i) {
    const int G = 2 + static_cast<int>(i % 7);
    std::vector<int> rw(static_cast<std::size_t>(G));
    for (int& r : rw) r = coin(rng);
    const GroupRewards gr(rw);
    const auto seq = grpo_group_advantage(gr);
    TokenMatrix raw(static_cast<std::size_t>(G));
    for (auto& row : raw) {
      row.resize(static_cast<std::size_t>(len(rng) % 9));
      for (double& a : row) a = uni(-0.7, 0.7);
    }
    const auto na = anchor_and_normalize(raw, seq, 1e-8);
    for (std::size_t r = 0; r < raw.size(); ++r)
      for (double a : na.anchored[r]) anchor.observe(sign_of(a) == 0 || sign_of(a) == sign_of(seq[r]) ? 0.0 : 1.0);
  }
  out.push_back(anchor);

  PropertyResult prior{"identities", "prior log-odds finite for alpha >= 0.1", 0, 0, 0, 0};
  for (int G = 1; G <= 64; ++G)
    for (int k = 0; k <= G; ++k)
      for (double a : {0.1, 0.5, 1.0, 2.0, 10.0}) {
        const auto p = prior_from_group(k, G, a);
        prior.observe(std::isfinite(p.logit0) && p.v0 > 0 && p.v0 < 1 ? 0.0 : 1.0);
      }
  out.push_back(prior);
  return out;
}

/// Environments used by the enumeration suites: parity chains and a prefix lock.
inline std::vector<EnvSpec> exactness_envs() {
  EnvSpec a;
  a.vocab_size = 3, a.horizon = 6, a.answer_space = 3, a.num_queries = 3;
  EnvSpec b;
  b.vocab_size = 6, b.horizon = 5, b.answer_space = 4, b.num_queries = 4, b.window = 2;
  EnvSpec c;
  c.vocab_size = 4, c.horizon = 8, c.answer_space = 4, c.reward_rule = RewardRule::prefix_lock, c.pivot = 3,
  c.lock_length = 2, c.num_queries = 4;
  return {a, b, c};
}

inline std::vector<PropertyResult> verify_oracle_exactness(std::uint64_t seed = 2, int trajectories = 200) {
  PropertyResult rec{"oracle_exactness", "recursion with exact lambda* matches enumeration", 0, 0, 0, 1e-10};
  PropertyResult ltp{"oracle_exactness", "law of total probability", 0, 0, 0, 1e-12};
  PropertyResult lock{"oracle_exactness", "prefix_lock belief committed after the lock", 0, 0, 0, 0};
  PropertyResult flat{"oracle_exactness", "prefix_lock belief flat before the pivot (window 0)", 0, 0, 0, 1e-12};
  std::mt19937_64 rng(seed);
  for (const EnvSpec& env : exactness_envs()) {
    TabularPolicy pol(env);
    randomize_policy(pol, rng(), 1.0);
    for (int n = 0; n < trajectories; ++n) {
      const Query q = env.sample_query(rng);
      const auto tr = rollout_group(pol, q, 2, rng()).front();
      Enumerator en(pol, q);
      const std::span<const int> toks(tr.tokens);
      double l = vdetail::ext_logit(en.mass({}).success);
      for (int t = 0; t < env.horizon; ++t) {
        const auto c = exact_conditionals(en, toks.first(static_cast<std::size_t>(t)));
        ltp.observe(c.total_probability_gap());
        l += c.log_bayes[static_cast<std::size_t>(tr.tokens[t])];
        const double v_enum = en.mass(toks.first(static_cast<std::size_t>(t) + 1)).success;
        rec.observe(std::abs(vdetail::ext_sigmoid(l) - v_enum));
        if (env.reward_rule == RewardRule::prefix_lock && t + 1 >= env.pivot + env.lock_length - 1)
          lock.observe(v_enum <= 0.01 || v_enum >= 0.99 ? 0.0 : 1.0);
      }
    }
  }
  EnvSpec w0 = exactness_envs()[2];
  w0.window = 0;
  TabularPolicy pol(w0);
  randomize_policy(pol, rng(), 1.0);
  for (int n = 0; n < trajectories; ++n) {
    const Query q = w0.sample_query(rng);
    const auto tr = rollout_group(pol, q, 2, rng()).front();
    Enumerator en(pol, q);
    const double v1 = en.mass({}).success;
    for (int t = 1; t < w0.pivot; ++t)
      flat.observe(std::abs(en.mass(std::span<const int>(tr.tokens).first(static_cast<std::size_t>(t))).success - v1));
  }
  return {rec, ltp, lock, flat};
}

/// Environment and miscalibrated self-oracle shared by the bias suite and its tests.
inline TabularPolicy miscalibrated_self_oracle(std::uint64_t seed) {
  EnvSpec env;
  env.vocab_size = 4, env.horizon = 5, env.answer_space = 3, env.num_queries = 3, env.window = 1;
  TabularPolicy pol(env);
  randomize_policy(pol, seed, 0.8, true, true);
  return pol;
}

/// Twenty fixed prefixes (lengths cycling through 0..T−1) with a non-empty success branch.
inline std::vector<std::pair<Query, std::vector<int>>> bias_prefixes(const TabularPolicy& pol, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::pair<Query, std::vector<int>>> out;
  const EnvSpec& env = pol.env();
  while (out.size() < 20) {
    const Query q = env.sample_query(rng);
    auto toks = rollout_group(pol, q, 2, rng()).front().tokens;
    toks.resize(out.size() % static_cast<std::size_t>(env.horizon));
    if (exact_success_prob(pol, q, toks) > 0) out.emplace_back(q, std::move(toks));
  }
  return out;
}

inline std::vector<PropertyResult> verify_bias(std::uint64_t seed = 3, std::size_t samples = 100000) {
  PropertyResult bias{"bias", "E_p[log lambda_hat - log lambda*] = -eps within 3 s.e.", 0, 0, 0, 3.0};
  PropertyResult sign{"bias", "mean bias is non-positive (eps >= 0)", 0, 0, 0, 0};
  const TabularPolicy pol = miscalibrated_self_oracle(seed);
  const Oracle o{OracleMode::self_oracle, &pol, nullptr};
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (const auto& [q, prefix] : bias_prefixes(pol, seed + 2)) {
    const auto r = shared_reference_ratios(o, q, prefix);
    double s = 0, ss = 0;
    for (std::size_t k = 0; k < samples; ++k) {
      const int y = sample_index(r.success_conditional, U(rng));
      const double d = r.estimated[y] - r.exact[y];
      s += d;
      ss += d * d;
    }
    const double n = static_cast<double>(samples), m = s / n;
    const double se = std::sqrt(std::max(0.0, (ss / n - m * m) / (n - 1)));
    bias.observe(se > 0 ? std::abs(m + r.eps) / se : (std::abs(m + r.eps) < 1e-12 ? 0.0 : INFINITY));
    sign.observe(r.eps >= 0 ? 0.0 : 1.0);
  }
  return {bias, sign};
}

inline std::vector<PropertyResult> verify_variance(std::uint64_t seed = 4, std::size_t inputs = 10000,
                                                   std::size_t draws = 100000) {
  PropertyResult arith{"variance", "gap >= bound >= 0", 0, 0, 0, 0};
  PropertyResult sim{"variance", "simulated gap matches analytic within 3 s.e.", 0, 0, 0, 3.0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (std::size_t i = 0; i < inputs; ++i) {
    VarianceCheckInput in;
    const std::size_t T = 1 + rng() % 20;
    for (std::size_t t = 0; t < T; ++t) {
      in.log_lambda.push_back(-5 + 10 * U(rng));
      const double u = U(rng);
      in.values.push_back(u < 0.1 ? 0.0 : (u > 0.9 ? 1.0 : U(rng)));
      in.var_h.push_back(2 * U(rng));
    }
    in.delta = 1e-3 + U(rng);
    in.gamma = std::max(1e-6, 0.25 * U(rng));
    const auto r = variance_gap_check(in);
    arith.observe(r.satisfied ? 0.0 : 1.0);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    VarianceCheckInput in;
    for (std::size_t t = 0; t < 8; ++t) {
      in.log_lambda.push_back(-3 + 6 * U(rng));
      in.values.push_back(U(rng));
      in.var_h.push_back(0.1 + U(rng));
    }
    const auto r = variance_gap_check(in);
    const auto s = simulate_variance_gap(in, draws, rng());
    sim.observe(std::abs(s.estimate - r.gap) / s.std_error);
  }
  return {arith, sim};
}

/// Perturbs logits around a rollout snapshot so ratios leave 1, resampling until
/// no ratio sits within `margin` of a clip kink.
inline bool ratios_clear_of_kinks(const TabularPolicy& pol, const std::vector<GroupBatch>& batches, double eps,
                                  double margin) {
  for (const auto& b : batches)
    for (const auto& tr : b.trajectories)
      for (std::size_t t = 0; t < tr.tokens.size(); ++t) {
        const double rho = std::exp(
            pol.log_prob(pol.key(b.query, std::nullopt, std::span<const int>(tr.tokens).first(t)), tr.tokens[t]) -
            tr.old_logp[t]);
        if (std::abs(rho - (1 + eps)) < margin || std::abs(rho - (1 - eps)) < margin) return false;
      }
  return true;
}

/// max_i |analytic_i − fd_i| / max_i |analytic_i| over every logit of every touched row.
inline double gradient_check_error(TabularPolicy& pol, const std::vector<GroupBatch>& batches, double eps, double h) {
  const Gradient g = surrogate_gradient(pol, batches, eps);
  std::set<ContextKey> rows;
  for (const auto& b : batches)
    for (const auto& tr : b.trajectories)
      for (std::size_t t = 0; t < tr.tokens.size(); ++t)
        rows.insert(pol.key(b.query, std::nullopt, std::span<const int>(tr.tokens).first(t)));
  double scale = 0, err = 0;
  for (const auto& k : rows) {
    const auto it = g.find(k);
    for (int y = 0; y < pol.env().vocab_size; ++y) {
      const double ga = it == g.end() ? 0.0 : it->second[static_cast<std::size_t>(y)];
      double& z = pol.mutable_logits(k)[static_cast<std::size_t>(y)];
      const double z0 = z;
      z = z0 + h;
      const double fp = surrogate_objective(pol, batches, eps);
      z = z0 - h;
      const double fm = surrogate_objective(pol, batches, eps);
      z = z0;
      const double fd = (fp - fm) / (2 * h);
      scale = std::max(scale, std::abs(ga));
      err = std::max(err, std::abs(ga - fd));
    }
  }
  return scale > 0 ? err / scale : err;
}

inline std::vector<PropertyResult> verify_gradients(std::uint64_t seed = 5) {
  std::vector<PropertyResult> out;
  EnvSpec env;
  env.vocab_size = 3, env.horizon = 3, env.answer_space = 3, env.num_queries = 2, env.window = 1;
  std::mt19937_64 rng(seed);
  for (Variant v : kAllVariants) {
    PropertyResult pr{"gradients", "finite differences, " + std::string(to_string(v)), 0, 0, 0, 1e-5};
    for (int rep = 0; rep < 4; ++rep) {
      EstimatorConfig est;
      est.variant = v;
      TabularPolicy pol(env);
      randomize_policy(pol, rng(), 0.7, true, true);
      const Oracle o{OracleMode::self_oracle, &pol, nullptr};
      std::vector<GroupBatch> batches;
      for (int b = 0; b < 2; ++b) {
        const Query q = env.sample_query(rng);
        GroupBatch gb = make_batch(pol, q, 6, rng());
        attach_evidence(gb, o, est.effective_clip());
        compute_advantages(gb, est);
        batches.push_back(std::move(gb));
      }
      TabularPolicy moved = pol;
      std::normal_distribution<double> nd(0.0, 0.3);
      do {
        moved = pol;
        for (const auto& [k, row] : pol.table())
          if (k.answer < 0)
            for (double& z : moved.mutable_logits(k)) z += nd(rng);
      } while (!ratios_clear_of_kinks(moved, batches, est.surrogate_clip, 1e-3));
      pr.observe(gradient_check_error(moved, batches, est.surrogate_clip, 1e-5));
    }
    out.push_back(pr);
  }
  return out;
}

inline bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

inline bool same_bits(const TrajectoryRecord& a, const TrajectoryRecord& b) {
  auto opt_same = [](const std::optional<std::vector<double>>& x, const std::optional<std::vector<double>>& y) {
    return x.has_value() == y.has_value() && (!x || same_bits(*x, *y));
  };
  return a.query_id == b.query_id && a.traj_id == b.traj_id && a.group_id == b.group_id && a.tokens == b.tokens &&
         a.reward == b.reward && same_bits(a.logp_plain, b.logp_plain) && same_bits(a.logp_oracle, b.logp_oracle) &&
         opt_same(a.advantage, b.advantage) && opt_same(a.v_trace, b.v_trace) && a.extra == b.extra;
}

/// Random records with full-precision doubles; groups of 2..5 with distinct ids.
inline std::vector<std::vector<TrajectoryRecord>> random_records(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<std::vector<TrajectoryRecord>> groups;
  std::size_t made = 0;
  while (made < count) {
    const std::size_t gsize = std::min<std::size_t>(2 + rng() % 4, count - made);
    std::vector<TrajectoryRecord> g;
    const std::string gid = "g" + std::to_string(groups.size());
    for (std::size_t i = 0; i < gsize; ++i, ++made) {
      TrajectoryRecord r;
      r.query_id = "q" + std::to_string(rng() % 50);
      r.traj_id = gid + "/" + std::to_string(i);
      r.group_id = gid;
      const std::size_t T = 1 + rng() % 12;
      for (std::size_t t = 0; t < T; ++t) {
        r.tokens.push_back(static_cast<int>(rng() % 50000));
        r.logp_plain.push_back(-std::exp(-20 + 24 * U(rng)));
        r.logp_oracle.push_back(t % 5 == 0 ? -0.0 : -std::exp(-20 + 24 * U(rng)));
      }
      r.reward = static_cast<int>(rng() % 2);
      if (rng() % 2) {
        std::vector<double> a(T), v(T + 1);
        for (double& x : a) x = (U(rng) - 0.5) * std::exp(10 * (U(rng) - 0.5));
        for (double& x : v) x = U(rng);
        r.advantage = a;
        r.v_trace = v;
      }
      if (rng() % 3 == 0) r.extra["note"] = "sample " + std::to_string(made);
      g.push_back(std::move(r));
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

inline std::vector<PropertyResult> verify_roundtrip(std::uint64_t seed = 6, std::size_t records = 1000) {
  PropertyResult rt{"roundtrip", "write then read is bit-identical", 0, 0, 0, 0};
  const auto groups = random_records(records, seed);
  std::stringstream ss;
  write_advantage_log(groups, ss);
  const auto back = read_trajectory_log(ss);
  if (back.size() != groups.size()) {
    rt.observe(1.0);
  } else {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (back[g].size() != groups[g].size()) {
        rt.observe(1.0);
        continue;
      }
      for (std::size_t i = 0; i < groups[g].size(); ++i) rt.observe(same_bits(groups[g][i], back[g][i]) ? 0.0 : 1.0);
    }
  }

  PropertyResult cp{"roundtrip", "offline scoring equals in-process advantages", 0, 0, 0, 0};
  EnvSpec env;
  TabularPolicy pol(env);
  std::mt19937_64 rng(seed + 1);
  randomize_policy(pol, rng(), 1.0);
  for (Variant v : kAllVariants) {
    EstimatorConfig est;
    est.variant = v;
    est.oracle_mode = OracleMode::exact_oracle;
    const Oracle o{OracleMode::exact_oracle, &pol, nullptr};
    for (int b = 0; b < 3; ++b) {
      GroupBatch gb = make_batch(pol, env.sample_query(rng), 8, rng());
      attach_evidence(gb, o, est.effective_clip());
      compute_advantages(gb, est);
      std::stringstream io;
      write_records(io, export_batch(gb, "b" + std::to_string(b)));
      auto groups2 = read_trajectory_log(io);
      score_log(groups2, est);
      for (std::size_t i = 0; i < gb.trajectories.size(); ++i) {
        const auto& rec = groups2.at(0).at(i);
        const bool adv_ok = rec.advantage && same_bits(*rec.advantage, gb.trajectories[i].advantage);
        const bool v_ok = rec.v_trace && same_bits(*rec.v_trace, gb.traces.at(i).values);
        cp.observe(adv_ok && v_ok ? 0.0 : 1.0);
      }
    }
  }
  return {rt, cp};
}

inline std::vector<PropertyResult> run_suite(const std::string& name) {
  if (name == "identities") return verify_identities();
  if (name == "oracle_exactness") return verify_oracle_exactness();
  if (name == "bias") return verify_bias();
  if (name == "variance") return verify_variance();
  if (name == "gradients") return verify_gradients();
  if (name == "roundtrip") return verify_roundtrip();
  if (name == "all") {
    std::vector<PropertyResult> all;
    for (const char* s : kSuites)
      for (auto& r : run_suite(s)) all.push_back(std::move(r));
    return all;
  }
  throw ConfigError("unknown verification suite '" + name + "'");
}

}  // namespace oppo
