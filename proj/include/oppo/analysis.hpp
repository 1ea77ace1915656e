// SPDX-License-Identifier: Apache-2.0
#pragma once

// Diagnostics over belief traces: telescoping residuals, Brier calibration,
// the state-blind vs Bayesian variance gap, and credit concentration.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "oppo/error.hpp"
#include "oppo/evidence.hpp"

namespace oppo {

/// Nearest-rank percentile of an unsorted sample; q in (0, 1].
inline double percentile(std::vector<double> x, double q) {
  if (x.empty()) return std::nan("");
  std::sort(x.begin(), x.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(x.size())));
  return x[std::clamp<std::size_t>(rank, 1, x.size()) - 1];
}

/// 1-based length quartile of each length: 1 + #{nearest-rank quartile cuts strictly below it}.
inline std::vector<int> length_quartiles(std::span<const std::size_t> lengths) {
  std::vector<double> l(lengths.begin(), lengths.end());
  const double q1 = percentile(l, 0.25), q2 = percentile(l, 0.5), q3 = percentile(l, 0.75);
  std::vector<int> out;
  out.reserve(lengths.size());
  for (double x : l) out.push_back(1 + (q1 < x) + (q2 < x) + (q3 < x));
  return out;
}

struct ResidualStratum {
  int quartile = 1;
  int outcome = 0;
  std::size_t count = 0;
  double mean = 0;
  double p95 = 0;
};

struct ResidualReport {
  std::vector<double> residual;  // per trajectory
  double mean = 0;
  double p95 = 0;
  std::vector<ResidualStratum> strata;  // non-empty cells of quartile × outcome
};

/// residual_i = |Σ_t A_t − (R_i − V̂_0,i)|, V̂_0 being the prior belief of each trace.
inline ResidualReport telescoping_residual_report(std::span<const BeliefTrace> traces, std::span<const int> rewards,
                                                  std::span<const double> priors) {
  if (traces.size() != rewards.size() || traces.size() != priors.size())
    throw DomainError("telescoping_residual_report: traces, rewards and priors must align");
  ResidualReport rep;
  if (traces.empty()) return rep;
  std::vector<std::size_t> lens;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    double s = 0;
    for (double a : traces[i].raw_adv) s += a;
    rep.residual.push_back(std::abs(s - (rewards[i] - priors[i])));
    lens.push_back(traces[i].length());
  }
  double tot = 0;
  for (double r : rep.residual) tot += r;
  rep.mean = tot / static_cast<double>(rep.residual.size());
  rep.p95 = percentile(rep.residual, 0.95);
  const std::vector<int> quart = length_quartiles(lens);
  for (int q = 1; q <= 4; ++q)
    for (int o = 0; o <= 1; ++o) {
      std::vector<double> cell;
      for (std::size_t i = 0; i < traces.size(); ++i)
        if (quart[i] == q && rewards[i] == o) cell.push_back(rep.residual[i]);
      if (cell.empty()) continue;
      double m = 0;
      for (double r : cell) m += r;
      rep.strata.push_back({q, o, cell.size(), m / static_cast<double>(cell.size()), percentile(cell, 0.95)});
    }
  return rep;
}

/// (1/N) Σ (V_i − R_i)².
inline double brier_score(std::span<const double> values, std::span<const int> rewards) {
  if (values.empty()) throw DomainError("brier_score: empty sample");
  if (values.size() != rewards.size()) throw DomainError("brier_score: size mismatch");
  double s = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0 && values[i] <= 1)) throw DomainError("brier_score: value outside [0, 1]");
    const double d = values[i] - rewards[i];
    s += d * d;
  }
  return s / static_cast<double>(values.size());
}

/// 1-based positions ceil(kT/4), k = 1..4, at which V_t is read.
inline std::array<std::size_t, 4> brier_positions(std::size_t horizon) {
  std::array<std::size_t, 4> p{};
  for (std::size_t k = 1; k <= 4; ++k) p[k - 1] = std::max<std::size_t>(1, (k * horizon + 3) / 4);
  return p;
}

/// Brier score of V_t at t = T/4, T/2, 3T/4, T. `values[i]` holds V_1 .. V_{T_i+1} of
/// trajectory i; positions are taken per trajectory, so lengths may differ.
inline std::array<double, 4> brier_report(std::span<const std::vector<double>> values, std::span<const int> rewards) {
  if (values.empty()) throw DomainError("brier_report: empty sample");
  if (values.size() != rewards.size()) throw DomainError("brier_report: size mismatch");
  std::array<std::vector<double>, 4> cols;
  for (const auto& v : values) {
    if (v.size() < 2) throw DomainError("brier_report: trace needs at least one token");
    const auto pos = brier_positions(v.size() - 1);
    for (std::size_t k = 0; k < 4; ++k) cols[k].push_back(v[pos[k] - 1]);
  }
  std::array<double, 4> out{};
  for (std::size_t k = 0; k < 4; ++k) out[k] = brier_score(cols[k], rewards);
  return out;
}

struct VarianceCheckInput {
  std::vector<double> log_lambda;
  std::vector<double> values;  // V_t
  std::vector<double> var_h;   // Var[h_t] ≥ 0
  double delta = 0.05;
  double gamma = 0.1;

  std::vector<double> blind_weights() const { return log_lambda; }
  std::vector<double> bayes_weights() const {
    std::vector<double> w(log_lambda.size());
    for (std::size_t t = 0; t < w.size(); ++t) w[t] = values[t] * (1 - values[t]) * log_lambda[t];
    return w;
  }

  void validate() const {
    if (!(gamma > 0 && gamma <= 0.25)) throw DomainError("variance check: gamma must lie in (0, 1/4]");
    if (!(delta > 0)) throw DomainError("variance check: delta must be > 0");
    if (values.size() != log_lambda.size() || var_h.size() != log_lambda.size())
      throw DomainError("variance check: per-position inputs must align");
    for (std::size_t t = 0; t < values.size(); ++t) {
      if (!(values[t] >= 0 && values[t] <= 1)) throw DomainError("variance check: V_t outside [0, 1]");
      if (!(var_h[t] >= 0)) throw DomainError("variance check: negative variance");
      if (!std::isfinite(log_lambda[t])) throw DomainError("variance check: non-finite log λ");
    }
  }
};

struct VarianceCheckResult {
  double gap = 0;
  double bound = 0;
  bool satisfied = false;
  std::vector<std::size_t> determined;  // 0-based positions in the determined set
};

inline VarianceCheckResult variance_gap_check(const VarianceCheckInput& in) {
  in.validate();
  VarianceCheckResult r;
  // Both sums run in one pass so each partial bound stays below the partial gap after rounding.
  const double floor_factor = 1 - in.gamma * in.gamma;
  for (std::size_t t = 0; t < in.values.size(); ++t) {
    const double sw = in.values[t] * (1 - in.values[t]);
    const double e = in.log_lambda[t] * in.log_lambda[t] * in.var_h[t];
    r.gap += (1 - sw * sw) * e;
    if (std::abs(in.log_lambda[t]) >= in.delta && sw < in.gamma) {
      r.determined.push_back(t);
      r.bound += floor_factor * e;
    }
  }
  r.satisfied = r.gap >= r.bound && r.bound >= 0;
  return r;
}

struct VarianceSimulation {
  double estimate = 0;  // mean of ĝ_blind² − ĝ_Bayes² over paired draws
  double std_error = 0;
};

/// Monte Carlo estimate of Var[ĝ_blind] − Var[ĝ_Bayes] with ĝ = Σ w_t h_t and
/// independent zero-mean Gaussian h_t of variance Var[h_t]; both estimators share the draws.
inline VarianceSimulation simulate_variance_gap(const VarianceCheckInput& in, std::size_t draws, std::uint64_t seed) {
  in.validate();
  if (draws < 2) throw DomainError("simulate_variance_gap: need at least two draws");
  const auto wb = in.blind_weights();
  const auto wB = in.bayes_weights();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  double sum = 0, sumsq = 0;
  for (std::size_t k = 0; k < draws; ++k) {
    double gb = 0, gB = 0;
    for (std::size_t t = 0; t < wb.size(); ++t) {
      const double h = std::sqrt(in.var_h[t]) * n01(rng);
      gb += wb[t] * h;
      gB += wB[t] * h;
    }
    const double d = gb * gb - gB * gB;
    sum += d;
    sumsq += d * d;
  }
  const double n = static_cast<double>(draws);
  VarianceSimulation s;
  s.estimate = sum / n;
  s.std_error = std::sqrt(std::max(0.0, (sumsq / n - s.estimate * s.estimate) / (n - 1)));
  return s;
}

/// E_y[‖∇_z log softmax(z)_y‖²] for y ~ p: the expected squared score norm of a
/// tabular row, used as the Var[h_t] proxy on synthetic traces.
inline double expected_score_norm_sq(std::span<const double> p) {
  double s = 0;
  for (double x : p) s += x * x;
  return 1 - s;
}

/// Normalized cumulative mass after a descending sort, read at fractions k/points of the tokens.
inline std::vector<double> concentration_curve(std::vector<double> mass, std::size_t points = 20) {
  std::vector<double> out(points, 0.0);
  if (mass.empty() || points == 0) return out;
  for (double& m : mass) m = std::abs(m);
  std::sort(mass.begin(), mass.end(), std::greater<>());
  std::vector<double> cum(mass.size());
  double c = 0;
  for (std::size_t j = 0; j < mass.size(); ++j) cum[j] = (c += mass[j]);
  if (c == 0) return out;
  for (std::size_t k = 1; k <= points; ++k) {
    const auto j = static_cast<std::size_t>(std::ceil(static_cast<double>(k) * mass.size() / points));
    out[k - 1] = cum[std::clamp<std::size_t>(j, 1, mass.size()) - 1] / c;
  }
  return out;
}

/// Gini coefficient of |mass|: 0 for equal mass, 1 − 1/N when one token holds it all.
inline double concentration_index(std::vector<double> mass) {
  if (mass.empty()) return 0;
  for (double& m : mass) m = std::abs(m);
  std::sort(mass.begin(), mass.end(), std::greater<>());
  double total = 0;
  for (double m : mass) total += m;
  if (total == 0) return 0;
  const double n = static_cast<double>(mass.size());
  double area = 0, c = 0;
  for (double m : mass) area += (c += m) / total;
  return (2 * area - n - 1) / n;
}

struct StratRecord {
  std::size_t length = 0;
  int outcome = 0;
  std::vector<double> abs_adv;
  std::vector<double> abs_log_ratio;
};

struct StratifiedReport {
  std::string length_table;   // CSV: quartile,min_length,max_length,count,success_rate
  std::string concentration;  // CSV: token_fraction,abs_adv_mass,abs_log_ratio_mass
  double adv_index = 0;
  double log_ratio_index = 0;
};

inline StratifiedReport stratified_report(std::span<const StratRecord> recs, std::size_t points = 20) {
  StratifiedReport rep;
  std::ostringstream lt;
  lt << "quartile,min_length,max_length,count,success_rate\n";
  std::vector<std::size_t> lens;
  for (const auto& r : recs) lens.push_back(r.length);
  const auto q = length_quartiles(lens);
  for (int b = 1; b <= 4; ++b) {
    std::size_t n = 0, wins = 0, lo = SIZE_MAX, hi = 0;
    for (std::size_t i = 0; i < recs.size(); ++i)
      if (q[i] == b) {
        ++n;
        wins += recs[i].outcome == 1;
        lo = std::min(lo, recs[i].length);
        hi = std::max(hi, recs[i].length);
      }
    if (n == 0) continue;
    lt << b << ',' << lo << ',' << hi << ',' << n << ',' << static_cast<double>(wins) / static_cast<double>(n) << '\n';
  }
  rep.length_table = lt.str();
  std::vector<double> a, l;
  for (const auto& r : recs) {
    a.insert(a.end(), r.abs_adv.begin(), r.abs_adv.end());
    l.insert(l.end(), r.abs_log_ratio.begin(), r.abs_log_ratio.end());
  }
  const auto ca = concentration_curve(a, points), cl = concentration_curve(l, points);
  std::ostringstream cc;
  cc << "token_fraction,abs_adv_mass,abs_log_ratio_mass\n";
  for (std::size_t k = 0; k < points; ++k)
    cc << static_cast<double>(k + 1) / static_cast<double>(points) << ',' << ca[k] << ',' << cl[k] << '\n';
  rep.concentration = cc.str();
  rep.adv_index = concentration_index(a);
  rep.log_ratio_index = concentration_index(l);
  return rep;
}

}  // namespace oppo
