// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run directories for training and sweeps. Runs execute on a bounded worker
// pool; results are collected by index so output files do not depend on
// scheduling.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oppo/config.hpp"
#include "oppo/error.hpp"
#include "oppo/trainer.hpp"

namespace oppo {

/// Shortest round-trip decimal form; "nan" and "inf" spelled out.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// Runs jobs 0..n-1 on at most `workers` threads (0: hardware concurrency).
/// The first exception thrown by any job is rethrown after all threads join.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& job) {
  unsigned w = workers > 0 ? static_cast<unsigned>(workers) : std::max(1u, std::thread::hardware_concurrency());
  w = static_cast<unsigned>(std::min<std::size_t>(w, n));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < w; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
          next.store(n);
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

inline const char* const kMetricsHeader =
    "step,mean_reward,entropy,surrogate_clip_fraction,evidence_clip_fraction,telescoping_residual,"
    "sign_flip_fraction\n";

inline std::string metrics_csv(const std::vector<TrainMetrics>& tl) {
  std::ostringstream os;
  os << kMetricsHeader;
  for (const auto& m : tl)
    os << m.step << ',' << fmt(m.mean_reward) << ',' << fmt(m.entropy) << ',' << fmt(m.surrogate_clip_fraction) << ','
       << fmt(m.evidence_clip_fraction) << ',' << fmt(m.telescoping_residual) << ',' << fmt(m.sign_flip_fraction)
       << '\n';
  return os.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + p.string() + "'");
  f << text;
  if (!f) throw ConfigError("write to '" + p.string() + "' failed");
}

struct RunSummary {
  std::uint64_t seed = 0;
  double initial_success = 0;
  double final_success = 0;
  double final_greedy_success = 0;
  bool enumerated = true;
};

inline double mean_final(const std::vector<RunSummary>& rs) {
  double s = 0;
  for (const auto& r : rs) s += r.final_success;
  return rs.empty() ? std::nan("") : s / static_cast<double>(rs.size());
}

inline double stdev_final(const std::vector<RunSummary>& rs) {
  if (rs.size() < 2) return 0;
  const double m = mean_final(rs);
  double ss = 0;
  for (const auto& r : rs) ss += (r.final_success - m) * (r.final_success - m);
  return std::sqrt(ss / static_cast<double>(rs.size() - 1));
}

inline std::string summary_csv(const ExperimentConfig& cfg, const std::vector<RunSummary>& rs) {
  std::ostringstream os;
  os << "variant,oracle_mode,seed,steps,initial_success,final_success,final_greedy_success,success_enumerated\n";
  const std::string v(to_string(cfg.estimator.variant)), m(to_string(cfg.estimator.oracle_mode));
  double a = 0, b = 0, c = 0;
  for (const auto& r : rs) {
    os << v << ',' << m << ',' << r.seed << ',' << cfg.trainer.steps << ',' << fmt(r.initial_success) << ','
       << fmt(r.final_success) << ',' << fmt(r.final_greedy_success) << ',' << (r.enumerated ? 1 : 0) << '\n';
    a += r.initial_success;
    b += r.final_success;
    c += r.final_greedy_success;
  }
  const double n = static_cast<double>(rs.size());
  os << v << ',' << m << ",mean," << cfg.trainer.steps << ',' << fmt(a / n) << ',' << fmt(b / n) << ','
     << fmt(c / n) << ',' << (rs.empty() || rs.front().enumerated ? 1 : 0) << '\n';
  return os.str();
}

/// Writes one run directory: seed_<s>.csv, policy_seed_<s>.txt, summary.csv, config.resolved.json.
/// `parallel` = false runs the seeds sequentially (the caller is already a worker).
inline std::vector<RunSummary> run_train(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                                         bool parallel = true) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  write_text(dir / "config.resolved.json", to_json(cfg).dump(2) + "\n");
  const TeacherSource teacher = cfg.teacher_source();
  std::vector<RunSummary> out(cfg.trainer.seeds.size());
  parallel_for(out.size(), parallel ? cfg.workers : 1, [&](std::size_t i) {
    const std::uint64_t seed = cfg.trainer.seeds[i];
    RunResult r = train_run(cfg.env, cfg.estimator, cfg.trainer, seed, teacher);
    write_text(dir / ("seed_" + std::to_string(seed) + ".csv"), metrics_csv(r.timeline));
    r.policy.save((dir / ("policy_seed_" + std::to_string(seed) + ".txt")).string());
    out[i] = {seed, r.initial_success, r.final_success, r.final_greedy_success, r.success_enumerated};
  });
  write_text(dir / "summary.csv", summary_csv(cfg, out));
  return out;
}

struct SweepPoint {
  double evidence_clip = 0;
  double alpha = 0;
  int group_size = 0;
  Variant variant = Variant::oppo_full;

  std::string dir_name() const {
    return "C=" + fmt(evidence_clip) + "_alpha=" + fmt(alpha) + "_G=" + std::to_string(group_size) + "_" +
           std::string(to_string(variant));
  }
};

inline std::vector<SweepPoint> sweep_grid(const ExperimentConfig& cfg) {
  const auto& s = cfg.sweep;
  const std::vector<double> cs = s.evidence_clip.empty() ? std::vector<double>{cfg.estimator.evidence_clip} : s.evidence_clip;
  const std::vector<double> as = s.alpha.empty() ? std::vector<double>{cfg.estimator.alpha} : s.alpha;
  const std::vector<int> gs = s.group_size.empty() ? std::vector<int>{cfg.trainer.group_size} : s.group_size;
  const std::vector<Variant> vs = s.variant.empty() ? std::vector<Variant>{cfg.estimator.variant} : s.variant;
  std::vector<SweepPoint> grid;
  for (double c : cs)
    for (double a : as)
      for (int g : gs)
        for (Variant v : vs) grid.push_back({c, a, g, v});
  return grid;
}

struct SweepResult {
  std::vector<SweepPoint> grid;
  std::vector<std::vector<RunSummary>> runs;  // per grid point, per seed
};

/// Cartesian grid × seeds. Writes runs/<point>/ plus aggregate.csv, and deltas.csv
/// (oppo_full − grpo_uniform per remaining axis values) when both variants are swept.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  if (cfg.sweep.empty()) throw ConfigError("sweep requested but no sweep axes are set");
  cfg.validate();
  std::filesystem::create_directories(dir);
  write_text(dir / "config.resolved.json", to_json(cfg).dump(2) + "\n");
  SweepResult res;
  res.grid = sweep_grid(cfg);
  std::vector<ExperimentConfig> point_cfg;
  for (const auto& p : res.grid) {
    ExperimentConfig c = cfg;
    c.sweep = {};
    c.estimator.evidence_clip = p.evidence_clip;
    c.estimator.alpha = p.alpha;
    c.trainer.group_size = p.group_size;
    c.estimator.variant = p.variant;
    c.output_dir = (dir / "runs" / p.dir_name()).string();
    point_cfg.push_back(std::move(c));
  }
  const std::size_t ns = cfg.trainer.seeds.size();
  res.runs.assign(res.grid.size(), std::vector<RunSummary>(ns));
  const TeacherSource teacher = cfg.teacher_source();
  parallel_for(res.grid.size() * ns, cfg.workers, [&](std::size_t job) {
    const std::size_t p = job / ns, k = job % ns;
    const ExperimentConfig& c = point_cfg[p];
    const std::uint64_t seed = c.trainer.seeds[k];
    RunResult r = train_run(c.env, c.estimator, c.trainer, seed, teacher);
    const std::filesystem::path rd(c.output_dir);
    std::filesystem::create_directories(rd);
    write_text(rd / ("seed_" + std::to_string(seed) + ".csv"), metrics_csv(r.timeline));
    res.runs[p][k] = {seed, r.initial_success, r.final_success, r.final_greedy_success, r.success_enumerated};
  });
  for (std::size_t p = 0; p < res.grid.size(); ++p) {
    const std::filesystem::path rd(point_cfg[p].output_dir);
    write_text(rd / "config.resolved.json", to_json(point_cfg[p]).dump(2) + "\n");
    write_text(rd / "summary.csv", summary_csv(point_cfg[p], res.runs[p]));
  }

  std::ostringstream agg;
  agg << "evidence_clip,alpha,group_size,variant,seeds,mean_final_success,std_final_success,mean_greedy_success\n";
  for (std::size_t p = 0; p < res.grid.size(); ++p) {
    const auto& g = res.grid[p];
    double greedy = 0;
    for (const auto& r : res.runs[p]) greedy += r.final_greedy_success;
    agg << fmt(g.evidence_clip) << ',' << fmt(g.alpha) << ',' << g.group_size << ',' << to_string(g.variant) << ','
        << ns << ',' << fmt(mean_final(res.runs[p])) << ',' << fmt(stdev_final(res.runs[p])) << ','
        << fmt(greedy / static_cast<double>(ns)) << '\n';
  }
  write_text(dir / "aggregate.csv", agg.str());

  const auto& vs = cfg.sweep.variant;
  const bool both = std::find(vs.begin(), vs.end(), Variant::oppo_full) != vs.end() &&
                    std::find(vs.begin(), vs.end(), Variant::grpo_uniform) != vs.end();
  if (both) {
    std::ostringstream d;
    d << "evidence_clip,alpha,group_size,oppo_full,grpo_uniform,delta\n";
    for (std::size_t p = 0; p < res.grid.size(); ++p) {
      if (res.grid[p].variant != Variant::oppo_full) continue;
      for (std::size_t q = 0; q < res.grid.size(); ++q) {
        const auto& a = res.grid[p];
        const auto& b = res.grid[q];
        if (b.variant != Variant::grpo_uniform || a.evidence_clip != b.evidence_clip || a.alpha != b.alpha ||
            a.group_size != b.group_size)
          continue;
        const double x = mean_final(res.runs[p]), y = mean_final(res.runs[q]);
        d << fmt(a.evidence_clip) << ',' << fmt(a.alpha) << ',' << a.group_size << ',' << fmt(x) << ',' << fmt(y)
          << ',' << fmt(x - y) << '\n';
      }
    }
    write_text(dir / "deltas.csv", d.str());
  }
  return res;
}

}  // namespace oppo
