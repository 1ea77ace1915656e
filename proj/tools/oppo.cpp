// SPDX-License-Identifier: Apache-2.0
//
// oppo: train, score, verify, sweep and analyze from the command line.
// Exit codes: 0 success, 1 usage or configuration error, 2 verification failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oppo/oppo.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerify = 2;

oppo::ExperimentConfig load_or_default(const std::string& path) {
  if (path.empty()) {
    oppo::ExperimentConfig c;
    c.validate();
    return c;
  }
  return oppo::load_experiment_config(path);
}

void apply_overrides(oppo::ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                     const std::string& variant, const std::string& out, int workers) {
  if (!seeds.empty()) cfg.trainer.seeds = seeds;
  if (!variant.empty()) cfg.estimator.variant = oppo::parse_variant(variant);
  if (!out.empty()) cfg.output_dir = out;
  if (workers >= 0) cfg.workers = workers;
  cfg.validate();
}

int cmd_train(const std::string& config, const std::vector<std::uint64_t>& seeds, const std::string& variant,
              const std::string& out, int workers) {
  auto cfg = load_or_default(config);
  apply_overrides(cfg, seeds, variant, out, workers);
  const auto rs = oppo::run_train(cfg, cfg.output_dir);
  std::printf("%s  %s  seeds=%zu  mean final success %s  -> %s\n",
              std::string(oppo::to_string(cfg.estimator.variant)).c_str(),
              std::string(oppo::to_string(cfg.estimator.oracle_mode)).c_str(), rs.size(),
              oppo::fmt(oppo::mean_final(rs)).c_str(), cfg.output_dir.c_str());
  return kExitOk;
}

int cmd_sweep(const std::string& config, const std::vector<std::uint64_t>& seeds, const std::string& out,
              int workers) {
  auto cfg = load_or_default(config);
  apply_overrides(cfg, seeds, "", out, workers);
  const auto res = oppo::run_sweep(cfg, cfg.output_dir);
  std::printf("%zu grid points x %zu seeds -> %s\n", res.grid.size(), cfg.trainer.seeds.size(),
              cfg.output_dir.c_str());
  return kExitOk;
}

int cmd_score(const std::string& input, const std::string& output, const std::string& config,
              const std::string& variant, bool skip_bad) {
  auto cfg = load_or_default(config);
  if (!variant.empty()) cfg.estimator.variant = oppo::parse_variant(variant);
  std::ifstream in(input);
  if (!in) throw oppo::ConfigError("cannot read '" + input + "'");
  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!output.empty() && output != "-") {
    file.open(output);
    if (!file) throw oppo::ConfigError("cannot write '" + output + "'");
    os = &file;
  }
  oppo::TrajectoryLogReader reader(in, skip_bad);
  std::size_t groups = 0, skipped = 0;
  std::size_t reported = 0;
  auto flush_diagnostics = [&] {
    for (; reported < reader.diagnostics().size(); ++reported) {
      const auto& d = reader.diagnostics()[reported];
      std::fprintf(stderr, "%s:%zu: skipped: %s\n", input.c_str(), d.line, d.message.c_str());
    }
  };
  while (auto g = reader.next_group()) {
    flush_diagnostics();
    if (!oppo::score_group(*g, cfg.estimator)) {
      ++skipped;
      std::fprintf(stderr, "%s: group '%s' has a single record; written unscored\n", input.c_str(),
                   g->front().group_id.c_str());
    }
    oppo::write_records(*os, *g);
    ++groups;
  }
  flush_diagnostics();
  os->flush();
  if (!*os) throw oppo::ConfigError("write failed");
  std::fprintf(stderr, "scored %zu groups (%zu singleton)\n", groups - skipped, skipped);
  return kExitOk;
}

int cmd_verify(const std::string& suite) {
  const auto results = oppo::run_suite(suite);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-4s %-17s %-56s checked=%-7zu violations=%-4zu worst=%-11.4g tol=%g\n", r.pass() ? "ok" : "FAIL",
                r.suite.c_str(), r.name.c_str(), r.checked, r.violations, r.worst, r.tolerance);
    ok = ok && r.pass();
  }
  std::printf("%s\n", ok ? "all properties hold" : "verification failed");
  return ok ? kExitOk : kExitVerify;
}

int cmd_analyze(const std::string& input, const std::string& out, const std::string& config, bool skip_bad) {
  auto cfg = load_or_default(config);
  std::vector<oppo::Diagnostic> diags;
  auto groups = oppo::read_trajectory_log(input, skip_bad, &diags);
  for (const auto& d : diags) std::fprintf(stderr, "%s:%zu: skipped: %s\n", input.c_str(), d.line, d.message.c_str());
  const double clip = cfg.estimator.effective_clip();
  std::vector<oppo::BeliefTrace> traces;
  std::vector<int> rewards;
  std::vector<double> priors;
  std::vector<std::vector<double>> values;
  std::vector<oppo::StratRecord> strat;
  for (auto& g : groups) {
    const bool scored = std::all_of(g.begin(), g.end(), [](const auto& r) { return r.v_trace && r.advantage; });
    if (!scored && !oppo::score_group(g, cfg.estimator)) {
      std::fprintf(stderr, "%s: group '%s' has a single record; left out\n", input.c_str(), g.front().group_id.c_str());
      continue;
    }
    for (const auto& r : g) {
      if (r.v_trace->size() != r.tokens.size() + 1)
        throw oppo::ConfigError("record '" + r.traj_id + "': v_trace must have one more entry than tokens");
      oppo::BeliefTrace tr;
      tr.values = *r.v_trace;
      oppo::StratRecord sr;
      sr.length = r.tokens.size();
      sr.outcome = r.reward;
      for (std::size_t t = 0; t < r.tokens.size(); ++t) {
        const double a = tr.values[t + 1] - tr.values[t];
        tr.raw_adv.push_back(a);
        sr.abs_adv.push_back(std::abs(a));
        sr.abs_log_ratio.push_back(std::abs(oppo::clip_log_evidence(r.logp_oracle[t], r.logp_plain[t], clip)));
      }
      priors.push_back(tr.values.front());
      rewards.push_back(r.reward);
      values.push_back(tr.values);
      traces.push_back(std::move(tr));
      strat.push_back(std::move(sr));
    }
  }
  fs::create_directories(out);
  std::ostringstream res, sum, br;
  const auto rep = oppo::telescoping_residual_report(traces, rewards, priors);
  res << "index,length,outcome,residual\n";
  for (std::size_t i = 0; i < rep.residual.size(); ++i)
    res << i << ',' << traces[i].length() << ',' << rewards[i] << ',' << oppo::fmt(rep.residual[i]) << '\n';
  sum << "stratum,quartile,outcome,count,mean,p95\n";
  sum << "all,,," << rep.residual.size() << ',' << oppo::fmt(rep.mean) << ',' << oppo::fmt(rep.p95) << '\n';
  for (const auto& s : rep.strata)
    sum << "cell," << s.quartile << ',' << s.outcome << ',' << s.count << ',' << oppo::fmt(s.mean) << ','
        << oppo::fmt(s.p95) << '\n';
  oppo::write_text(fs::path(out) / "residuals.csv", res.str());
  oppo::write_text(fs::path(out) / "residual_summary.csv", sum.str());
  if (!values.empty()) {
    const auto b = oppo::brier_report(values, rewards);
    br << "position,brier\nT/4," << oppo::fmt(b[0]) << "\nT/2," << oppo::fmt(b[1]) << "\n3T/4," << oppo::fmt(b[2])
       << "\nT," << oppo::fmt(b[3]) << '\n';
    oppo::write_text(fs::path(out) / "brier.csv", br.str());
  }
  const auto st = oppo::stratified_report(strat);
  oppo::write_text(fs::path(out) / "length_table.csv", st.length_table);
  oppo::write_text(fs::path(out) / "concentration.csv", st.concentration);
  std::printf("%zu trajectories; residual mean %s p95 %s; concentration |A| %s vs |log ratio| %s -> %s\n",
              traces.size(), oppo::fmt(rep.mean).c_str(), oppo::fmt(rep.p95).c_str(), oppo::fmt(st.adv_index).c_str(),
              oppo::fmt(st.log_ratio_index).c_str(), out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian token-level credit assignment: training, scoring and verification"};
  app.require_subcommand(1);

  std::string config, out, variant, input, suite = "all";
  std::vector<std::uint64_t> seeds;
  bool skip_bad = false;
  int workers = -1;

  auto* train = app.add_subcommand("train", "train toy policies for every configured seed");
  train->add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
  train->add_option("--out", out, "run directory (overrides output_dir)");
  train->add_option("--seeds", seeds, "seeds (overrides trainer.seeds)")->delimiter(',');
  train->add_option("--variant", variant, "estimator variant override");
  train->add_option("--workers", workers, "worker threads (0: all cores)");

  auto* score = app.add_subcommand("score", "score a JSON-lines trajectory log");
  score->add_option("input", input, "input JSONL")->required()->check(CLI::ExistingFile);
  score->add_option("--out", out, "output JSONL (default stdout)");
  score->add_option("--config", config, "experiment config (JSON); only the estimator is used")
      ->check(CLI::ExistingFile);
  score->add_option("--variant", variant, "estimator variant override");
  score->add_flag("--skip-bad", skip_bad, "drop malformed lines with a diagnostic instead of failing");

  auto* verify = app.add_subcommand("verify", "run property suites");
  verify->add_option("suite", suite, "identities|oracle_exactness|bias|variance|gradients|roundtrip|all")
      ->check(CLI::IsMember({"identities", "oracle_exactness", "bias", "variance", "gradients", "roundtrip", "all"}));

  auto* sweep = app.add_subcommand("sweep", "grid of training runs over the sweep axes");
  sweep->add_option("--config", config, "experiment config with a sweep block")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", out, "sweep directory (overrides output_dir)");
  sweep->add_option("--seeds", seeds, "seeds (overrides trainer.seeds)")->delimiter(',');
  sweep->add_option("--workers", workers, "worker threads (0: all cores)");

  auto* analyze = app.add_subcommand("analyze", "residual, calibration and concentration tables from a log");
  analyze->add_option("input", input, "JSONL log, scored or unscored")->required()->check(CLI::ExistingFile);
  analyze->add_option("--out", out, "output directory")->required();
  analyze->add_option("--config", config, "experiment config (JSON); only the estimator is used")
      ->check(CLI::ExistingFile);
  analyze->add_flag("--skip-bad", skip_bad, "drop malformed lines with a diagnostic instead of failing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(config, seeds, variant, out, workers);
    if (*score) return cmd_score(input, out, config, variant, skip_bad);
    if (*verify) return cmd_verify(suite);
    if (*sweep) return cmd_sweep(config, seeds, out, workers);
    if (*analyze) return cmd_analyze(input, out, config, skip_bad);
  } catch (const oppo::ParseError& e) {
    std::fprintf(stderr, "%s:%zu: error: %s\n", input.c_str(), e.line(), e.detail().c_str());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
