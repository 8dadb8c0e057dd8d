#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "kgmem/harness.hpp"
#include "kgmem/verify/checks.hpp"

namespace fs = std::filesystem;
using namespace kgmem;

namespace {

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

std::vector<std::uint64_t> pick_seeds(const ExperimentConfig& c,
                                      const std::vector<std::uint64_t>& override_seeds) {
  return override_seeds.empty() ? c.seeds() : override_seeds;
}

int cmd_train(const fs::path& config_path, std::vector<std::uint64_t> seeds, unsigned threads) {
  const ExperimentConfig c = load_config(config_path);
  if (c.transfer.kind != TransferSpec::Kind::learned) {
    throw ConfigError("policies.transfer: train needs \"learned\"; symbolic baselines only need eval");
  }
  seeds = pick_seeds(c, seeds);
  ensure_writable_dir(c.run_dir());
  const auto start = std::chrono::steady_clock::now();
  std::map<std::uint64_t, SeedRunArtifacts> done;
  std::mutex m;
  for_each_seed(seeds, threads, [&](std::uint64_t seed) {
    auto a = train_seed(c, seed);
    std::lock_guard<std::mutex> lock(m);
    std::cout << "seed " << seed << ": " << a.updates << " updates, " << a.parameter_count
              << " parameters, " << verify::fmt(a.wall_clock_seconds, 1) << " s" << std::endl;
    done.emplace(seed, a);
  });
  std::vector<SeedRunArtifacts> runs;
  for (auto& [seed, a] : done) runs.push_back(a);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  auto manifest = run_manifest(c, runs, wall);
  manifest["seeds"] = seeds;
  write_text(c.run_dir() / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << (c.run_dir() / "manifest.json").string() << std::endl;
  return 0;
}

int cmd_eval(const fs::path& config_path, std::vector<std::uint64_t> seeds, unsigned threads,
             const std::string& split_arg, int episodes) {
  ExperimentConfig c = load_config(config_path);
  if (episodes > 0) c.eval_episodes = episodes;
  seeds = pick_seeds(c, seeds);
  std::vector<QuerySplit> splits;
  if (split_arg == "train" || split_arg == "both") splits.push_back(QuerySplit::train);
  if (split_arg == "test" || split_arg == "both") splits.push_back(QuerySplit::test);
  ensure_writable_dir(c.run_dir());

  std::map<std::pair<int, std::uint64_t>, SeedEvaluation> results;
  std::mutex m;
  for (QuerySplit split : splits) {
    for_each_seed(seeds, threads, [&](std::uint64_t seed) {
      auto r = evaluate_config_seed(c, seed, split, c.decision_log);
      std::lock_guard<std::mutex> lock(m);
      results.emplace(std::pair{static_cast<int>(split), seed}, std::move(r));
    });
  }

  RoomWorld world(c.world);
  std::vector<EpisodeScoreRow> rows;
  for (const auto& [key, r] : results) {
    const std::string split = to_string(static_cast<QuerySplit>(key.first));
    for (std::size_t e = 0; e < r.scores.episode_scores.size(); ++e) {
      rows.push_back({split, key.second, static_cast<int>(e), r.scores.episode_scores[e]});
    }
    if (c.decision_log) {
      const auto dir = c.seed_dir(key.second);
      ensure_writable_dir(dir);
      write_text(dir / ("eval_decisions_" + split + ".jsonl"),
                 decisions_jsonl(world.vocabulary(), r.decisions));
    }
  }
  write_text(c.run_dir() / "scores.csv", scores_csv(rows));

  const auto variant = variant_from_rows(c.name, c.world, rows);
  for (const char* split : {"train", "test"}) {
    if (auto s = split_stats(variant, split)) {
      std::cout << c.name << " " << split << ": " << format_stats(s) << " over " << seeds.size()
                << " seed(s), " << c.eval_episodes << " episodes each" << std::endl;
    }
  }
  std::cout << "wrote " << (c.run_dir() / "scores.csv").string() << std::endl;
  return 0;
}

int cmd_compare(const std::vector<fs::path>& configs, const std::string& csv_out) {
  std::vector<VariantScores> variants;
  for (const auto& path : configs) {
    const ExperimentConfig c = load_config(path);
    const auto scores = c.run_dir() / "scores.csv";
    std::ifstream in(scores);
    if (!in) throw ConfigError("missing " + scores.string() + " (run eval first)");
    const auto rows = parse_scores_csv(in, scores.string());
    variants.push_back(variant_from_rows(c.name, c.world, rows));
  }
  const auto rows = compare_variants(variants);
  std::cout << compare_text(rows);
  if (!csv_out.empty()) {
    write_text(csv_out, compare_csv(rows));
    std::cout << "wrote " << csv_out << std::endl;
  }
  return 0;
}

int cmd_analyze(const fs::path& log, int window, const std::string& series_out,
                const std::string& json_out) {
  std::ifstream in(log);
  if (!in) throw ConfigError("cannot open " + log.string());
  DecisionLogSummary s;
  try {
    s = analyze_decisions(in, window);
  } catch (const FormatError& e) {
    throw FormatError(log.string() + ": " + e.what());
  }
  std::cout << summary_text(s);
  if (!series_out.empty()) {
    write_text(series_out, series_csv(s));
    std::cout << "wrote " << series_out << std::endl;
  }
  if (!json_out.empty()) {
    write_text(json_out, to_json(s).dump(2) + "\n");
    std::cout << "wrote " << json_out << std::endl;
  }
  return 0;
}

struct SnapshotArgs {
  fs::path trace;
  fs::path config;
  std::uint64_t seed = 0;
  std::uint64_t episode = 0;
  std::string split = "test";
  Step step = 0;
  fs::path out = "snapshot";
};

int cmd_snapshot(const SnapshotArgs& a) {
  Trace trace;
  if (!a.trace.empty()) {
    std::ifstream in(a.trace);
    if (!in) throw ConfigError("cannot open " + a.trace.string());
    trace = read_trace(in, a.trace.string());
  } else {
    const ExperimentConfig c = load_config(a.config);
    const QuerySplit split = a.split == "train" ? QuerySplit::train : QuerySplit::test;
    const std::string text = record_trace(c, a.seed, a.episode, split);
    const fs::path trace_path = a.out.string() + ".trace.jsonl";
    if (trace_path.has_parent_path()) ensure_writable_dir(trace_path.parent_path());
    write_text(trace_path, text);
    std::cout << "wrote " << trace_path.string() << std::endl;
    std::istringstream in(text);
    trace = read_trace(in, trace_path.string());
  }
  const Snapshot snap = snapshot_from_trace(trace, a.step);
  if (a.out.has_parent_path()) ensure_writable_dir(a.out.parent_path());
  write_text(a.out.string() + ".dot", snap.dot);
  write_text(a.out.string() + ".txt", snap.birdseye);
  std::cout << snap.birdseye << "wrote " << a.out.string() << ".dot and " << a.out.string()
            << ".txt" << std::endl;
  return 0;
}

int cmd_selfcheck(bool full, const fs::path& scratch) {
  const auto results = verify::run_checks(full, scratch, [](const verify::CheckResult& r) {
    std::cout << verify::format_result(r) << std::endl;
  });
  int failed = 0;
  for (const auto& r : results) failed += r.pass ? 0 : 1;
  std::cout << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal knowledge-graph memory agents: training, evaluation and analysis"};
  app.require_subcommand(1);

  fs::path config;
  std::vector<std::uint64_t> seeds;
  unsigned threads = default_threads();

  auto* train = app.add_subcommand("train", "Train a learned transfer policy for every seed");
  train->add_option("-c,--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("-s,--seeds", seeds, "Override the config's seed list");
  train->add_option("-j,--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string split = "both";
  int episodes = 0;
  auto* eval = app.add_subcommand("eval", "Greedy evaluation; writes scores.csv and decision logs");
  eval->add_option("-c,--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  eval->add_option("-s,--seeds", seeds, "Override the config's seed list");
  eval->add_option("-j,--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  eval->add_option("--split", split, "train, test or both")->check(CLI::IsMember({"train", "test", "both"}));
  eval->add_option("-n,--episodes", episodes, "Override eval.episodes")->check(CLI::PositiveNumber);

  std::vector<fs::path> configs;
  std::string csv_out;
  auto* compare = app.add_subcommand("compare", "Mean ± std table across evaluated runs");
  compare->add_option("configs", configs, "Experiment configs (at least two)")
      ->required()
      ->expected(2, -1)
      ->check(CLI::ExistingFile);
  compare->add_option("--csv", csv_out, "Also write the table as CSV");

  fs::path log;
  int window = 10;
  std::string series_out, json_out;
  auto* analyze = app.add_subcommand("analyze-decisions", "Keep/drop summary of a decision log");
  analyze->add_option("log", log, "Decision log (JSONL)")->required()->check(CLI::ExistingFile);
  analyze->add_option("-w,--window", window, "Moving-average window in steps")->check(CLI::PositiveNumber);
  analyze->add_option("--series", series_out, "Write the (step, keep_rate, moving_avg) CSV");
  analyze->add_option("--json", json_out, "Write the summary as JSON");

  SnapshotArgs snap;
  auto* snapshot = app.add_subcommand("snapshot", "DOT graph and bird's-eye view of memory at a step");
  auto* trace_opt = snapshot->add_option("-t,--trace", snap.trace, "Existing trace (JSONL)")
                        ->check(CLI::ExistingFile);
  auto* config_opt = snapshot->add_option("-c,--config", snap.config, "Config to replay an episode from")
                         ->check(CLI::ExistingFile);
  trace_opt->excludes(config_opt);
  snapshot->add_option("--seed", snap.seed, "Seed (replay mode)");
  snapshot->add_option("--episode", snap.episode, "Evaluation episode index (replay mode)");
  snapshot->add_option("--split", snap.split, "Query split (replay mode)")
      ->check(CLI::IsMember({"train", "test"}));
  snapshot->add_option("--step", snap.step, "Step to render")->required();
  snapshot->add_option("-o,--out", snap.out, "Output prefix for .dot/.txt (and .trace.jsonl)");

  bool full = false;
  fs::path scratch = fs::temp_directory_path() / "kgmem_selfcheck";
  auto* selfcheck = app.add_subcommand("selfcheck", "Run the invariant and oracle suite");
  selfcheck->add_flag("--full", full, "Include the reduced-scale baseline and learning experiments");
  selfcheck->add_option("--scratch", scratch, "Scratch directory for smoke runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config, seeds, threads);
    if (*eval) return cmd_eval(config, seeds, threads, split, episodes);
    if (*compare) return cmd_compare(configs, csv_out);
    if (*analyze) return cmd_analyze(log, window, series_out, json_out);
    if (*snapshot) {
      if (snap.trace.empty() && snap.config.empty()) {
        throw UsageError("snapshot needs --trace or --config");
      }
      return cmd_snapshot(snap);
    }
    if (*selfcheck) return cmd_selfcheck(full, scratch);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 1;
}
