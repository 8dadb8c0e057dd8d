#pragma once

// Experiment configuration, on-disk artifacts, decision-log analytics,
// run comparison, and memory snapshots.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "kgmem/agent.hpp"
#include "kgmem/errors.hpp"
#include "kgmem/kg_core.hpp"
#include "kgmem/neural_core.hpp"
#include "kgmem/room_env.hpp"
#include "kgmem/symbolic_policies.hpp"
#include "kgmem/transfer_rl.hpp"

namespace kgmem {

// ---------------------------------------------------------------------------
// Configuration

struct TransferSpec {
  enum class Kind : std::uint8_t { always, novel, random, learned };
  Kind kind = Kind::always;
  double p = 0.5;
  TransferMode mode = TransferMode::local_stm;
};

inline const char* to_string(TransferSpec::Kind k) {
  switch (k) {
    case TransferSpec::Kind::always: return "always";
    case TransferSpec::Kind::novel: return "novel";
    case TransferSpec::Kind::random: return "random";
    case TransferSpec::Kind::learned: return "learned";
  }
  return "?";
}

struct EncoderConfig {
  EncoderKind kind = EncoderKind::gcn;
  int dim = 16;
  int layers = 2;
  int bases = 20;
  int hidden = 16;
};

struct ExperimentConfig {
  std::string name = "run";
  WorldConfig world;
  TrainerConfig trainer;
  EncoderConfig encoder;
  TransferSpec transfer;
  AgentPolicies policies;
  int eval_episodes = 100;
  std::filesystem::path output_dir = "runs";
  bool decision_log = true;

  std::filesystem::path run_dir() const { return output_dir / name; }
  std::filesystem::path seed_dir(std::uint64_t seed) const {
    return run_dir() / ("seed_" + std::to_string(seed));
  }
  const std::vector<std::uint64_t>& seeds() const { return trainer.seeds; }
};

namespace detail {

// Typed access to one JSON object with dotted key paths in diagnostics.
class Section {
 public:
  Section(const nlohmann::json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ != nullptr && !j_->is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool present() const { return j_ != nullptr; }

  Section child(const std::string& key, bool required = false) {
    seen_.insert(key);
    const nlohmann::json* c = lookup(key);
    if (c == nullptr && required) throw ConfigError(key_path(key) + ": missing required section");
    return Section(c, key_path(key));
  }

  template <class T>
  bool read(const std::string& key, T& out, bool required = false) {
    seen_.insert(key);
    const nlohmann::json* v = lookup(key);
    if (v == nullptr) {
      if (required) throw ConfigError(key_path(key) + ": missing required key");
      return false;
    }
    if constexpr (std::is_same_v<T, bool>) {
      if (!v->is_boolean()) throw ConfigError(key_path(key) + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v->is_number_integer()) throw ConfigError(key_path(key) + ": expected an integer");
      if (std::is_unsigned_v<T> && v->is_number_integer() && v->get<std::int64_t>() < 0) {
        throw ConfigError(key_path(key) + ": must be non-negative");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v->is_number()) throw ConfigError(key_path(key) + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v->is_string()) throw ConfigError(key_path(key) + ": expected a string");
    } else if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) {
      if (!v->is_array()) throw ConfigError(key_path(key) + ": expected an array of integers");
      for (const auto& e : *v) {
        if (!e.is_number_integer() || e.get<std::int64_t>() < 0) {
          throw ConfigError(key_path(key) + ": expected an array of non-negative integers");
        }
      }
    }
    out = v->get<T>();
    return true;
  }

  template <class E, class Parse>
  bool read_enum(const std::string& key, E& out, Parse parse, bool required = false) {
    std::string s;
    if (!read(key, s, required)) return false;
    try {
      out = parse(s);
    } catch (const std::exception& e) {
      throw ConfigError(key_path(key) + ": " + e.what());
    }
    return true;
  }

  // Rejects keys that were never read, which catches typos.
  void finish() const {
    if (j_ == nullptr) return;
    for (const auto& [k, v] : j_->items()) {
      if (!seen_.count(k)) throw ConfigError(key_path(k) + ": unknown key");
    }
  }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const nlohmann::json* lookup(const std::string& key) const {
    if (j_ == nullptr) return nullptr;
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }
  std::string where() const { return path_.empty() ? "config" : path_; }

  const nlohmann::json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E>
E parse_choice(const std::string& s, std::initializer_list<std::pair<const char*, E>> choices) {
  std::string names;
  for (const auto& [name, value] : choices) {
    if (s == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError("unknown value '" + s + "' (expected one of: " + names + ")");
}

}  // namespace detail

inline QaPolicy qa_policy_from_string(const std::string& s) {
  return detail::parse_choice<QaPolicy>(
      s, {{"mra", QaPolicy::mra}, {"mru", QaPolicy::mru}, {"mfu", QaPolicy::mfu}});
}

inline EvictionPolicy eviction_from_string(const std::string& s) {
  return detail::parse_choice<EvictionPolicy>(
      s, {{"fifo", EvictionPolicy::fifo}, {"lru", EvictionPolicy::lru}, {"lfu", EvictionPolicy::lfu}});
}

inline TransferSpec::Kind transfer_kind_from_string(const std::string& s) {
  return detail::parse_choice<TransferSpec::Kind>(s, {{"always", TransferSpec::Kind::always},
                                                      {"novel", TransferSpec::Kind::novel},
                                                      {"random", TransferSpec::Kind::random},
                                                      {"learned", TransferSpec::Kind::learned}});
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::Section root(&j, "");
  root.read("name", c.name);
  if (c.name.empty() || c.name.find('/') != std::string::npos) {
    throw ConfigError("name: must be a non-empty path component");
  }

  auto world = root.child("world", true);
  world.read("grid_length", c.world.grid_length, true);
  world.read("num_static_objects", c.world.num_static_objects, true);
  world.read("num_moving_objects", c.world.num_moving_objects, true);
  world.read("num_inner_walls", c.world.num_inner_walls, true);
  world.read("horizon", c.world.horizon);
  world.read("world_seed", c.world.world_seed);
  world.read("max_objects_per_room", c.world.max_objects_per_room);
  world.finish();
  validate(c.world);

  auto policies = root.child("policies", true);
  policies.read_enum("qa", c.policies.qa, qa_policy_from_string);
  policies.read_enum("eviction", c.policies.eviction, eviction_from_string);
  policies.read("capacity", c.policies.capacity);
  if (c.policies.capacity < 1) throw ConfigError("policies.capacity: must be >= 1");
  policies.read_enum("transfer", c.transfer.kind, transfer_kind_from_string, true);
  if (policies.read("random_p", c.transfer.p) && (c.transfer.p < 0.0 || c.transfer.p > 1.0)) {
    throw ConfigError("policies.random_p: must be in [0, 1]");
  }
  policies.read_enum("mode", c.transfer.mode, [](const std::string& s) {
    return transfer_mode_from_string(s);
  });
  policies.finish();

  auto encoder = root.child("encoder");
  auto trainer = root.child("trainer");
  const bool learned = c.transfer.kind == TransferSpec::Kind::learned;
  if (learned && !encoder.present()) throw ConfigError("encoder: required for learned transfer");
  if (learned && !trainer.present()) throw ConfigError("trainer: required for learned transfer");

  encoder.read_enum("kind", c.encoder.kind, [](const std::string& s) {
    return encoder_from_string(s);
  });
  encoder.read("dim", c.encoder.dim);
  encoder.read("layers", c.encoder.layers);
  encoder.read("bases", c.encoder.bases);
  encoder.read("hidden", c.encoder.hidden);
  encoder.finish();
  if (c.encoder.dim < 1) throw ConfigError("encoder.dim: must be >= 1");
  if (c.encoder.layers < 1) throw ConfigError("encoder.layers: must be >= 1");
  if (c.encoder.bases < 1) throw ConfigError("encoder.bases: must be >= 1");
  if (c.encoder.hidden < 1) throw ConfigError("encoder.hidden: must be >= 1");

  auto& t = c.trainer;
  trainer.read("gamma", t.gamma);
  trainer.read("lr", t.lr);
  trainer.read("target_update_interval", t.target_update_interval);
  trainer.read("total_iterations", t.total_iterations);
  trainer.read("epsilon_max", t.epsilon_max);
  trainer.read("epsilon_min", t.epsilon_min);
  trainer.read("epsilon_decay_iters", t.epsilon_decay_iters);
  trainer.read("double_dqn", t.double_dqn);
  trainer.read("grad_clip_value", t.grad_clip_value);
  trainer.read("replay_capacity", t.replay_capacity);
  trainer.read("warm_start", t.warm_start);
  trainer.read("batch_size", t.batch_size);
  trainer.read_enum("optimizer", t.optimizer, [](const std::string& s) {
    return detail::parse_choice<OptimizerKind>(s, {{"sgd", OptimizerKind::sgd},
                                                   {"adam", OptimizerKind::adam}});
  });
  trainer.read("adam_beta1", t.adam_beta1);
  trainer.read("adam_beta2", t.adam_beta2);
  trainer.read("adam_eps", t.adam_eps);
  trainer.read("reshuffle_matching", t.reshuffle_matching);
  trainer.finish();
  t.mode = c.transfer.mode;

  root.read("seeds", t.seeds);

  auto eval = root.child("eval");
  eval.read("episodes", c.eval_episodes);
  eval.finish();
  if (c.eval_episodes < 1) throw ConfigError("eval.episodes: must be >= 1");

  auto output = root.child("output");
  std::string dir;
  if (output.read("dir", dir)) c.output_dir = dir;
  output.read("decision_log", c.decision_log);
  output.finish();

  root.finish();
  validate(c.trainer);
  return c;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline nlohmann::json to_json(const WorldConfig& w) {
  return {{"grid_length", w.grid_length},
          {"num_static_objects", w.num_static_objects},
          {"num_moving_objects", w.num_moving_objects},
          {"num_inner_walls", w.num_inner_walls},
          {"horizon", w.horizon},
          {"world_seed", w.world_seed},
          {"max_objects_per_room", w.max_objects_per_room}};
}

inline WorldConfig world_from_json(const nlohmann::json& j) {
  detail::Section s(&j, "world");
  WorldConfig w;
  s.read("grid_length", w.grid_length, true);
  s.read("num_static_objects", w.num_static_objects, true);
  s.read("num_moving_objects", w.num_moving_objects, true);
  s.read("num_inner_walls", w.num_inner_walls, true);
  s.read("horizon", w.horizon);
  s.read("world_seed", w.world_seed);
  s.read("max_objects_per_room", w.max_objects_per_room);
  s.finish();
  validate(w);
  return w;
}

// Canonical form of a parsed config; parse_config(config_to_json(c)) == c.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  const auto& t = c.trainer;
  nlohmann::json j;
  j["name"] = c.name;
  j["world"] = to_json(c.world);
  j["policies"] = {{"qa", to_string(c.policies.qa)},
                   {"eviction", to_string(c.policies.eviction)},
                   {"capacity", c.policies.capacity},
                   {"transfer", to_string(c.transfer.kind)},
                   {"random_p", c.transfer.p},
                   {"mode", to_string(c.transfer.mode)}};
  j["encoder"] = {{"kind", to_string(c.encoder.kind)},
                  {"dim", c.encoder.dim},
                  {"layers", c.encoder.layers},
                  {"bases", c.encoder.bases},
                  {"hidden", c.encoder.hidden}};
  j["trainer"] = {{"gamma", t.gamma},
                  {"lr", t.lr},
                  {"target_update_interval", t.target_update_interval},
                  {"total_iterations", t.total_iterations},
                  {"epsilon_max", t.epsilon_max},
                  {"epsilon_min", t.epsilon_min},
                  {"epsilon_decay_iters", t.epsilon_decay_iters},
                  {"double_dqn", t.double_dqn},
                  {"grad_clip_value", t.grad_clip_value},
                  {"replay_capacity", t.replay_capacity},
                  {"warm_start", t.warm_start},
                  {"batch_size", t.batch_size},
                  {"optimizer", t.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                  {"adam_beta1", t.adam_beta1},
                  {"adam_beta2", t.adam_beta2},
                  {"adam_eps", t.adam_eps},
                  {"reshuffle_matching", t.reshuffle_matching}};
  j["seeds"] = t.seeds;
  j["eval"] = {{"episodes", c.eval_episodes}};
  j["output"] = {{"dir", c.output_dir.string()}, {"decision_log", c.decision_log}};
  return j;
}

inline ModelShape model_shape_for(const RoomWorld& world, const EncoderConfig& e) {
  return model_shape_for(world, e.kind, e.dim, e.layers, e.bases, e.hidden);
}

inline TransferBaseline baseline_for(const TransferSpec& t) {
  switch (t.kind) {
    case TransferSpec::Kind::always: return {TransferBaseline::Kind::always, t.p};
    case TransferSpec::Kind::novel: return {TransferBaseline::Kind::novel_only, t.p};
    case TransferSpec::Kind::random: return {TransferBaseline::Kind::random, t.p};
    case TransferSpec::Kind::learned: break;
  }
  throw UsageError("learned transfer has no symbolic baseline");
}

// ---------------------------------------------------------------------------
// Artifacts

inline void ensure_writable_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("output.dir: cannot create " + dir.string() + ": " + ec.message());
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw ConfigError("output.dir: " + dir.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("write failed: " + path.string());
}

// Shortest round-trip decimal form, so identical values give identical text.
inline std::string format_number(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  double back = 0.0;
  for (int p = 6; p <= 17; ++p) {
    std::ostringstream t;
    t << std::setprecision(p) << x;
    std::istringstream(t.str()) >> back;
    if (back == x) return t.str();
  }
  return s.str();
}

inline std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = "iteration,episode,loss,epsilon,episode_score\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + std::to_string(r.episode) + ",";
    if (r.loss) out += format_number(*r.loss);
    out += "," + format_number(r.epsilon) + ",";
    if (r.episode_score) out += format_number(*r.episode_score);
    out += '\n';
  }
  return out;
}

inline std::string decisions_jsonl(const Vocabulary& vocab, std::span<const DecisionRecord> ds) {
  std::string out;
  for (const auto& d : ds) {
    out += to_json(vocab, d).dump();
    out += '\n';
  }
  return out;
}

struct SeedRunArtifacts {
  std::uint64_t seed = 0;
  std::size_t parameter_count = 0;
  std::int64_t updates = 0;
  double wall_clock_seconds = 0.0;
};

// Trains one seed and writes checkpoint.json, metrics.csv and decisions.jsonl
// into the seed directory.
inline SeedRunArtifacts train_seed(const ExperimentConfig& c, std::uint64_t seed) {
  if (c.transfer.kind != TransferSpec::Kind::learned) {
    throw ConfigError("policies.transfer: training needs transfer = learned");
  }
  const auto start = std::chrono::steady_clock::now();
  WorldConfig train_world = c.world;
  train_world.query_split = QuerySplit::train;
  RoomWorld world(train_world);
  const ModelShape shape = model_shape_for(world, c.encoder);
  Trainer<float> trainer(c.trainer, train_world, shape, c.policies, seed);
  TrainHooks hooks;
  hooks.record_decisions = c.decision_log;
  auto result = trainer.run(hooks);

  const auto dir = c.seed_dir(seed);
  ensure_writable_dir(dir);
  write_text(dir / "checkpoint.json",
             checkpoint_to_json(result.params, world.vocabulary(), seed).dump() + "\n");
  write_text(dir / "metrics.csv", metrics_csv(result.metrics));
  if (c.decision_log) {
    write_text(dir / "decisions.jsonl", decisions_jsonl(world.vocabulary(), result.decisions));
  }
  SeedRunArtifacts a;
  a.seed = seed;
  a.parameter_count = result.params.parameter_count();
  a.updates = result.updates;
  a.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return a;
}

inline nlohmann::json run_manifest(const ExperimentConfig& c,
                                   std::span<const SeedRunArtifacts> runs, double wall_clock) {
  nlohmann::json j;
  j["config"] = config_to_json(c);
  j["seeds"] = c.seeds();
  j["parameter_count"] = runs.empty() ? 0 : runs.front().parameter_count;
  j["wall_clock_seconds"] = wall_clock;
  auto& per = j["runs"];
  per = nlohmann::json::array();
  for (const auto& r : runs) {
    per.push_back({{"seed", r.seed},
                   {"parameter_count", r.parameter_count},
                   {"updates", r.updates},
                   {"wall_clock_seconds", r.wall_clock_seconds},
                   {"dir", "seed_" + std::to_string(r.seed)}});
  }
  return j;
}

inline LearnedPolicy load_learned_policy(const ExperimentConfig& c, const RoomWorld& world,
                                         std::uint64_t seed) {
  const auto path = c.seed_dir(seed) / "checkpoint.json";
  if (!std::filesystem::exists(path)) {
    throw ConfigError("missing checkpoint " + path.string() + " (run train first)");
  }
  nlohmann::json j;
  try {
    j = read_json_file(path);
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  return {checkpoint_from_json<float>(j, world.vocabulary(), model_shape_for(world, c.encoder)),
          c.transfer.mode};
}

inline TransferSource transfer_source_for(const ExperimentConfig& c, const RoomWorld& world,
                                          std::uint64_t seed) {
  if (c.transfer.kind == TransferSpec::Kind::learned) return {load_learned_policy(c, world, seed)};
  return {baseline_for(c.transfer)};
}

// Runs fn(seed) for every seed on up to `threads` workers. Each call must be
// self-contained; the first exception is rethrown after all workers stop.
template <class F>
void for_each_seed(std::span<const std::uint64_t> seeds, unsigned threads, F&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(seeds.size())));
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        fn(seeds[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = seeds.size();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct SeedEvaluation {
  SeedScores scores;
  std::vector<DecisionRecord> decisions;
};

inline SeedEvaluation evaluate_config_seed(const ExperimentConfig& c, std::uint64_t seed,
                                           QuerySplit split, bool record_decisions) {
  WorldConfig wc = c.world;
  wc.query_split = split;
  RoomWorld world(wc);
  SeedEvaluation out;
  out.scores = evaluate_seed(transfer_source_for(c, world, seed), wc, c.policies, seed,
                             c.eval_episodes, record_decisions ? &out.decisions : nullptr);
  return out;
}

// One line per evaluated episode: split,seed,episode,score.
struct EpisodeScoreRow {
  std::string split;
  std::uint64_t seed = 0;
  int episode = 0;
  double score = 0.0;
};

inline std::string scores_csv(std::span<const EpisodeScoreRow> rows) {
  std::string out = "split,seed,episode,score\n";
  for (const auto& r : rows) {
    out += r.split + "," + std::to_string(r.seed) + "," + std::to_string(r.episode) + "," +
           format_number(r.score) + "\n";
  }
  return out;
}

inline std::vector<EpisodeScoreRow> parse_scores_csv(std::istream& in, const std::string& name) {
  std::vector<EpisodeScoreRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != "split,seed,episode,score") throw FormatError(name + ":1: unexpected header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string part; std::getline(ss, part, ',');) f.push_back(part);
    if (f.size() != 4 || (f[0] != "train" && f[0] != "test")) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": malformed row");
    }
    try {
      rows.push_back({f[0], std::stoull(f[1]), std::stoi(f[2]), std::stod(f[3])});
    } catch (const std::exception&) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Decision-log analytics

struct KeepDrop {
  std::int64_t keep = 0;
  std::int64_t drop = 0;
  std::int64_t total() const { return keep + drop; }
  double keep_rate() const { return total() == 0 ? 0.0 : static_cast<double>(keep) / total(); }
  void add(bool kept) { (kept ? keep : drop) += 1; }
};

struct KeepRatePoint {
  Step step = 0;
  double keep_rate = 0.0;
  double moving_avg = 0.0;
};

struct DecisionLogSummary {
  std::int64_t total = 0;
  std::int64_t keeps = 0;
  std::int64_t drops = 0;
  double keep_rate = 0.0;
  std::map<std::string, KeepDrop> per_relation;
  // agent_location, object_location, query_object_location, direction_links,
  // direction_to_wall, direction_to_room
  std::map<std::string, KeepDrop> per_category;
  std::vector<KeepRatePoint> series;
  int window = 10;
};

inline constexpr const char* kCategoryNames[] = {
    "agent_location",   "object_location",   "query_object_location",
    "direction_links", "direction_to_wall", "direction_to_room"};

inline bool is_direction_label(const std::string& r) {
  return r == "north" || r == "south" || r == "east" || r == "west";
}

// Trailing moving average; the first window-1 points average what exists.
inline std::vector<double> moving_average(std::span<const double> xs, int window) {
  if (window < 1) throw UsageError("moving average window must be >= 1");
  std::vector<double> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t n = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
    double sum = 0.0;
    for (std::size_t k = i + 1 - n; k <= i; ++k) sum += xs[k];
    out.push_back(sum / static_cast<double>(n));
  }
  return out;
}

// Query-object facts are at_location facts whose head is queried somewhere
// in the log. The series is the keep rate per step index pooled over
// episodes.
inline DecisionLogSummary analyze_decisions(std::istream& in, int window = 10) {
  if (window < 1) throw UsageError("window must be >= 1");
  struct Row {
    Step step;
    std::string h, r, t;
    bool keep;
  };
  std::vector<Row> rows;
  std::set<std::string> queried;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      throw FormatError("line " + std::to_string(lineno) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      fail("invalid JSON");
    }
    try {
      if (!j.is_object()) fail("expected a JSON object");
      const auto& tr = j.at("triple");
      const std::string action = j.at("action").get<std::string>();
      if (action != "keep" && action != "drop") fail("action must be keep or drop");
      rows.push_back({j.at("step").get<Step>(), tr.at("h").get<std::string>(),
                      tr.at("r").get<std::string>(), tr.at("t").get<std::string>(),
                      action == "keep"});
      j.at("episode").get<std::uint64_t>();
      if (auto q = j.find("query"); q != j.end()) queried.insert(q->get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("missing or mistyped field: ") + e.what());
    }
  }

  DecisionLogSummary s;
  s.window = window;
  for (const char* name : kCategoryNames) s.per_category[name] = {};
  std::map<Step, KeepDrop> by_step;
  for (const auto& r : rows) {
    ++s.total;
    (r.keep ? s.keeps : s.drops) += 1;
    s.per_relation[r.r].add(r.keep);
    by_step[r.step].add(r.keep);
    if (r.r == "at_location") {
      if (r.h == "agent") {
        s.per_category["agent_location"].add(r.keep);
      } else {
        s.per_category["object_location"].add(r.keep);
        if (queried.count(r.h)) s.per_category["query_object_location"].add(r.keep);
      }
    } else if (is_direction_label(r.r)) {
      s.per_category["direction_links"].add(r.keep);
      s.per_category[r.t == "wall" ? "direction_to_wall" : "direction_to_room"].add(r.keep);
    }
  }
  s.keep_rate = s.total == 0 ? 0.0 : static_cast<double>(s.keeps) / static_cast<double>(s.total);

  std::vector<double> raw;
  for (const auto& [step, kd] : by_step) raw.push_back(kd.keep_rate());
  const auto avg = moving_average(raw, window);
  std::size_t i = 0;
  for (const auto& [step, kd] : by_step) {
    s.series.push_back({step, raw[i], avg[i]});
    ++i;
  }
  return s;
}

inline nlohmann::json to_json(const DecisionLogSummary& s) {
  auto kd = [](const KeepDrop& k) {
    return nlohmann::json{{"keep", k.keep}, {"drop", k.drop}, {"keep_rate", k.keep_rate()}};
  };
  nlohmann::json j{{"total", s.total},
                   {"keeps", s.keeps},
                   {"drops", s.drops},
                   {"keep_rate", s.keep_rate},
                   {"window", s.window}};
  for (const auto& [r, k] : s.per_relation) j["per_relation"][r] = kd(k);
  for (const auto& [c, k] : s.per_category) j["per_category"][c] = kd(k);
  return j;
}

inline std::string summary_text(const DecisionLogSummary& s) {
  std::ostringstream o;
  o << "decisions " << s.total << "  keeps " << s.keeps << "  drops " << s.drops
    << "  keep_rate " << std::fixed << std::setprecision(2) << s.keep_rate << "\n\n";
  auto table = [&o](const char* title, const std::map<std::string, KeepDrop>& m) {
    std::size_t w = std::string(title).size();
    for (const auto& [k, v] : m) w = std::max(w, k.size());
    o << std::left << std::setw(static_cast<int>(w)) << title << "  " << std::right
      << std::setw(6) << "keep" << std::setw(6) << "drop" << std::setw(11) << "keep_rate"
      << "\n";
    for (const auto& [k, v] : m) {
      o << std::left << std::setw(static_cast<int>(w)) << k << "  " << std::right
        << std::setw(6) << v.keep << std::setw(6) << v.drop << std::setw(11)
        << std::setprecision(3) << v.keep_rate() << "\n";
    }
    o << "\n";
  };
  table("category", s.per_category);
  table("relation", s.per_relation);
  return o.str();
}

inline std::string series_csv(const DecisionLogSummary& s) {
  std::string out = "step,keep_rate,moving_avg\n";
  for (const auto& p : s.series) {
    out += std::to_string(p.step) + "," + format_number(p.keep_rate) + "," +
           format_number(p.moving_avg) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Comparison

struct VariantScores {
  std::string name;
  WorldConfig world;
  std::map<std::string, std::map<std::uint64_t, std::vector<double>>> by_split;  // split->seed
};

struct CompareRow {
  std::string name;
  std::optional<ScoreStats> train;
  std::optional<ScoreStats> test;
  std::size_t seeds = 0;
};

inline VariantScores variant_from_rows(std::string name, const WorldConfig& world,
                                       std::span<const EpisodeScoreRow> rows) {
  VariantScores v{std::move(name), world, {}};
  for (const auto& r : rows) v.by_split[r.split][r.seed].push_back(r.score);
  return v;
}

// Mean over seeds of per-seed mean episode scores; population std.
inline std::optional<ScoreStats> split_stats(const VariantScores& v, const std::string& split) {
  auto it = v.by_split.find(split);
  if (it == v.by_split.end() || it->second.empty()) return std::nullopt;
  std::vector<double> means;
  for (const auto& [seed, scores] : it->second) {
    SeedScores s{seed, scores};
    means.push_back(s.mean());
  }
  return population_stats(means);
}

inline std::vector<CompareRow> compare_variants(std::span<const VariantScores> variants) {
  if (variants.size() < 2) throw UsageError("compare needs at least two runs");
  for (const auto& v : variants) {
    if (!(v.world == variants.front().world)) {
      throw ConfigError("world config of '" + v.name + "' differs from '" +
                        variants.front().name + "'; refusing to compare");
    }
  }
  std::vector<CompareRow> rows;
  for (const auto& v : variants) {
    CompareRow r{v.name, split_stats(v, "train"), split_stats(v, "test"), 0};
    for (const auto& [split, seeds] : v.by_split) r.seeds = std::max(r.seeds, seeds.size());
    rows.push_back(r);
  }
  return rows;
}

inline std::string format_stats(const std::optional<ScoreStats>& s) {
  if (!s) return "-";
  std::ostringstream o;
  o << std::fixed << std::setprecision(3) << s->mean << " ± " << s->std;
  return o.str();
}

inline std::string compare_text(std::span<const CompareRow> rows) {
  std::vector<std::array<std::string, 4>> cells;
  cells.push_back({"variant", "seeds", "train", "test"});
  for (const auto& r : rows) {
    cells.push_back({r.name, std::to_string(r.seeds), format_stats(r.train), format_stats(r.test)});
  }
  // "±" is two bytes but one column.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::array<std::size_t, 4> w{};
  for (const auto& row : cells)
    for (std::size_t i = 0; i < 4; ++i) w[i] = std::max(w[i], width(row[i]));
  std::string out = "# mean ± population std over seeds of per-seed mean episode score\n";
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string pad(w[i] - width(row[i]), ' ');
      out += i == 0 ? row[i] + pad : "  " + pad + row[i];
    }
    out += '\n';
  }
  return out;
}

inline std::string compare_csv(std::span<const CompareRow> rows) {
  std::string out = "variant,seeds,train_mean,train_std,test_mean,test_std\n";
  auto cols = [](const std::optional<ScoreStats>& s) {
    return s ? format_number(s->mean) + "," + format_number(s->std) : std::string(",");
  };
  for (const auto& r : rows) {
    out += r.name + "," + std::to_string(r.seeds) + "," + cols(r.train) + "," + cols(r.test) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Traces and snapshots

inline nlohmann::json hidden_to_json(const RoomWorld& world, const HiddenState& s) {
  const auto& v = world.vocabulary();
  nlohmann::json objects = nlohmann::json::object();
  for (std::size_t i = 0; i < world.objects().size(); ++i) {
    objects[v.entities.label(world.objects()[i])] = v.entities.label(s.object_rooms[i]);
  }
  return {{"step", s.step},
          {"agent_room", v.entities.label(s.agent_room)},
          {"objects", objects},
          {"walls_closed", s.wall_closed}};
}

inline HiddenState hidden_from_json(const RoomWorld& world, const nlohmann::json& j) {
  try {
    const auto& v = world.vocabulary();
    HiddenState s;
    s.step = j.at("step").get<Step>();
    s.agent_room = v.entities.at(j.at("agent_room").get<std::string>());
    const auto& objects = j.at("objects");
    for (EntityId o : world.objects()) {
      s.object_rooms.push_back(v.entities.at(objects.at(v.entities.label(o)).get<std::string>()));
    }
    s.wall_closed = j.at("walls_closed").get<std::vector<bool>>();
    if (s.wall_closed.size() != world.walls().size()) throw FormatError("wall count mismatch");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed hidden state: ") + e.what());
  }
}

inline nlohmann::json items_to_json(const Vocabulary& vocab, std::span<const MemoryItem> items) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& item : items) a.push_back(to_json(vocab, item));
  return a;
}

inline nlohmann::json trace_header(const RoomWorld& world, const ExperimentConfig& c,
                                   std::uint64_t seed, std::uint64_t episode) {
  return {{"trace", "kgmem"},
          {"world", to_json(world.config())},
          {"split", to_string(world.config().query_split)},
          {"transfer", to_string(c.transfer.kind)},
          {"seed", seed},
          {"episode", episode}};
}

// Memory at a step is short_t (as observed) together with the long-term store
// after that step's transfer and recall.
inline nlohmann::json trace_record(const RoomWorld& world, const StepRecord& rec) {
  const auto& v = world.vocabulary();
  nlohmann::json actions = nlohmann::json::array();
  for (auto a : rec.decision.actions) actions.push_back(a == TransferAction::keep ? "keep" : "drop");
  nlohmann::json obs = nlohmann::json::array();
  for (const auto& item : rec.state->short_items) obs.push_back(triple_to_json(v, item.triple));
  return {{"episode", rec.episode},
          {"step", rec.step},
          {"hidden", hidden_to_json(world, rec.hidden)},
          {"observation", obs},
          {"query", {{"h", v.entities.label(rec.query.head)},
                     {"r", v.relations.label(rec.query.relation)}}},
          {"truth", v.entities.label(rec.query.truth)},
          {"answer", v.entities.label(rec.qa.answer)},
          {"reward", rec.reward},
          {"move", to_string(rec.move)},
          {"actions", actions},
          {"short", items_to_json(v, rec.state->short_items)},
          {"long", items_to_json(v, rec.next->long_items)}};
}

// Replays one evaluation episode and returns it as trace JSONL.
inline std::string record_trace(const ExperimentConfig& c, std::uint64_t seed,
                                std::uint64_t episode, QuerySplit split) {
  WorldConfig wc = c.world;
  wc.query_split = split;
  RoomWorld world(wc);
  const TransferSource source = transfer_source_for(c, world, seed);
  EpisodeRunner runner(world, c.policies);
  const Decider decide = greedy_decider(source, runner, wc.horizon);
  std::string out = trace_header(world, c, seed, episode).dump() + "\n";
  runner.run(episode, eval_episode_seed(seed, episode), decide, [&](const StepRecord& rec) {
    out += trace_record(world, rec).dump() + "\n";
    return true;
  });
  return out;
}

enum class NodeCategory : std::uint8_t { agent, room, static_object, moving_object, wall, other };

inline NodeCategory node_category(const RoomWorld& world, EntityId e) {
  const auto& s = world.schema();
  if (e == s.agent) return NodeCategory::agent;
  if (e == s.wall) return NodeCategory::wall;
  if (world.is_room(e)) return NodeCategory::room;
  if (const int o = world.object_index(e); o >= 0) {
    return world.is_moving(static_cast<std::size_t>(o)) ? NodeCategory::moving_object
                                                        : NodeCategory::static_object;
  }
  return NodeCategory::other;
}

inline const char* category_name(NodeCategory c) {
  switch (c) {
    case NodeCategory::agent: return "agent";
    case NodeCategory::room: return "room";
    case NodeCategory::static_object: return "static_object";
    case NodeCategory::moving_object: return "moving_object";
    case NodeCategory::wall: return "wall";
    case NodeCategory::other: return "other";
  }
  return "other";
}

inline const char* category_color(NodeCategory c) {
  switch (c) {
    case NodeCategory::agent: return "#e377c2";
    case NodeCategory::room: return "#ffdd57";
    case NodeCategory::static_object: return "#8ecae6";
    case NodeCategory::moving_object: return "#90be6d";
    case NodeCategory::wall: return "#adb5bd";
    case NodeCategory::other: return "#ffffff";
  }
  return "#ffffff";
}

inline std::string dot_quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    if (ch == '\n') {
      out += "\\n";
      continue;
    }
    out += ch;
  }
  return out + "\"";
}

// Memory graph in DOT. Copies of one triple (short and long) collapse into a
// single edge labelled "relation (N)".
inline std::string memory_dot(const RoomWorld& world, std::span<const MemoryItem> short_items,
                              std::span<const MemoryItem> long_items, const std::string& title) {
  const auto& v = world.vocabulary();
  std::map<Triple, std::vector<const MemoryItem*>> edges;
  std::set<EntityId> nodes;
  auto add = [&](std::span<const MemoryItem> items) {
    for (const auto& item : items) {
      edges[item.triple].push_back(&item);
      nodes.insert(item.triple.head);
      nodes.insert(item.triple.tail);
    }
  };
  add(long_items);
  add(short_items);

  std::string out = "digraph memory {\n";
  out += "  label=" + dot_quote(title) + ";\n";
  out += "  rankdir=LR;\n  node [shape=ellipse, style=filled, fontname=\"Helvetica\"];\n";
  for (EntityId e : nodes) {
    const auto cat = node_category(world, e);
    out += "  " + dot_quote(v.entities.label(e)) + " [fillcolor=" +
           dot_quote(category_color(cat)) + ", category=" + dot_quote(category_name(cat)) + "];\n";
  }
  for (const auto& [t, copies] : edges) {
    std::string label = v.relations.label(t.relation);
    if (copies.size() > 1) label += " (" + std::to_string(copies.size()) + ")";
    std::string tip;
    for (const MemoryItem* m : copies) {
      if (!tip.empty()) tip += "; ";
      tip += "added " + std::to_string(m->annotations.time_added) + ", accessed " +
             std::to_string(m->annotations.last_accessed) + ", recalled " +
             std::to_string(m->annotations.num_recalled);
    }
    out += "  " + dot_quote(v.entities.label(t.head)) + " -> " +
           dot_quote(v.entities.label(t.tail)) + " [label=" + dot_quote(label) +
           ", tooltip=" + dot_quote(tip) + "];\n";
  }
  out += "}\n";
  return out;
}

struct Snapshot {
  std::string dot;
  std::string birdseye;
};

struct Trace {
  nlohmann::json header;
  std::vector<nlohmann::json> steps;
};

inline Trace read_trace(std::istream& in, const std::string& name) {
  Trace t;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": invalid JSON");
    }
    if (lineno == 1) {
      if (!j.is_object() || j.value("trace", "") != "kgmem") {
        throw FormatError(name + ":1: not a kgmem trace");
      }
      t.header = std::move(j);
    } else {
      t.steps.push_back(std::move(j));
    }
  }
  if (t.header.is_null()) throw FormatError(name + ": empty trace");
  return t;
}

inline Snapshot snapshot_from_trace(const Trace& trace, Step step) {
  WorldConfig wc = world_from_json(trace.header.at("world"));
  RoomWorld world(wc);
  for (const auto& rec : trace.steps) {
    if (rec.at("step").get<Step>() != step) continue;
    std::vector<MemoryItem> short_items, long_items;
    try {
      for (const auto& j : rec.at("short")) short_items.push_back(item_from_json(world.vocabulary(), j));
      for (const auto& j : rec.at("long")) long_items.push_back(item_from_json(world.vocabulary(), j));
    } catch (const VocabularyError& e) {
      throw FormatError(std::string("trace does not match its world: ") + e.what());
    }
    const HiddenState hidden = hidden_from_json(world, rec.at("hidden"));
    return {memory_dot(world, short_items, long_items, "memory at step " + std::to_string(step)),
            world.render_birdseye(hidden)};
  }
  Step last = -1;
  for (const auto& rec : trace.steps) last = std::max(last, rec.at("step").get<Step>());
  throw UsageError("step " + std::to_string(step) + " is not in the trace (steps 0.." +
                   std::to_string(last) + ")");
}

}  // namespace kgmem
