#pragma once

// Acceptance checks shared by the acceptance suite and `kgmem selfcheck`.
// Each check returns a verdict plus a one-line measurement summary.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "kgmem/agent.hpp"
#include "kgmem/harness.hpp"
#include "kgmem/transfer_rl.hpp"
#include "kgmem/verify/oracles.hpp"

namespace kgmem::verify {

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
  double limit_seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Reduced-scale world shared by the baseline and learning checks.

inline WorldConfig reduced_world() {
  WorldConfig w;
  w.grid_length = 5;
  w.num_static_objects = 8;
  w.num_moving_objects = 8;
  w.num_inner_walls = 12;
  return w;
}

inline AgentPolicies reduced_policies() {
  AgentPolicies p;
  p.capacity = 32;
  return p;
}

inline const std::vector<std::uint64_t>& reduced_seeds() {
  static const std::vector<std::uint64_t> seeds = {0, 5, 10};
  return seeds;
}

inline constexpr int kReducedEvalEpisodes = 100;
inline constexpr int kReducedTrainIterations = 5000;

// Seed-averaged mean test score of a transfer source.
inline double mean_test_score(const std::function<TransferSource(std::uint64_t)>& source_for) {
  WorldConfig w = reduced_world();
  w.query_split = QuerySplit::test;
  double total = 0.0;
  for (std::uint64_t seed : reduced_seeds()) {
    total += evaluate_seed(source_for(seed), w, reduced_policies(), seed, kReducedEvalEpisodes).mean();
  }
  return total / static_cast<double>(reduced_seeds().size());
}

inline std::string fmt(double x, int precision = 3) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(precision) << x;
  return o.str();
}

// ---------------------------------------------------------------------------
// 1. Memory invariants

inline CheckResult check_memory_invariants(std::uint64_t seed = 1, int sequences = 10000) {
  CheckResult r{1, "memory invariants", true, "", 0.0, 60.0};
  const std::size_t capacities[] = {1, 4, 32, 128};
  const EvictionPolicy policies[] = {EvictionPolicy::fifo, EvictionPolicy::lru, EvictionPolicy::lfu};
  SyntheticWorld w(12, 12);
  Rng rng(seed);
  std::int64_t evictions = 0, calls = 0;
  std::string failure;
  for (int s = 0; s < sequences && failure.empty(); ++s) {
    const std::size_t k = capacities[s % 4];
    const EvictionPolicy policy = policies[rng.below(3)];
    LongTermStore store(k);
    ShadowStore shadow(k);
    const int steps = 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(k / 2 + 12)));
    for (Step now = 0; now < steps && failure.empty(); ++now) {
      ShortTermBuffer stm;
      stm.step = now;
      const std::size_t n = 1 + rng.below(10);
      for (std::size_t i = 0; i < n; ++i) {
        auto item = random_item(w, rng, now);
        if (rng.bernoulli(0.7)) item.annotations = {now, now, 0};
        stm.items.push_back(item);
      }
      std::vector<TransferAction> actions;
      for (std::size_t i = 0; i < n; ++i) {
        actions.push_back(rng.bernoulli(0.7) ? TransferAction::keep : TransferAction::drop);
      }
      const auto got = apply_transfer(stm, actions, store, policy, now);
      const auto want = shadow.transfer(stm.items, actions, policy, now);
      ++calls;
      evictions += static_cast<std::int64_t>(want.size());
      if (store.size() > k) failure = "size " + std::to_string(store.size()) + " > K";
      if (got != want) failure = "eviction differs from the argmin oracle";

      const auto entries = store.entries();
      if (entries.size() == shadow.entries().size() && !entries.empty() && rng.bernoulli(0.5)) {
        const auto& pick = entries[rng.below(entries.size())];
        store.recall(pick.item.triple, now);
        shadow.recall(pick.item.triple, now);
      }
      const auto after = store.entries();
      if (after.size() != shadow.entries().size()) {
        failure = "store size diverged from the oracle";
      } else {
        for (std::size_t i = 0; i < after.size(); ++i) {
          if (after[i].item != shadow.entries()[i].item ||
              after[i].insertion != shadow.entries()[i].insertion) {
            failure = "store contents diverged from the oracle";
          }
        }
      }
      if (!failure.empty()) {
        failure += " (sequence " + std::to_string(s) + ", K=" + std::to_string(k) + ", " +
                   to_string(policy) + ")";
      }
    }
  }
  r.pass = failure.empty();
  r.detail = r.pass ? std::to_string(sequences) + " sequences, " + std::to_string(calls) +
                          " transfers, " + std::to_string(evictions) + " evictions matched"
                    : failure;
  return r;
}

// ---------------------------------------------------------------------------
// 2. Policy oracles

inline CheckResult check_policy_oracles(std::uint64_t seed = 2, int states = 1000) {
  CheckResult r{2, "policy oracle equivalence", true, "", 0.0, 60.0};
  SyntheticWorld w(9, 5);
  Rng rng(seed);
  std::string failure;
  int answered = 0;
  for (int s = 0; s < states && failure.empty(); ++s) {
    const auto base = random_memory_state(w, rng);
    for (QaPolicy policy : {QaPolicy::mra, QaPolicy::mru, QaPolicy::mfu}) {
      auto state = base;
      Query q;
      const std::uint64_t pick = rng.below(10);
      if (pick < 6) {
        q = {w.objects[rng.below(w.objects.size())], w.schema.at_location, w.schema.unknown};
      } else if (pick < 8) {
        q = {w.schema.agent, w.schema.at_location, w.schema.unknown};
      } else {
        q = {w.rooms[rng.below(w.rooms.size())], w.schema.directions[rng.below(4)], w.schema.unknown};
      }
      const auto entries = state.ltm.entries();
      const auto want = oracle_answer(state.stm.items, entries, state.ltm.next_insertion(), q,
                                      policy, w.schema.unknown);
      const auto got = answer_query(state.stm, state.ltm, q, policy, state.stm.step, w.schema.unknown);
      answered += want.found;
      bool ok = got.answer == want.answer && got.recalled.has_value() == want.found;
      if (ok && want.found) {
        ok = got.recalled->triple == want.triple &&
             (got.source == MemorySource::long_term) == want.from_long;
        if (ok && want.from_long) {
          const auto* stored = state.ltm.find(want.triple);
          ok = stored != nullptr && stored->item.annotations.num_recalled ==
                                        base.ltm.find(want.triple)->item.annotations.num_recalled + 1;
        }
      }
      if (!ok) {
        failure = std::string("answer_query(") + to_string(policy) + ") differs on state " +
                  std::to_string(s);
        break;
      }
    }
    if (!failure.empty()) break;
    const std::uint64_t rseed = rng.next();
    Rng a(rseed), b(rseed);
    const auto entries = base.ltm.entries();
    const Move want = oracle_explore(base.stm.items, entries, base.ltm.next_insertion(), w.schema,
                                     base.current, a);
    const Move got = explore_action(base.stm, base.ltm, w.schema, base.current, b);
    if (want != got) {
      failure = "explore_action differs on state " + std::to_string(s) + " (" + to_string(got) +
                " vs " + to_string(want) + ")";
    }
  }
  r.pass = failure.empty();
  r.detail = r.pass ? std::to_string(states) + " states x 3 QA policies + exploration matched (" +
                          std::to_string(answered) + " answered from memory)"
                    : failure;
  return r;
}

// ---------------------------------------------------------------------------
// 3. TD correctness

namespace detail {

inline MemoryState tiny_state(const SyntheticWorld& w, std::size_t n, Step now, Rng& rng) {
  MemoryState m;
  m.now = now;
  for (std::size_t i = 0; i < n; ++i) {
    auto item = random_item(w, rng, now);
    item.annotations = {now, now, 0};
    m.short_items.push_back(item);
  }
  for (int i = 0; i < 4; ++i) m.long_items.push_back(random_item(w, rng, now));
  return m;
}

inline ModelShape synthetic_shape(const SyntheticWorld& w, EncoderKind kind, int dim = 6) {
  return {kind, static_cast<int>(w.vocab.entities.size()), static_cast<int>(w.vocab.relations.size()),
          dim, 2, 4, 6};
}

inline ScalarTransition scalar_view(const Transition& tr, const ParameterSet<float>& online,
                                    const ParameterSet<float>& target, TransferMode mode) {
  ScalarTransition s;
  s.q_now = state_q(*tr.state, online, mode, 100).cast<double>();
  if (!tr.done) {
    s.q_next_online = state_q(*tr.next, online, mode, 100).cast<double>();
    s.q_next_target = state_q(*tr.next, target, mode, 100).cast<double>();
  }
  for (auto a : tr.actions) s.actions.push_back(static_cast<int>(a));
  s.n_next = tr.next->short_items.size();
  s.reward = tr.reward;
  s.done = tr.done;
  return s;
}

}  // namespace detail

inline CheckResult check_td_correctness(std::uint64_t seed = 3) {
  CheckResult r{3, "TD correctness", true, "", 0.0, 1.0};
  SyntheticWorld w(6, 4);
  Rng rng(seed);
  std::vector<std::string> failures;
  auto expect = [&failures](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  auto make = [&](std::size_t n, std::size_t n_next, double reward, bool done) {
    Transition t;
    t.state = std::make_shared<MemoryState>(detail::tiny_state(w, n, 3, rng));
    t.next = std::make_shared<MemoryState>(detail::tiny_state(w, n_next, 4, rng));
    for (std::size_t i = 0; i < n; ++i) {
      t.actions.push_back(rng.bernoulli(0.5) ? TransferAction::keep : TransferAction::drop);
    }
    t.reward = reward;
    t.done = done;
    return t;
  };

  const auto shape = detail::synthetic_shape(w, EncoderKind::gcn);
  const auto online = ParameterSet<float>::initialize(shape, 7);
  const auto target = ParameterSet<float>::initialize(shape, 8);
  const TdContext local{TransferMode::local_full, 0.95, true, 100};

  {
    const auto t = make(5, 6, 1.0, true);
    const auto tt = td_targets(t, online, target, local);
    bool all_r = tt.matched == 5;
    for (double y : tt.y) all_r = all_r && y == 1.0;
    expect(all_r, "terminal target is not r");
  }
  {
    auto constant = online.zeros_like();
    constant.head_out_bias(0, 0) = 2.0f;
    constant.head_out_bias(0, 1) = 2.0f;
    const auto t = make(4, 4, 0.0, false);
    const auto tt = td_targets(t, constant, constant, local);
    bool ok = tt.matched == 4;
    for (double y : tt.y) ok = ok && y == 1.9;
    expect(ok, "gamma * best target value != 1.9");
  }
  {
    const auto t = make(5, 3, 0.0, false);
    const auto tt = td_targets(t, online, target, local);
    expect(tt.matched == 3 && tt.y.size() == 3 && tt.q.size() == 3, "min(5, 3) pairs != 3");
  }
  {
    TransitionTargets t;
    t.matched = 2;
    t.y = {0.0, 0.0};
    t.q = {1.0, -1.0};
    const std::vector<TransitionTargets> batch{t};
    const auto loss = td_loss(batch);
    expect(loss && *loss == 1.0, "loss of errors {1, -1} != 1.0");
  }
  for (TransferMode mode : {TransferMode::local_full, TransferMode::local_stm,
                            TransferMode::global_full, TransferMode::global_stm}) {
    const TdContext dbl{mode, 0.95, true, 100};
    const TdContext mx{mode, 0.95, false, 100};
    const bool global = head_mode(mode) == HeadMode::global;
    for (int i = 0; i < 25; ++i) {
      const auto t = make(1 + rng.below(7), 1 + rng.below(7), rng.bernoulli(0.5) ? 1.0 : 0.0, false);
      const auto a = td_targets(t, online, online, dbl);
      const auto b = td_targets(t, online, online, mx);
      expect(a.y == b.y, std::string("double-DQN != max path with online = target (") +
                             to_string(mode) + ")");

      const auto sv = detail::scalar_view(t, online, target, mode);
      for (bool use_double : {true, false}) {
        const auto got = td_targets(t, online, target, use_double ? dbl : mx);
        const auto want = scalar_targets(sv, 0.95, use_double, global);
        expect(got.y == want.y && got.q == want.q,
               std::string("targets differ from scalar recomputation (") + to_string(mode) + ")");
      }
    }
    const auto t1 = make(5, 4, 1.0, false);
    const auto t2 = make(3, 6, 0.0, true);
    const std::vector<TransitionTargets> batch{td_targets(t1, online, target, dbl),
                                               td_targets(t2, online, target, dbl)};
    const std::vector<ScalarTargets> sbatch{
        scalar_targets(detail::scalar_view(t1, online, target, mode), 0.95, true, global),
        scalar_targets(detail::scalar_view(t2, online, target, mode), 0.95, true, global)};
    expect(td_loss(batch) == scalar_loss(sbatch), "2-transition batch loss differs from oracle");
  }
  r.pass = failures.empty();
  r.detail = r.pass ? "terminal, arithmetic, min-pairing, double==max, and scalar oracle all exact"
                    : failures.front() + (failures.size() > 1 ? " (+" + std::to_string(failures.size() - 1) + " more)" : "");
  return r;
}

// ---------------------------------------------------------------------------
// 4. Gradient checks

// Random instance with at most six nodes: every tensor is randomized, including
// biases, so ReLU inputs sit away from zero with probability one.
struct GradientInstance {
  SyntheticWorld world{3, 2};
  GraphView graph;
  std::vector<MemoryItem> items;
  std::vector<Tape<double>::SquaredTerm> terms;
  ParameterSet<double> params;
};

inline GradientInstance gradient_instance(EncoderKind kind, HeadMode head, std::uint64_t seed) {
  GradientInstance g;
  Rng rng(seed);
  const auto& w = g.world;
  const std::vector<EntityId> pool = {w.schema.agent, w.schema.wall, w.rooms[0], w.rooms[1],
                                      w.rooms[2], w.objects[0]};
  std::vector<MemoryItem> short_items, long_items;
  const Step now = 10;
  for (int i = 0; i < 5; ++i) {
    MemoryItem m;
    const std::size_t hi = rng.below(pool.size());
    const EntityId h = pool[hi];
    const EntityId t = pool[(hi + 1 + rng.below(pool.size() - 1)) % pool.size()];
    m.triple = {h, RelationId{static_cast<std::uint32_t>(rng.below(w.vocab.relations.size()))}, t};
    const Step ta = static_cast<Step>(rng.below(10));
    m.annotations = {ta, ta + static_cast<Step>(rng.below(static_cast<std::uint64_t>(now - ta) + 1)),
                     static_cast<std::int64_t>(rng.below(12))};
    (i < 3 ? short_items : long_items).push_back(m);
  }
  g.items = short_items;
  g.graph = build_graph_view(short_items, long_items, GraphMode::full, now, 100);
  const ModelShape shape{kind, static_cast<int>(w.vocab.entities.size()),
                         static_cast<int>(w.vocab.relations.size()), 4, 2, 3, 5};
  g.params = ParameterSet<double>::initialize(shape, seed);
  g.params.for_each([&rng](const std::string&, ParameterSet<double>::Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-0.8, 0.8);
  });
  const Eigen::Index rows = head == HeadMode::local ? static_cast<Eigen::Index>(g.items.size()) : 1;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < 2; ++c) g.terms.push_back({i, c, rng.uniform(-1.0, 1.0), 1.0});
  return g;
}

inline double instance_loss(const GradientInstance& g, const ParameterSet<double>& p, HeadMode head,
                            ParameterSet<double>* grads) {
  Tape<double> tape;
  const auto q = forward_q(tape, g.graph, g.items, p, head, grads);
  const auto loss = tape.squared_error(q, g.terms);
  if (grads != nullptr) tape.backward(loss);
  return tape.value(loss)(0, 0);
}

inline double gradient_check_error(EncoderKind kind, HeadMode head, std::uint64_t seed) {
  auto g = gradient_instance(kind, head, seed);
  auto analytic = g.params.zeros_like();
  instance_loss(g, g.params, head, &analytic);
  const auto numeric = finite_difference_gradients(
      g.params, [&](const ParameterSet<double>& p) { return instance_loss(g, p, head, nullptr); },
      1e-5);
  return max_relative_error(analytic, numeric);
}

inline CheckResult check_gradients(std::uint64_t seed = 4, int instances = 3) {
  CheckResult r{4, "gradient checks", true, "", 0.0, 120.0};
  double worst = 0.0;
  std::string where;
  for (EncoderKind kind : {EncoderKind::gcn, EncoderKind::rgcn, EncoderKind::stare_lite}) {
    for (HeadMode head : {HeadMode::local, HeadMode::global}) {
      for (int i = 0; i < instances; ++i) {
        const double e = gradient_check_error(kind, head, mix_seed(seed, static_cast<std::uint64_t>(i)));
        if (e > worst) {
          worst = e;
          where = std::string(to_string(kind)) + (head == HeadMode::local ? "/local" : "/global");
        }
      }
    }
  }
  r.pass = worst < 1e-4;
  r.detail = "max relative error " + std::to_string(worst) + " (worst " + where + "), tolerance 1e-4";
  return r;
}

// ---------------------------------------------------------------------------
// 5. Determinism

inline ExperimentConfig smoke_config(const std::filesystem::path& out_dir, const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.world.grid_length = 3;
  c.world.num_static_objects = 2;
  c.world.num_moving_objects = 2;
  c.world.num_inner_walls = 3;
  c.world.horizon = 30;
  c.policies.capacity = 16;
  c.transfer.kind = TransferSpec::Kind::learned;
  c.transfer.mode = TransferMode::local_stm;
  c.trainer.mode = TransferMode::local_stm;
  c.trainer.total_iterations = 400;
  c.trainer.warm_start = 100;
  c.trainer.batch_size = 8;
  c.trainer.replay_capacity = 1000;
  c.trainer.epsilon_decay_iters = 300;
  c.trainer.seeds = {3};
  c.output_dir = out_dir;
  return c;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline CheckResult check_determinism(const std::filesystem::path& scratch) {
  CheckResult r{5, "determinism", true, "", 0.0, 120.0};
  const auto a = smoke_config(scratch, "determinism_a");
  const auto b = smoke_config(scratch, "determinism_b");
  train_seed(a, 3);
  train_seed(b, 3);
  std::vector<std::string> differ;
  std::size_t bytes = 0;
  for (const char* f : {"metrics.csv", "decisions.jsonl", "checkpoint.json"}) {
    const auto x = slurp(a.seed_dir(3) / f);
    const auto y = slurp(b.seed_dir(3) / f);
    bytes += x.size();
    if (x.empty() || x != y) differ.push_back(f);
  }
  r.pass = differ.empty();
  r.detail = r.pass ? "metrics, decisions and checkpoint byte-identical (" + std::to_string(bytes) + " bytes)"
                    : "differs: " + differ.front();
  return r;
}

// ---------------------------------------------------------------------------
// 6 and 7. Reduced-scale experiments

struct BaselineScores {
  double always = 0.0, novel = 0.0, random = 0.0;
};

inline BaselineScores reduced_baselines() {
  auto run = [](TransferBaseline::Kind k) {
    return mean_test_score([k](std::uint64_t) { return TransferSource{TransferBaseline{k, 0.5}}; });
  };
  return {run(TransferBaseline::Kind::always), run(TransferBaseline::Kind::novel_only),
          run(TransferBaseline::Kind::random)};
}

inline CheckResult check_baseline_ordering(const BaselineScores& s, double seconds) {
  CheckResult r{6, "baseline ordering", true, "", seconds, 900.0};
  r.pass = s.novel >= s.always && s.always >= s.random && s.novel - s.random >= 2.0;
  r.detail = "novel " + fmt(s.novel) + ", always " + fmt(s.always) + ", random " + fmt(s.random) +
             "; need novel >= always >= random and novel - random >= 2";
  return r;
}

inline TrainerConfig reduced_trainer() {
  TrainerConfig t;
  t.mode = TransferMode::local_stm;
  t.total_iterations = kReducedTrainIterations;
  t.seeds = reduced_seeds();
  return t;
}

inline double reduced_learned_score() {
  const WorldConfig w = reduced_world();
  RoomWorld world(w);
  const ModelShape shape = model_shape_for(world, EncoderKind::gcn);
  const TrainerConfig t = reduced_trainer();
  std::map<std::uint64_t, ParameterSet<float>> trained;
  for (std::uint64_t seed : reduced_seeds()) {
    Trainer<float> trainer(t, w, shape, reduced_policies(), seed);
    TrainHooks hooks;
    hooks.record_decisions = false;
    trained.emplace(seed, trainer.run(hooks).params);
  }
  return mean_test_score([&](std::uint64_t seed) {
    return TransferSource{LearnedPolicy{trained.at(seed), t.mode}};
  });
}

inline CheckResult check_learning_signal(double learned, const BaselineScores& s, double seconds) {
  CheckResult r{7, "learning signal", true, "", seconds, 2700.0};
  const double need_random = 1.15 * s.random;
  const double need_always = s.always - 1.0;
  r.pass = learned >= need_random && learned >= need_always;
  r.detail = "learned " + fmt(learned) + "; need >= " + fmt(need_random) + " (1.15 x random) and >= " +
             fmt(need_always) + " (always - 1)";
  return r;
}

// ---------------------------------------------------------------------------
// 8. Analytics fidelity

// 560 decisions over 100 steps: agent location 98/2, query-object location
// 58/2, direction links 68/332.
inline std::string synthetic_decision_log() {
  std::vector<std::pair<std::string, bool>> agent, object, direction;
  for (int i = 0; i < 100; ++i) agent.push_back({"agent_loc", i % 50 != 7});
  for (int i = 0; i < 60; ++i) object.push_back({"object_loc", i % 30 != 11});
  for (int i = 0; i < 400; ++i) direction.push_back({"direction", i % 100 < 17});
  const char* dirs[] = {"north", "south", "east", "west"};
  const char* objects[] = {"john", "william", "table", "laptop", "cat", "mug"};
  std::ostringstream out;
  std::size_t ai = 0, oi = 0, di = 0;
  for (int step = 0; step < 100; ++step) {
    const std::string room = "room" + std::to_string(step % 7);
    const std::string queried = objects[step % 6];
    auto line = [&](const std::string& h, const std::string& rel, const std::string& t, bool keep) {
      nlohmann::json j{{"episode", 0},
                       {"step", step},
                       {"triple", {{"h", h}, {"r", rel}, {"t", t}}},
                       {"action", keep ? "keep" : "drop"},
                       {"q_drop", keep ? 0.1 : 0.9},
                       {"q_keep", keep ? 0.9 : 0.1},
                       {"epsilon", 0.0},
                       {"query", queried}};
      out << j.dump() << '\n';
    };
    line("agent", "at_location", room, agent[ai++].second);
    if (step < 60) line(queried, "at_location", room, object[oi++].second);
    for (int d = 0; d < 4; ++d) {
      const bool to_wall = (step + d) % 3 == 0;
      line(room, dirs[d], to_wall ? "wall" : "room" + std::to_string((step + d + 1) % 7),
           direction[di++].second);
    }
  }
  return out.str();
}

inline CheckResult check_analytics_fidelity() {
  CheckResult r{8, "analytics fidelity", true, "", 0.0, 1.0};
  std::istringstream in(synthetic_decision_log());
  const auto s = analyze_decisions(in, 10);
  const auto& c = s.per_category;
  auto is = [&c](const char* k, std::int64_t keep, std::int64_t drop) {
    return c.at(k).keep == keep && c.at(k).drop == drop;
  };
  r.pass = s.total == 560 && s.keeps == 224 && s.drops == 336 && s.keep_rate == 0.40 &&
           is("agent_location", 98, 2) && is("query_object_location", 58, 2) &&
           is("direction_links", 68, 332);
  r.detail = "keep_rate " + fmt(s.keep_rate, 2) + ", agent " + std::to_string(c.at("agent_location").keep) +
             "/" + std::to_string(c.at("agent_location").drop) + ", query-object " +
             std::to_string(c.at("query_object_location").keep) + "/" +
             std::to_string(c.at("query_object_location").drop) + ", direction " +
             std::to_string(c.at("direction_links").keep) + "/" +
             std::to_string(c.at("direction_links").drop);
  return r;
}

// ---------------------------------------------------------------------------
// 9. Epsilon schedule

inline CheckResult check_epsilon_schedule() {
  CheckResult r{9, "epsilon schedule", true, "", 0.0, 1.0};
  const TrainerConfig c;
  bool monotone = true;
  for (std::int64_t i = 1; i <= 20000; ++i) monotone = monotone && epsilon_at(i, c) <= epsilon_at(i - 1, c);
  r.pass = epsilon_at(0, c) == 1.0 && epsilon_at(10000, c) == 0.01 && epsilon_at(20000, c) == 0.01 && monotone;
  r.detail = "eps(0)=" + fmt(epsilon_at(0, c), 4) + ", eps(10000)=" + fmt(epsilon_at(10000, c), 4) +
             ", monotone over [0, 20000]: " + (monotone ? "yes" : "no");
  return r;
}

// ---------------------------------------------------------------------------
// 10. Mode contracts

inline CheckResult check_mode_contracts(std::uint64_t seed = 10) {
  CheckResult r{10, "mode contracts", true, "", 0.0, 60.0};
  const WorldConfig w = reduced_world();
  RoomWorld world(w);
  const ModelShape shape = model_shape_for(world, EncoderKind::gcn);
  const auto params = ParameterSet<float>::initialize(shape, seed);
  std::vector<std::string> failures;

  std::int64_t global_steps = 0;
  for (TransferMode mode : {TransferMode::global_full, TransferMode::global_stm}) {
    for (double eps : {0.0, 0.3, 1.0}) {
      EpisodeRunner runner(world, reduced_policies());
      auto decide = learned_decider(params, mode, w.horizon, [eps] { return eps; });
      runner.run(0, mix_seed(seed, static_cast<std::uint64_t>(eps * 10)), decide,
                 [&](const StepRecord& rec) {
                   ++global_steps;
                   const auto& a = rec.decision.actions;
                   if (std::adjacent_find(a.begin(), a.end(), std::not_equal_to<>()) != a.end()) {
                     failures.push_back(std::string(to_string(mode)) + " mixed actions at step " +
                                        std::to_string(rec.step));
                   }
                   return true;
                 });
    }
  }

  std::int64_t stm_graphs = 0, long_edges = 0, steps_with_long = 0, full_long_edges = 0;
  {
    EpisodeRunner runner(world, reduced_policies());
    const LongTermStore* store = &runner.store();
    auto decide = learned_decider(params, TransferMode::local_stm, w.horizon, [] { return 0.5; },
                                  [&](const GraphView& g) {
                                    ++stm_graphs;
                                    long_edges += static_cast<std::int64_t>(g.count(MemorySource::long_term));
                                    steps_with_long += store->empty() ? 0 : 1;
                                  });
    runner.run(0, mix_seed(seed, 99), decide);
  }
  {
    EpisodeRunner runner(world, reduced_policies());
    auto decide = learned_decider(params, TransferMode::local_full, w.horizon, [] { return 0.5; },
                                  [&](const GraphView& g) {
                                    full_long_edges += static_cast<std::int64_t>(g.count(MemorySource::long_term));
                                  });
    runner.run(0, mix_seed(seed, 99), decide);
  }
  if (long_edges != 0) failures.push_back("local_stm encoder saw " + std::to_string(long_edges) + " long-term edges");
  if (steps_with_long == 0) failures.push_back("long-term memory stayed empty; contract not exercised");
  if (full_long_edges == 0) failures.push_back("local_full never saw long-term edges (instrumentation broken)");
  if (stm_graphs != w.horizon) failures.push_back("expected one graph per step");

  r.pass = failures.empty();
  r.detail = r.pass ? std::to_string(global_steps) + " global steps uniform; local_stm: " +
                          std::to_string(stm_graphs) + " graphs, 0 long-term edges (" +
                          std::to_string(steps_with_long) + " steps with non-empty long-term memory)"
                    : failures.front();
  return r;
}

// ---------------------------------------------------------------------------

template <class F>
CheckResult timed(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r = f();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// Runs the checks; the reduced-scale experiments (6, 7) only when `full`.
inline std::vector<CheckResult> run_checks(bool full, const std::filesystem::path& scratch,
                                           const std::function<void(const CheckResult&)>& report = {}) {
  std::vector<CheckResult> out;
  auto add = [&](CheckResult r) {
    if (r.limit_seconds > 0.0 && r.seconds > r.limit_seconds) {
      r.pass = false;
      r.detail += "; runtime " + fmt(r.seconds, 1) + " s exceeds " + fmt(r.limit_seconds, 0) + " s";
    }
    if (report) report(r);
    out.push_back(r);
  };
  add(timed([] { return check_memory_invariants(); }));
  add(timed([] { return check_policy_oracles(); }));
  add(timed([] { return check_td_correctness(); }));
  add(timed([] { return check_gradients(); }));
  add(timed([&] { return check_determinism(scratch); }));
  if (full) {
    auto t0 = std::chrono::steady_clock::now();
    const auto baselines = reduced_baselines();
    const double t_base = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    add(check_baseline_ordering(baselines, t_base));
    t0 = std::chrono::steady_clock::now();
    const double learned = reduced_learned_score();
    const double t_learn = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    add(check_learning_signal(learned, baselines, t_learn));
  }
  add(timed([] { return check_analytics_fidelity(); }));
  add(timed([] { return check_epsilon_schedule(); }));
  add(timed([] { return check_mode_contracts(); }));
  return out;
}

inline std::string format_result(const CheckResult& r) {
  std::ostringstream o;
  o << (r.pass ? "PASS" : "FAIL") << "  [" << r.id << "] " << r.name << " (" << fmt(r.seconds, 2)
    << " s): " << r.detail;
  return o.str();
}

}  // namespace kgmem::verify
