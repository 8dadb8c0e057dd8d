#pragma once

// One agent-environment episode with fixed symbolic QA / exploration /
// eviction. Transfer decisions come from a pluggable decider so the same loop
// serves the baselines, evaluation of learned policies, and training.
//
// Per step t:
//   short_t <- refresh(obs_t); decide actions on M_t = (short_t, long_t);
//   apply transfer; answer query_t from short_t ∪ long_t'; explore;
//   env.step(move, answer) -> r_t, obs_{t+1};  M_{t+1} = (short_{t+1}, long_t').

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "kgmem/kg_core.hpp"
#include "kgmem/memory_store.hpp"
#include "kgmem/rng.hpp"
#include "kgmem/room_env.hpp"
#include "kgmem/symbolic_policies.hpp"

namespace kgmem {

struct AgentPolicies {
  QaPolicy qa = QaPolicy::mru;
  EvictionPolicy eviction = EvictionPolicy::lru;
  std::size_t capacity = 128;
  friend bool operator==(const AgentPolicies&, const AgentPolicies&) = default;
};

// Snapshot of M_t as stored in replay.
struct MemoryState {
  std::vector<MemoryItem> short_items;
  std::vector<MemoryItem> long_items;
  Step now = 0;
};

struct Decision {
  std::vector<TransferAction> actions;
  // n x 2 (local) or 1 x 2 (global) Q-values behind the decision; empty for
  // symbolic baselines.
  Eigen::MatrixXd q;
  double epsilon = 0.0;
};

struct StepRecord {
  std::uint64_t episode = 0;
  Step step = 0;
  HiddenState hidden;  // before the environment step
  std::shared_ptr<const MemoryState> state;
  Decision decision;
  Query query{};
  QaResult qa{};
  Move move = Move::stay;
  double reward = 0.0;
  bool done = false;
  std::shared_ptr<const MemoryState> next;
  std::vector<MemoryItem> evicted;
};

using Decider = std::function<Decision(const MemoryState&, Rng&)>;
// Return false to stop the episode after this step.
using StepObserver = std::function<bool(const StepRecord&)>;

struct EpisodeResult {
  double score = 0.0;
  Step steps = 0;
};

class EpisodeRunner {
 public:
  EpisodeRunner(RoomWorld& world, AgentPolicies policies) : world_(world), policies_(policies) {}

  // Long-term store of the episode in progress (valid inside deciders).
  const LongTermStore& store() const { return store_; }

  EpisodeResult run(std::uint64_t episode_index, std::uint64_t episode_seed, const Decider& decide,
                    const StepObserver& observe = {}) {
    Rng agent_rng(mix_seed(episode_seed, 21));
    store_ = LongTermStore(policies_.capacity);
    const Schema& schema = world_.schema();

    auto start = world_.reset(episode_seed);
    Observation obs = std::move(start.observation);
    Query query = start.query;
    EpisodeResult result;

    auto snapshot = [&](const ShortTermBuffer& stm) {
      auto m = std::make_shared<MemoryState>();
      m->short_items = stm.items;
      m->long_items = store_.items();
      m->now = stm.step;
      return std::shared_ptr<const MemoryState>(std::move(m));
    };

    ShortTermBuffer stm = refresh_short_term(obs, world_.state().step);
    std::shared_ptr<const MemoryState> current = snapshot(stm);
    for (;;) {
      const Step now = world_.state().step;
      StepRecord rec;
      rec.episode = episode_index;
      rec.step = now;
      rec.hidden = world_.state();
      rec.state = current;
      rec.query = query;

      rec.decision = decide(*current, agent_rng);
      rec.evicted = apply_transfer(stm, rec.decision.actions, store_, policies_.eviction, now);
      rec.qa = answer_query(stm, store_, query, policies_.qa, now, schema.unknown);
      rec.move = explore_action(stm, store_, schema, world_.state().agent_room, agent_rng);

      auto out = world_.step(rec.move, rec.qa.answer);
      rec.reward = out.reward;
      rec.done = out.done;
      result.score += out.reward;
      ++result.steps;

      stm = refresh_short_term(out.observation, out.state.step);
      current = snapshot(stm);
      rec.next = current;
      query = out.query;

      const bool keep_going = observe ? observe(rec) : true;
      if (out.done || !keep_going) break;
    }
    return result;
  }

 private:
  RoomWorld& world_;
  AgentPolicies policies_;
  LongTermStore store_{1};
};

// Symbolic transfer baseline decider bound to a runner's live store.
inline Decider baseline_decider(TransferBaseline baseline, const EpisodeRunner& runner) {
  return [baseline, &runner](const MemoryState& m, Rng& rng) {
    ShortTermBuffer stm{m.short_items, m.now};
    Decision d;
    d.actions = baseline_transfer(stm, runner.store(), baseline, rng);
    return d;
  };
}

}  // namespace kgmem
