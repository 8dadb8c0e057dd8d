#pragma once

// Per-item DQN for keep/drop transfer decisions over variable-size
// short-term sets. Consecutive short-term sets are paired index-wise up to
// the shorter length; each matched pair yields one TD term.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kgmem/agent.hpp"
#include "kgmem/errors.hpp"
#include "kgmem/kg_core.hpp"
#include "kgmem/neural_core.hpp"
#include "kgmem/rng.hpp"

namespace kgmem {

enum class TransferMode : std::uint8_t { local_full, local_stm, global_full, global_stm };
enum class OptimizerKind : std::uint8_t { sgd, adam };

inline const char* to_string(TransferMode m) {
  switch (m) {
    case TransferMode::local_full: return "local_full";
    case TransferMode::local_stm: return "local_stm";
    case TransferMode::global_full: return "global_full";
    case TransferMode::global_stm: return "global_stm";
  }
  return "?";
}

inline TransferMode transfer_mode_from_string(const std::string& s) {
  if (s == "local_full") return TransferMode::local_full;
  if (s == "local_stm") return TransferMode::local_stm;
  if (s == "global_full") return TransferMode::global_full;
  if (s == "global_stm") return TransferMode::global_stm;
  throw ConfigError("unknown transfer mode '" + s + "'");
}

inline HeadMode head_mode(TransferMode m) {
  return m == TransferMode::local_full || m == TransferMode::local_stm ? HeadMode::local
                                                                       : HeadMode::global;
}

inline GraphMode graph_mode(TransferMode m) {
  return m == TransferMode::local_stm || m == TransferMode::global_stm ? GraphMode::stm_only
                                                                       : GraphMode::full;
}

struct TrainerConfig {
  double gamma = 0.95;
  double lr = 1e-4;
  int target_update_interval = 50;
  int total_iterations = 20000;
  double epsilon_max = 1.0;
  double epsilon_min = 0.01;
  int epsilon_decay_iters = 10000;
  bool double_dqn = true;
  double grad_clip_value = 10.0;
  std::vector<std::uint64_t> seeds = {0, 5, 10, 15, 20};
  TransferMode mode = TransferMode::local_stm;
  std::size_t replay_capacity = 20000;
  std::size_t warm_start = 2000;
  std::size_t batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Extra training-time permutation of the next state's items before matching.
  bool reshuffle_matching = false;
};

inline void validate(const TrainerConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("trainer." + key + ": " + why);
  };
  if (!(c.gamma >= 0.0 && c.gamma < 1.0)) fail("gamma", "must be in [0, 1)");
  if (!(c.lr > 0.0)) fail("lr", "must be positive");
  if (c.target_update_interval < 1) fail("target_update_interval", "must be >= 1");
  if (c.total_iterations < 0) fail("total_iterations", "must be >= 0");
  if (c.epsilon_decay_iters < 1) fail("epsilon_decay_iters", "must be >= 1");
  if (!(c.epsilon_min >= 0.0 && c.epsilon_min <= c.epsilon_max && c.epsilon_max <= 1.0)) {
    fail("epsilon_min", "need 0 <= epsilon_min <= epsilon_max <= 1");
  }
  if (!(c.grad_clip_value > 0.0)) fail("grad_clip_value", "must be positive");
  if (c.replay_capacity < 1) fail("replay_capacity", "must be >= 1");
  if (c.batch_size < 1) fail("batch_size", "must be >= 1");
  if (c.warm_start < c.batch_size) fail("warm_start", "must be >= batch_size");
  if (c.warm_start > c.replay_capacity) fail("warm_start", "must not exceed replay_capacity");
  if (c.seeds.empty()) fail("seeds", "need at least one seed");
}

// Linear decay from epsilon_max at 0 to epsilon_min at epsilon_decay_iters.
inline double epsilon_at(std::int64_t iteration, const TrainerConfig& c = {}) {
  if (iteration >= c.epsilon_decay_iters) return c.epsilon_min;
  const double frac = static_cast<double>(iteration) / static_cast<double>(c.epsilon_decay_iters);
  return c.epsilon_max + (c.epsilon_min - c.epsilon_max) * frac;
}

// Per-item epsilon-greedy (local) or one pooled decision broadcast to all n
// items (global, q is 1 x 2). Ties in argmax pick drop.
inline std::vector<TransferAction> select_actions(const Eigen::MatrixXd& q, std::size_t n,
                                                  HeadMode mode, double epsilon, Rng& rng) {
  auto greedy = [&](Eigen::Index row) {
    return q(row, 1) > q(row, 0) ? TransferAction::keep : TransferAction::drop;
  };
  auto draw = [&](Eigen::Index row) {
    if (rng.uniform() < epsilon) {
      return rng.below(2) == 1 ? TransferAction::keep : TransferAction::drop;
    }
    return greedy(row);
  };
  std::vector<TransferAction> actions;
  actions.reserve(n);
  if (mode == HeadMode::global) {
    if (n == 0) return actions;
    actions.assign(n, draw(0));
    return actions;
  }
  if (static_cast<std::size_t>(q.rows()) != n) throw UsageError("select_actions: q rows != n");
  for (std::size_t i = 0; i < n; ++i) actions.push_back(draw(static_cast<Eigen::Index>(i)));
  return actions;
}

// ---------------------------------------------------------------------------
// Replay

struct Transition {
  std::shared_ptr<const MemoryState> state;
  std::vector<TransferAction> actions;
  double reward = 0.0;
  std::shared_ptr<const MemoryState> next;
  bool done = false;
};

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t warm_start, std::size_t batch_size)
      : capacity_(capacity), warm_start_(warm_start), batch_size_(batch_size) {
    if (capacity_ == 0 || batch_size_ == 0 || warm_start_ < batch_size_ || warm_start_ > capacity_) {
      throw ConfigError("replay: need 0 < batch <= warm_start <= capacity");
    }
    data_.reserve(std::min<std::size_t>(capacity_, 4096));
  }

  void push(Transition t) {
    if (t.actions.size() != t.state->short_items.size()) {
      throw UsageError("transition actions do not match its short-term set");
    }
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
    }
    head_ = (head_ + 1) % capacity_;
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  // Strictly more than warm_start transitions stored.
  bool ready() const { return data_.size() > warm_start_; }

  // Uniform without replacement within the batch.
  std::vector<const Transition*> sample(Rng& rng) const {
    if (!ready()) throw UsageError("replay sampled before warm start");
    std::vector<std::size_t> idx(data_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<const Transition*> out;
    out.reserve(batch_size_);
    for (std::size_t k = 0; k < batch_size_; ++k) {
      const std::size_t j = k + rng.below(idx.size() - k);
      std::swap(idx[k], idx[j]);
      out.push_back(&data_[idx[k]]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t warm_start_;
  std::size_t batch_size_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

// ---------------------------------------------------------------------------
// TD targets and loss

struct TdContext {
  TransferMode mode = TransferMode::local_stm;
  double gamma = 0.95;
  bool double_dqn = true;
  Step horizon = 100;
};

inline GraphView graph_for(const MemoryState& m, TransferMode mode, Step horizon) {
  return build_graph_view(m.short_items, m.long_items, graph_mode(mode), m.now, horizon);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> state_q(const MemoryState& m,
                                                              const ParameterSet<Scalar>& p,
                                                              TransferMode mode, Step horizon) {
  return q_values(graph_for(m, mode, horizon), m.short_items, p, head_mode(mode));
}

struct TransitionTargets {
  std::size_t matched = 0;  // l_b = min(|short_b|, |short_{b+1}|)
  std::vector<double> y;
  std::vector<double> q;    // online Q(M_b, j, a_{b,j})
};

// y_j = r + gamma (1 - d) qhat_j for j < l_b; qhat from the target network,
// at the online argmax when double_dqn is set. `next_order` optionally
// permutes the next state's items before index-wise matching.
template <typename Scalar>
TransitionTargets td_targets(const Transition& tr, const ParameterSet<Scalar>& online,
                             const ParameterSet<Scalar>& target, const TdContext& ctx,
                             std::span<const std::size_t> next_order = {}) {
  TransitionTargets out;
  const std::size_t n = tr.state->short_items.size();
  const std::size_t n_next = tr.next->short_items.size();
  out.matched = std::min(n, n_next);
  if (out.matched == 0) return out;
  const HeadMode head = head_mode(ctx.mode);
  auto row = [head](std::size_t j) { return head == HeadMode::local ? Eigen::Index(j) : 0; };

  const auto q_now = state_q(*tr.state, online, ctx.mode, ctx.horizon);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> q_next_target, q_next_online;
  if (!tr.done) {
    q_next_target = state_q(*tr.next, target, ctx.mode, ctx.horizon);
    if (ctx.double_dqn) q_next_online = state_q(*tr.next, online, ctx.mode, ctx.horizon);
  }
  for (std::size_t j = 0; j < out.matched; ++j) {
    double y = tr.reward;
    if (!tr.done) {
      const std::size_t k = next_order.empty() ? j : next_order[j];
      const Eigen::Index r = row(k);
      double bootstrap;
      if (ctx.double_dqn) {
        const int a = q_next_online(r, 1) > q_next_online(r, 0) ? 1 : 0;
        bootstrap = static_cast<double>(q_next_target(r, a));
      } else {
        bootstrap = static_cast<double>(std::max(q_next_target(r, 0), q_next_target(r, 1)));
      }
      y += ctx.gamma * bootstrap;
    }
    out.y.push_back(y);
    out.q.push_back(static_cast<double>(
        q_now(row(j), static_cast<Eigen::Index>(tr.actions[j]))));
  }
  return out;
}

// Mean over transitions with l_b > 0 of (1/l_b) sum_j (q_j - y_j)^2.
inline std::optional<double> td_loss(std::span<const TransitionTargets> batch) {
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& t : batch) {
    if (t.matched == 0) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < t.matched; ++j) s += (t.q[j] - t.y[j]) * (t.q[j] - t.y[j]);
    total += s / static_cast<double>(t.matched);
    ++used;
  }
  if (used == 0) return std::nullopt;
  return total / static_cast<double>(used);
}

// Loss of the batch with targets held fixed; gradients w.r.t. the online
// parameters are accumulated into `grads`. Returns nullopt when no
// transition has a matched pair.
template <typename Scalar>
std::optional<double> td_loss_and_gradients(std::span<const Transition* const> batch,
                                            std::span<const TransitionTargets> targets,
                                            const ParameterSet<Scalar>& online,
                                            const TdContext& ctx, ParameterSet<Scalar>& grads) {
  std::size_t used = 0;
  for (const auto& t : targets) used += t.matched > 0 ? 1 : 0;
  if (used == 0) return std::nullopt;
  const HeadMode head = head_mode(ctx.mode);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& t = targets[b];
    if (t.matched == 0) continue;
    const Transition& tr = *batch[b];
    Tape<Scalar> tape;
    const auto q = forward_q(tape, graph_for(*tr.state, ctx.mode, ctx.horizon),
                             tr.state->short_items, online, head, &grads);
    std::vector<typename Tape<Scalar>::SquaredTerm> terms;
    const Scalar w = Scalar(1) / static_cast<Scalar>(t.matched * used);
    for (std::size_t j = 0; j < t.matched; ++j) {
      terms.push_back({head == HeadMode::local ? Eigen::Index(j) : 0,
                       static_cast<Eigen::Index>(tr.actions[j]), static_cast<Scalar>(t.y[j]), w});
    }
    const auto loss = tape.squared_error(q, std::move(terms));
    total += static_cast<double>(tape.value(loss)(0, 0));
    tape.backward(loss);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename Scalar>
void clip_gradients(ParameterSet<Scalar>& grads, double clip) {
  const Scalar c = static_cast<Scalar>(clip);
  grads.for_each([c](const std::string&, auto& g) { g = g.cwiseMax(-c).cwiseMin(c); });
}

template <typename Scalar>
class Optimizer {
 public:
  Optimizer(const TrainerConfig& cfg, const ParameterSet<Scalar>& like)
      : kind_(cfg.optimizer), lr_(cfg.lr), beta1_(cfg.adam_beta1), beta2_(cfg.adam_beta2),
        eps_(cfg.adam_eps) {
    if (kind_ == OptimizerKind::adam) {
      m_ = like.zeros_like();
      v_ = like.zeros_like();
    }
  }

  void step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads) {
    std::vector<const typename ParameterSet<Scalar>::Matrix*> g;
    grads.for_each([&](const std::string&, const auto& m) { g.push_back(&m); });
    if (kind_ == OptimizerKind::sgd) {
      std::size_t i = 0;
      const Scalar lr = static_cast<Scalar>(lr_);
      params.for_each([&](const std::string&, auto& p) { p -= lr * *g[i++]; });
      return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::vector<typename ParameterSet<Scalar>::Matrix*> ms, vs;
    m_.for_each([&](const std::string&, auto& m) { ms.push_back(&m); });
    v_.for_each([&](const std::string&, auto& v) { vs.push_back(&v); });
    std::size_t i = 0;
    params.for_each([&](const std::string&, auto& p) {
      auto& m = *ms[i];
      auto& v = *vs[i];
      const auto& gi = *g[i];
      m = Scalar(beta1_) * m + Scalar(1 - beta1_) * gi;
      v = Scalar(beta2_) * v + Scalar(1 - beta2_) * gi.cwiseProduct(gi);
      const auto mhat = m / Scalar(c1);
      const auto vhat = v / Scalar(c2);
      p.array() -= Scalar(lr_) * mhat.array() / (vhat.array().sqrt() + Scalar(eps_));
      ++i;
    });
  }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  ParameterSet<Scalar> m_, v_;
};

// ---------------------------------------------------------------------------
// Logs

struct DecisionRecord {
  std::uint64_t episode = 0;
  Step step = 0;
  Triple triple;
  TransferAction action = TransferAction::drop;
  double q_drop = 0.0;
  double q_keep = 0.0;
  double epsilon = 0.0;
  EntityId query;  // head of the step's query
};

inline nlohmann::json to_json(const Vocabulary& vocab, const DecisionRecord& d) {
  return {{"episode", d.episode},
          {"step", d.step},
          {"triple", triple_to_json(vocab, d.triple)},
          {"action", d.action == TransferAction::keep ? "keep" : "drop"},
          {"q_drop", d.q_drop},
          {"q_keep", d.q_keep},
          {"epsilon", d.epsilon},
          {"query", vocab.entities.label(d.query)}};
}

inline void append_decisions(const StepRecord& rec, std::vector<DecisionRecord>& out) {
  for (std::size_t i = 0; i < rec.decision.actions.size(); ++i) {
    DecisionRecord d;
    d.episode = rec.episode;
    d.step = rec.step;
    d.triple = rec.state->short_items[i].triple;
    d.action = rec.decision.actions[i];
    if (rec.decision.q.rows() > 0) {
      const Eigen::Index r = rec.decision.q.rows() == 1 ? 0 : static_cast<Eigen::Index>(i);
      d.q_drop = rec.decision.q(r, 0);
      d.q_keep = rec.decision.q(r, 1);
    }
    d.epsilon = rec.decision.epsilon;
    d.query = rec.query.head;
    out.push_back(d);
  }
}

struct MetricsRow {
  std::int64_t iteration = 0;
  std::uint64_t episode = 0;
  std::optional<double> loss;
  double epsilon = 0.0;
  std::optional<double> episode_score;
};

// ---------------------------------------------------------------------------
// Learned policy and the training loop

// Sees every encoder input built by a learned decider.
using GraphObserver = std::function<void(const GraphView&)>;

template <typename Scalar>
Decider learned_decider(const ParameterSet<Scalar>& params, TransferMode mode, Step horizon,
                        std::function<double()> epsilon, GraphObserver on_graph = {}) {
  return [&params, mode, horizon, epsilon = std::move(epsilon),
          on_graph = std::move(on_graph)](const MemoryState& m, Rng& rng) {
    Decision d;
    d.epsilon = epsilon ? epsilon() : 0.0;
    if (m.short_items.empty()) return d;
    const GraphView g = graph_for(m, mode, horizon);
    if (on_graph) on_graph(g);
    d.q = q_values(g, m.short_items, params, head_mode(mode)).template cast<double>();
    d.actions = select_actions(d.q, m.short_items.size(), head_mode(mode), d.epsilon, rng);
    return d;
  };
}

inline ModelShape model_shape_for(const RoomWorld& world, EncoderKind kind, int dim = 16,
                                  int layers = 2, int bases = 20, int hidden = 16) {
  return {kind,
          static_cast<int>(world.vocabulary().entities.size()),
          static_cast<int>(world.vocabulary().relations.size()),
          dim,
          layers,
          bases,
          hidden};
}

template <typename Scalar>
struct TrainResult {
  ParameterSet<Scalar> params;
  std::vector<MetricsRow> metrics;
  std::vector<double> episode_scores;
  std::vector<DecisionRecord> decisions;
  std::int64_t updates = 0;
};

struct TrainHooks {
  // Called after every optimizer update with the iteration index.
  std::function<void(std::int64_t)> after_update;
  bool record_decisions = true;
};

template <typename Scalar = float>
class Trainer {
 public:
  Trainer(TrainerConfig cfg, WorldConfig world, ModelShape shape, AgentPolicies policies,
          std::uint64_t seed)
      : cfg_(std::move(cfg)), world_cfg_(world), policies_(policies), seed_(seed),
        world_(world), shape_(shape),
        online_(ParameterSet<Scalar>::initialize(shape, seed)), target_(online_),
        replay_(cfg_.replay_capacity, cfg_.warm_start, cfg_.batch_size),
        optimizer_(cfg_, online_), sample_rng_(mix_seed(seed, 31)) {
    validate(cfg_);
    world_cfg_.query_split = QuerySplit::train;
    world_ = RoomWorld(world_cfg_);
  }

  const ParameterSet<Scalar>& online() const { return online_; }
  const ParameterSet<Scalar>& target() const { return target_; }
  const ReplayBuffer& replay() const { return replay_; }
  const RoomWorld& world() const { return world_; }

  TrainResult<Scalar> run(const TrainHooks& hooks = {}) {
    TrainResult<Scalar> result;
    EpisodeRunner runner(world_, policies_);
    std::int64_t iteration = 0;
    const TdContext ctx{cfg_.mode, cfg_.gamma, cfg_.double_dqn, world_cfg_.horizon};
    auto decide = learned_decider(online_, cfg_.mode, world_cfg_.horizon,
                                  [&iteration, this] { return epsilon_at(iteration, cfg_); });

    for (std::uint64_t episode = 0; iteration < cfg_.total_iterations; ++episode) {
      double score = 0.0;
      auto observe = [&](const StepRecord& rec) {
        score += rec.reward;
        if (hooks.record_decisions) append_decisions(rec, result.decisions);
        replay_.push({rec.state, rec.decision.actions, rec.reward, rec.next, rec.done});

        MetricsRow row;
        row.iteration = iteration;
        row.episode = episode;
        row.epsilon = rec.decision.epsilon;
        if (replay_.ready()) {
          row.loss = update(ctx);
          ++result.updates;
          if (hooks.after_update) hooks.after_update(iteration);
        }
        ++iteration;
        const bool last = rec.done || iteration >= cfg_.total_iterations;
        if (last) row.episode_score = score;
        result.metrics.push_back(row);
        return iteration < cfg_.total_iterations;
      };
      runner.run(episode, mix_seed(seed_, 1000 + episode), decide, observe);
      result.episode_scores.push_back(score);
    }
    result.params = online_;
    return result;
  }

 private:
  std::optional<double> update(const TdContext& ctx) {
    const auto batch = replay_.sample(sample_rng_);
    std::vector<TransitionTargets> targets;
    targets.reserve(batch.size());
    for (const Transition* tr : batch) {
      std::vector<std::size_t> order;
      if (cfg_.reshuffle_matching) {
        order.resize(tr->next->short_items.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        sample_rng_.shuffle(std::span<std::size_t>(order));
      }
      targets.push_back(td_targets(*tr, online_, target_, ctx, order));
    }
    auto grads = online_.zeros_like();
    auto loss = td_loss_and_gradients<Scalar>(batch, targets, online_, ctx, grads);
    if (loss) {
      clip_gradients(grads, cfg_.grad_clip_value);
      optimizer_.step(online_, grads);
    }
    ++updates_;
    if (updates_ % cfg_.target_update_interval == 0) target_ = online_;
    return loss;
  }

  TrainerConfig cfg_;
  WorldConfig world_cfg_;
  AgentPolicies policies_;
  std::uint64_t seed_;
  RoomWorld world_;
  ModelShape shape_;
  ParameterSet<Scalar> online_;
  ParameterSet<Scalar> target_;
  ReplayBuffer replay_;
  Optimizer<Scalar> optimizer_;
  Rng sample_rng_;
  std::int64_t updates_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

struct LearnedPolicy {
  ParameterSet<float> params;
  TransferMode mode = TransferMode::local_stm;
};

// A symbolic baseline or a learned policy (evaluated greedily).
struct TransferSource {
  std::variant<TransferBaseline, LearnedPolicy> policy;
};

struct SeedScores {
  std::uint64_t seed = 0;
  std::vector<double> episode_scores;
  double mean() const {
    if (episode_scores.empty()) return 0.0;
    return std::accumulate(episode_scores.begin(), episode_scores.end(), 0.0) /
           static_cast<double>(episode_scores.size());
  }
};

struct ScoreStats {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline ScoreStats population_stats(std::span<const double> xs) {
  ScoreStats s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

struct EvalResult {
  std::vector<SeedScores> per_seed;
  std::vector<DecisionRecord> decisions;
  ScoreStats stats() const {
    std::vector<double> means;
    for (const auto& s : per_seed) means.push_back(s.mean());
    return population_stats(means);
  }
};

// Greedy decider for a transfer source; `source` and `runner` must outlive it.
inline Decider greedy_decider(const TransferSource& source, const EpisodeRunner& runner,
                              Step horizon) {
  if (const auto* b = std::get_if<TransferBaseline>(&source.policy)) {
    return baseline_decider(*b, runner);
  }
  const auto& learned = std::get<LearnedPolicy>(source.policy);
  return learned_decider(learned.params, learned.mode, horizon, {});
}

inline std::uint64_t eval_episode_seed(std::uint64_t seed, std::uint64_t episode) {
  return mix_seed(seed, 500000 + episode);
}

// Greedy evaluation of one transfer source for one seed.
inline SeedScores evaluate_seed(const TransferSource& source, const WorldConfig& world_cfg,
                                const AgentPolicies& policies, std::uint64_t seed, int episodes,
                                std::vector<DecisionRecord>* decisions = nullptr,
                                const StepObserver& extra = {}) {
  RoomWorld world(world_cfg);
  EpisodeRunner runner(world, policies);
  SeedScores scores{seed, {}};
  const Decider decide = greedy_decider(source, runner, world_cfg.horizon);
  for (int e = 0; e < episodes; ++e) {
    auto observe = [&](const StepRecord& rec) {
      if (decisions) append_decisions(rec, *decisions);
      return extra ? extra(rec) : true;
    };
    const auto res = runner.run(static_cast<std::uint64_t>(e),
                                eval_episode_seed(seed, static_cast<std::uint64_t>(e)), decide,
                                observe);
    scores.episode_scores.push_back(res.score);
  }
  return scores;
}

}  // namespace kgmem
