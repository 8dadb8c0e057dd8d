#include <gtest/gtest.h>

#include <memory>
#include <set>
#include <vector>

#include "kgmem/transfer_rl.hpp"
#include "kgmem/verify/checks.hpp"

using namespace kgmem;
using verify::SyntheticWorld;
using A = TransferAction;

namespace {

std::shared_ptr<const MemoryState> state(const SyntheticWorld& w, std::size_t n, Step now, Rng& rng) {
  return std::make_shared<MemoryState>(verify::detail::tiny_state(w, n, now, rng));
}

ParameterSet<float> params(const SyntheticWorld& w, std::uint64_t seed = 1) {
  return ParameterSet<float>::initialize(verify::detail::synthetic_shape(w, EncoderKind::gcn), seed);
}

// Head that outputs `bias` for every input.
ParameterSet<float> constant_head(ParameterSet<float> p, float drop, float keep) {
  p.head_out_weight.setZero();
  p.head_out_bias << drop, keep;
  return p;
}

WorldConfig tiny_world() {
  WorldConfig c;
  c.grid_length = 3;
  c.num_static_objects = 2;
  c.num_moving_objects = 2;
  c.num_inner_walls = 3;
  c.horizon = 30;
  return c;
}

TrainerConfig tiny_trainer() {
  TrainerConfig t;
  t.total_iterations = 200;
  t.warm_start = 60;
  t.batch_size = 8;
  t.replay_capacity = 500;
  t.epsilon_decay_iters = 150;
  t.target_update_interval = 7;
  return t;
}

AgentPolicies tiny_policies() { return {QaPolicy::mru, EvictionPolicy::lru, 16}; }

}  // namespace

TEST(SelectActions, GreedyArgmaxPerRow) {
  Eigen::MatrixXd q(2, 2);
  q << 1, 3, 5, 2;
  Rng rng(0);
  EXPECT_EQ(select_actions(q, 2, HeadMode::local, 0.0, rng), (std::vector<A>{A::keep, A::drop}));
}

TEST(SelectActions, ArgmaxTieGoesToDrop) {
  Eigen::MatrixXd q(1, 2);
  q << 0.5, 0.5;
  Rng rng(0);
  EXPECT_EQ(select_actions(q, 1, HeadMode::local, 0.0, rng), std::vector<A>{A::drop});
}

TEST(SelectActions, FullyRandomKeepFraction) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(10000, 2);
  q.col(1).setConstant(1.0);
  Rng rng(17);
  const auto acts = select_actions(q, 10000, HeadMode::local, 1.0, rng);
  const double keeps = static_cast<double>(std::count(acts.begin(), acts.end(), A::keep));
  EXPECT_NEAR(keeps / 10000.0, 0.5, 0.02);
}

TEST(SelectActions, GlobalBroadcastsOneDecision) {
  Eigen::MatrixXd q(1, 2);
  q << 0.1, 0.9;
  Rng rng(0);
  EXPECT_EQ(select_actions(q, 4, HeadMode::global, 0.0, rng), std::vector<A>(4, A::keep));
  for (int i = 0; i < 200; ++i) {
    const auto acts = select_actions(q, 6, HeadMode::global, 1.0, rng);
    EXPECT_EQ(std::set<A>(acts.begin(), acts.end()).size(), 1u);
  }
  EXPECT_TRUE(select_actions(q, 0, HeadMode::global, 0.0, rng).empty());
}

TEST(SelectActions, RowCountMismatchIsUsageError) {
  Eigen::MatrixXd q(2, 2);
  q.setZero();
  Rng rng(0);
  EXPECT_THROW(select_actions(q, 3, HeadMode::local, 0.0, rng), UsageError);
}

TEST(EpsilonSchedule, EndpointsAndMidpoint) {
  EXPECT_EQ(epsilon_at(0), 1.0);
  EXPECT_EQ(epsilon_at(10000), 0.01);
  EXPECT_EQ(epsilon_at(25000), 0.01);
  EXPECT_NEAR(epsilon_at(5000), 0.505, 1e-12);
  for (int i = 1; i <= 12000; ++i) ASSERT_LE(epsilon_at(i), epsilon_at(i - 1));
}

TEST(Replay, NotReadyUntilPastWarmStartAndBounded) {
  SyntheticWorld w;
  Rng rng(1);
  ReplayBuffer buf(10, 4, 3);
  for (int i = 0; i < 4; ++i) {
    auto s = state(w, 2, 1, rng);
    buf.push({s, {A::keep, A::drop}, 0.0, s, false});
    EXPECT_FALSE(buf.ready());
    EXPECT_THROW(buf.sample(rng), UsageError);
  }
  for (int i = 0; i < 30; ++i) {
    auto s = state(w, 2, 1, rng);
    buf.push({s, {A::keep, A::drop}, static_cast<double>(i), s, false});
    EXPECT_TRUE(buf.ready());
    EXPECT_LE(buf.size(), 10u);
  }
  for (int k = 0; k < 50; ++k) {
    const auto batch = buf.sample(rng);
    EXPECT_EQ(batch.size(), 3u);
    EXPECT_EQ(std::set<const Transition*>(batch.begin(), batch.end()).size(), 3u);
    for (const auto* t : batch) EXPECT_GE(t->reward, 20.0);  // older entries were overwritten
  }
}

TEST(Replay, RejectsBadShapes) {
  EXPECT_THROW(ReplayBuffer(10, 2, 3), ConfigError);
  EXPECT_THROW(ReplayBuffer(10, 11, 3), ConfigError);
  SyntheticWorld w;
  Rng rng(1);
  ReplayBuffer buf(10, 4, 3);
  auto s = state(w, 2, 1, rng);
  EXPECT_THROW(buf.push({s, {A::keep}, 0.0, s, false}), UsageError);
}

TEST(TdTargets, TerminalTargetIsReward) {
  SyntheticWorld w;
  Rng rng(2);
  const auto p = params(w);
  const Transition tr{state(w, 3, 4, rng), {A::keep, A::drop, A::keep}, 1.0, state(w, 4, 5, rng), true};
  const auto t = td_targets(tr, p, p, {TransferMode::local_full, 0.95, true, 100});
  ASSERT_EQ(t.matched, 3u);
  for (double y : t.y) EXPECT_EQ(y, 1.0);
}

TEST(TdTargets, BootstrapArithmetic) {
  SyntheticWorld w;
  Rng rng(3);
  const auto online = constant_head(params(w), 0.0f, 2.0f);
  const Transition tr{state(w, 2, 4, rng), {A::keep, A::keep}, 0.0, state(w, 2, 5, rng), false};
  for (bool dd : {true, false}) {
    const auto t = td_targets(tr, online, online, {TransferMode::local_stm, 0.95, dd, 100});
    for (double y : t.y) EXPECT_NEAR(y, 1.9, 1e-12);
    for (double q : t.q) EXPECT_EQ(q, 2.0);
  }
}

TEST(TdTargets, MatchedPairsFollowMinCardinality) {
  SyntheticWorld w;
  Rng rng(4);
  const auto p = params(w);
  const Transition tr{state(w, 5, 4, rng), std::vector<A>(5, A::drop), 0.0, state(w, 3, 5, rng), false};
  const auto t = td_targets(tr, p, p, {TransferMode::local_stm, 0.95, true, 100});
  EXPECT_EQ(t.matched, 3u);
  EXPECT_EQ(t.y.size(), 3u);
  EXPECT_EQ(t.q.size(), 3u);
  const Transition empty{state(w, 0, 4, rng), {}, 1.0, state(w, 3, 5, rng), false};
  EXPECT_EQ(td_targets(empty, p, p, {}).matched, 0u);
}

TEST(TdTargets, DoubleEqualsMaxWhenNetworksCoincide) {
  SyntheticWorld w;
  for (auto mode : {TransferMode::local_full, TransferMode::local_stm, TransferMode::global_full,
                    TransferMode::global_stm}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      const auto p = params(w, seed);
      const Transition tr{state(w, 4, 4, rng), {A::keep, A::drop, A::drop, A::keep}, 0.5,
                          state(w, 6, 5, rng), false};
      const auto a = td_targets(tr, p, p, {mode, 0.95, true, 100});
      const auto b = td_targets(tr, p, p, {mode, 0.95, false, 100});
      EXPECT_EQ(a.y, b.y);
      EXPECT_EQ(a.q, b.q);
    }
  }
}

TEST(TdTargets, MatchesScalarRecomputation) {
  SyntheticWorld w;
  for (auto mode : {TransferMode::local_full, TransferMode::global_stm}) {
    Rng rng(8);
    const auto online = params(w, 1), target = params(w, 2);
    std::vector<Transition> batch{
        {state(w, 4, 4, rng), {A::keep, A::drop, A::keep, A::keep}, 1.0, state(w, 3, 5, rng), false},
        {state(w, 2, 6, rng), {A::drop, A::keep}, 0.0, state(w, 5, 7, rng), false}};
    std::vector<TransitionTargets> got;
    std::vector<verify::ScalarTargets> want;
    for (const auto& tr : batch) {
      got.push_back(td_targets(tr, online, target, {mode, 0.95, true, 100}));
      want.push_back(verify::scalar_targets(verify::detail::scalar_view(tr, online, target, mode),
                                            0.95, true, head_mode(mode) == HeadMode::global));
      EXPECT_EQ(got.back().y, want.back().y);
      EXPECT_EQ(got.back().q, want.back().q);
    }
    EXPECT_EQ(*td_loss(got), *verify::scalar_loss(want));
  }
}

TEST(TdLoss, ArithmeticExamples) {
  std::vector<TransitionTargets> zero{{1, {0.7}, {0.7}}};
  EXPECT_EQ(*td_loss(zero), 0.0);
  std::vector<TransitionTargets> two{{2, {0.0, 0.0}, {1.0, -1.0}}};
  EXPECT_EQ(*td_loss(two), 1.0);
  std::vector<TransitionTargets> mixed{{2, {0.0, 0.0}, {1.0, -1.0}}, {0, {}, {}}, {1, {1.0}, {4.0}}};
  EXPECT_EQ(*td_loss(mixed), 5.0);
  std::vector<TransitionTargets> none{{0, {}, {}}};
  EXPECT_FALSE(td_loss(none).has_value());
}

TEST(TdLoss, TapeLossMatchesTargetsLoss) {
  SyntheticWorld w;
  Rng rng(12);
  const auto online = params(w, 3), target = params(w, 4);
  const TdContext ctx{TransferMode::local_full, 0.95, true, 100};
  std::vector<Transition> store{
      {state(w, 3, 4, rng), {A::keep, A::drop, A::keep}, 1.0, state(w, 5, 5, rng), false},
      {state(w, 5, 6, rng), std::vector<A>(5, A::keep), 0.0, state(w, 2, 7, rng), true}};
  std::vector<const Transition*> batch{&store[0], &store[1]};
  std::vector<TransitionTargets> targets;
  for (const auto* tr : batch) targets.push_back(td_targets(*tr, online, target, ctx));
  auto grads = online.zeros_like();
  const auto loss = td_loss_and_gradients<float>(batch, targets, online, ctx, grads);
  ASSERT_TRUE(loss.has_value());
  EXPECT_NEAR(*loss, *td_loss(targets), 1e-5);
}

TEST(Optimizer, ClipBoundsEveryCoordinate) {
  SyntheticWorld w;
  auto g = params(w);
  g.for_each([](const std::string&, Eigen::MatrixXf& m) { m *= 1000.0f; });
  clip_gradients(g, 10.0);
  g.for_each([](const std::string&, const Eigen::MatrixXf& m) {
    if (m.size() == 0) return;
    EXPECT_LE(m.maxCoeff(), 10.0f);
    EXPECT_GE(m.minCoeff(), -10.0f);
  });
}

TEST(Optimizer, ZeroGradientLeavesParametersUnchanged) {
  SyntheticWorld w;
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    TrainerConfig cfg;
    cfg.optimizer = kind;
    auto p = params(w);
    const auto before = p;
    Optimizer<float> opt(cfg, p);
    for (int i = 0; i < 3; ++i) opt.step(p, p.zeros_like());
    std::vector<Eigen::MatrixXf> a, b;
    p.for_each([&](const std::string&, const Eigen::MatrixXf& m) { a.push_back(m); });
    before.for_each([&](const std::string&, const Eigen::MatrixXf& m) { b.push_back(m); });
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  }
}

TEST(Optimizer, SgdStepIsLearningRateTimesGradient) {
  SyntheticWorld w;
  TrainerConfig cfg;
  cfg.lr = 0.5;
  auto p = params(w);
  const auto before = p;
  auto g = p.zeros_like();
  g.head_out_bias << 1.0f, -2.0f;
  Optimizer<float>(cfg, p).step(p, g);
  EXPECT_FLOAT_EQ(p.head_out_bias(0, 0), before.head_out_bias(0, 0) - 0.5f);
  EXPECT_FLOAT_EQ(p.head_out_bias(0, 1), before.head_out_bias(0, 1) + 1.0f);
}

TEST(Trainer, NoParameterChangeDuringWarmStart) {
  auto cfg = tiny_trainer();
  cfg.total_iterations = static_cast<int>(cfg.warm_start);
  const auto wc = tiny_world();
  RoomWorld world(wc);
  const auto shape = model_shape_for(world, EncoderKind::gcn, 8, 2, 4, 8);
  Trainer<float> trainer(cfg, wc, shape, tiny_policies(), 5);
  const auto initial = ParameterSet<float>::initialize(shape, 5);
  const auto result = trainer.run();
  EXPECT_EQ(result.updates, 0);
  std::vector<Eigen::MatrixXf> a, b;
  result.params.for_each([&](const std::string&, const Eigen::MatrixXf& m) { a.push_back(m); });
  initial.for_each([&](const std::string&, const Eigen::MatrixXf& m) { b.push_back(m); });
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  for (const auto& row : result.metrics) EXPECT_FALSE(row.loss.has_value());
}

TEST(Trainer, TargetEqualsOnlineRightAfterSync) {
  const auto cfg = tiny_trainer();
  const auto wc = tiny_world();
  RoomWorld world(wc);
  Trainer<float> trainer(cfg, wc, model_shape_for(world, EncoderKind::rgcn, 8, 2, 4, 8),
                         tiny_policies(), 6);
  int updates = 0, syncs = 0, differing_between = 0;
  auto same = [&] {
    std::vector<Eigen::MatrixXf> a, b;
    trainer.online().for_each([&](const std::string&, const Eigen::MatrixXf& m) { a.push_back(m); });
    trainer.target().for_each([&](const std::string&, const Eigen::MatrixXf& m) { b.push_back(m); });
    return a == b;
  };
  TrainHooks hooks;
  hooks.after_update = [&](std::int64_t) {
    ++updates;
    if (updates % cfg.target_update_interval == 0) {
      ++syncs;
      EXPECT_TRUE(same()) << "update " << updates;
    } else if (!same()) {
      ++differing_between;
    }
  };
  const auto result = trainer.run(hooks);
  EXPECT_EQ(result.updates, updates);
  EXPECT_GT(syncs, 5);
  EXPECT_GT(differing_between, 0);
}

TEST(Trainer, OneIterationPerStepAndEpsilonFollowsSchedule) {
  const auto cfg = tiny_trainer();
  const auto wc = tiny_world();
  RoomWorld world(wc);
  Trainer<float> trainer(cfg, wc, model_shape_for(world, EncoderKind::gcn, 8, 2, 4, 8),
                         tiny_policies(), 7);
  const auto r = trainer.run();
  ASSERT_EQ(r.metrics.size(), static_cast<std::size_t>(cfg.total_iterations));
  for (std::size_t i = 0; i < r.metrics.size(); ++i) {
    EXPECT_EQ(r.metrics[i].iteration, static_cast<std::int64_t>(i));
    EXPECT_EQ(r.metrics[i].epsilon, epsilon_at(static_cast<std::int64_t>(i), cfg));
  }
  EXPECT_EQ(r.updates, cfg.total_iterations - static_cast<std::int64_t>(cfg.warm_start));
  EXPECT_LE(trainer.replay().size(), cfg.replay_capacity);
}

TEST(Trainer, SameSeedSameRun) {
  const auto cfg = tiny_trainer();
  const auto wc = tiny_world();
  RoomWorld world(wc);
  const auto shape = model_shape_for(world, EncoderKind::stare_lite, 8, 2, 4, 8);
  const auto a = Trainer<float>(cfg, wc, shape, tiny_policies(), 9).run();
  const auto b = Trainer<float>(cfg, wc, shape, tiny_policies(), 9).run();
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) EXPECT_EQ(a.metrics[i].loss, b.metrics[i].loss);
  EXPECT_EQ(a.episode_scores, b.episode_scores);
  ASSERT_EQ(a.decisions.size(), b.decisions.size());
  for (std::size_t i = 0; i < a.decisions.size(); ++i) {
    EXPECT_EQ(a.decisions[i].q_keep, b.decisions[i].q_keep);
    EXPECT_EQ(a.decisions[i].action, b.decisions[i].action);
  }
}

TEST(Evaluate, ForcedKeepLearnedPathEqualsAlwaysBaseline) {
  const auto wc = tiny_world();
  RoomWorld world(wc);
  auto p = ParameterSet<float>::initialize(model_shape_for(world, EncoderKind::gcn, 8, 2, 4, 8), 1);
  p = constant_head(p, 0.0f, 1.0f);
  const TransferSource learned{LearnedPolicy{p, TransferMode::local_full}};
  const TransferSource always{TransferBaseline{TransferBaseline::Kind::always, 0.5}};
  for (std::uint64_t seed : {0u, 5u}) {
    const auto a = evaluate_seed(learned, wc, tiny_policies(), seed, 5);
    const auto b = evaluate_seed(always, wc, tiny_policies(), seed, 5);
    EXPECT_EQ(a.episode_scores, b.episode_scores);
  }
}

TEST(Evaluate, GreedyEvaluationIsRepeatable) {
  const auto wc = tiny_world();
  RoomWorld world(wc);
  const auto p = ParameterSet<float>::initialize(model_shape_for(world, EncoderKind::rgcn, 8, 2, 4, 8), 3);
  const TransferSource src{LearnedPolicy{p, TransferMode::local_stm}};
  std::vector<DecisionRecord> d1, d2;
  const auto a = evaluate_seed(src, wc, tiny_policies(), 4, 3, &d1);
  const auto b = evaluate_seed(src, wc, tiny_policies(), 4, 3, &d2);
  EXPECT_EQ(a.episode_scores, b.episode_scores);
  ASSERT_EQ(d1.size(), d2.size());
  for (const auto& d : d1) EXPECT_EQ(d.epsilon, 0.0);
}

TEST(Evaluate, FiveSeedsGiveFiveScores) {
  const auto wc = tiny_world();
  const TransferSource src{TransferBaseline{TransferBaseline::Kind::random, 0.5}};
  EvalResult r;
  for (std::uint64_t seed : TrainerConfig{}.seeds) {
    r.per_seed.push_back(evaluate_seed(src, wc, tiny_policies(), seed, 2));
  }
  EXPECT_EQ(r.per_seed.size(), 5u);
  std::vector<double> means;
  for (const auto& s : r.per_seed) means.push_back(s.mean());
  const auto st = r.stats();
  EXPECT_DOUBLE_EQ(st.mean, std::accumulate(means.begin(), means.end(), 0.0) / 5.0);
  EXPECT_GE(st.std, 0.0);
}

TEST(PopulationStats, HandComputed) {
  const std::vector<double> xs{38, 40, 36, 42, 39};
  const auto s = population_stats(xs);
  EXPECT_DOUBLE_EQ(s.mean, 39.0);
  EXPECT_DOUBLE_EQ(s.std, 2.0);
  const std::vector<double> one{7.5};
  EXPECT_EQ(population_stats(one).std, 0.0);
}

TEST(TrainerConfig, ValidationNamesKey) {
  TrainerConfig c;
  c.gamma = 1.0;
  try {
    validate(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("trainer.gamma"), std::string::npos);
  }
  c = TrainerConfig{};
  c.warm_start = 8;
  EXPECT_THROW(validate(c), ConfigError);
}
