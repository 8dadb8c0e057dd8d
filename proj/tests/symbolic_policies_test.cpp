#include <gtest/gtest.h>

#include <vector>

#include "kgmem/symbolic_policies.hpp"
#include "kgmem/verify/oracles.hpp"

using namespace kgmem;
using verify::SyntheticWorld;

namespace {

struct Env {
  SyntheticWorld w{9, 4};
  const Schema& s = w.schema;
  EntityId room(int i) const { return w.rooms[static_cast<std::size_t>(i)]; }
  MemoryItem at(EntityId head, int r, TemporalAnnotations a) const {
    return {{head, s.at_location, room(r)}, a};
  }
  MemoryItem link(int from, int dir, EntityId to, Step la) const {
    return {{room(from), s.directions[static_cast<std::size_t>(dir)], to}, {la, la, 0}};
  }
};

constexpr int N = 0, S = 1, E = 2, W = 3;

}  // namespace

TEST(AnswerQuery, SingleCandidate) {
  Env e;
  const EntityId john = e.w.objects[0];
  ShortTermBuffer stm{{e.at(john, 0, {3, 3, 0})}, 3};
  LongTermStore ltm(4);
  const auto r = answer_query(stm, ltm, {john, e.s.at_location, e.room(0)}, QaPolicy::mru, 3,
                              e.s.unknown);
  EXPECT_EQ(r.answer, e.room(0));
  ASSERT_TRUE(r.recalled.has_value());
  EXPECT_EQ(r.recalled->annotations.num_recalled, 1);
  EXPECT_EQ(stm.items[0].annotations.num_recalled, 1);
}

TEST(AnswerQuery, MruPicksLatestAccess) {
  Env e;
  const EntityId john = e.w.objects[0];
  ShortTermBuffer stm{{}, 10};
  LongTermStore ltm(4);
  ltm.keep(e.at(john, 1, {1, 4, 0}), 4, EvictionPolicy::lru);
  ltm.keep(e.at(john, 2, {2, 8, 0}), 8, EvictionPolicy::lru);
  const auto r = answer_query(stm, ltm, {john, e.s.at_location, e.room(2)}, QaPolicy::mru, 10,
                              e.s.unknown);
  EXPECT_EQ(r.answer, e.room(2));
  EXPECT_EQ(r.source, MemorySource::long_term);
  const auto* stored = ltm.find({john, e.s.at_location, e.room(2)});
  EXPECT_EQ(stored->item.annotations, (TemporalAnnotations{2, 10, 1}));
}

TEST(AnswerQuery, NoCandidateAnswersUnknown) {
  Env e;
  ShortTermBuffer stm{{e.at(e.s.agent, 0, {1, 1, 0})}, 1};
  LongTermStore ltm(4);
  const auto r = answer_query(stm, ltm, {e.w.objects[1], e.s.at_location, e.room(0)},
                              QaPolicy::mfu, 1, e.s.unknown);
  EXPECT_EQ(r.answer, e.s.unknown);
  EXPECT_FALSE(r.recalled.has_value());
}

TEST(AnswerQuery, TiesPreferNewerThenShortTerm) {
  Env e;
  const EntityId john = e.w.objects[0];
  LongTermStore ltm(4);
  ltm.keep(e.at(john, 1, {5, 5, 0}), 5, EvictionPolicy::lru);
  ShortTermBuffer stm{{e.at(john, 2, {5, 5, 0})}, 5};
  const auto r = answer_query(stm, ltm, {john, e.s.at_location, e.room(2)}, QaPolicy::mru, 5,
                              e.s.unknown);
  EXPECT_EQ(r.answer, e.room(2));
  EXPECT_EQ(r.source, MemorySource::short_term);
}

TEST(AnswerQueryProperty, MatchesSortOracleOnRandomMemories) {
  SyntheticWorld w(9, 5);
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    for (QaPolicy p : {QaPolicy::mra, QaPolicy::mru, QaPolicy::mfu}) {
      Rng state_rng(static_cast<std::uint64_t>(trial));
      auto st = verify::random_memory_state(w, state_rng);
      const Query q{w.objects[rng.below(w.objects.size())], w.schema.at_location, w.rooms[0]};
      const auto entries = st.ltm.entries();
      const auto want = verify::oracle_answer(st.stm.items, entries, st.ltm.next_insertion(), q,
                                              p, w.schema.unknown);
      const auto got = answer_query(st.stm, st.ltm, q, p, st.stm.step, w.schema.unknown);
      EXPECT_EQ(got.answer, want.answer);
      if (want.found) {
        ASSERT_TRUE(got.recalled.has_value());
        EXPECT_EQ(got.recalled->triple, want.triple);
        EXPECT_EQ(got.source == MemorySource::long_term, want.from_long);
      }
    }
  }
}

TEST(ExploreAction, UnvisitedEastNeighbor) {
  Env e;
  ShortTermBuffer stm{{e.at(e.s.agent, 0, {1, 1, 0}), e.link(0, N, e.s.wall, 1),
                       e.link(0, W, e.s.wall, 1), e.link(0, S, e.s.wall, 1),
                       e.link(0, E, e.room(1), 1)},
                      1};
  LongTermStore ltm(8);
  Rng rng(0);
  EXPECT_EQ(explore_action(stm, ltm, e.s, e.room(0), rng), Move::east);
}

TEST(ExploreAction, FirstHopTowardsTwoHopTarget) {
  Env e;
  // 4 -north-> 1 -north-> 7 (unvisited); 4 -east-> 5 visited dead end.
  LongTermStore ltm(16);
  for (const auto& m : {e.at(e.s.agent, 1, {1, 1, 0}), e.at(e.s.agent, 5, {2, 2, 0}),
                        e.link(1, N, e.room(7), 1), e.link(1, S, e.room(4), 1),
                        e.link(5, W, e.room(4), 2), e.link(5, N, e.s.wall, 2)}) {
    ltm.keep(m, m.annotations.last_accessed, EvictionPolicy::lru);
  }
  ShortTermBuffer stm{{e.at(e.s.agent, 4, {3, 3, 0}), e.link(4, N, e.room(1), 3),
                       e.link(4, E, e.room(5), 3), e.link(4, S, e.s.wall, 3),
                       e.link(4, W, e.s.wall, 3)},
                      3};
  Rng rng(0), oracle_rng(0);
  const Move got = explore_action(stm, ltm, e.s, e.room(4), rng);
  EXPECT_EQ(got, Move::north);
  const auto entries = ltm.entries();
  EXPECT_EQ(got, verify::oracle_explore(stm.items, entries, ltm.next_insertion(), e.s, e.room(4),
                                        oracle_rng));
}

TEST(ExploreAction, ConflictsResolvedByRecency) {
  Env e;
  LongTermStore ltm(8);
  ltm.keep(e.link(0, E, e.s.wall, 1), 1, EvictionPolicy::lru);
  ShortTermBuffer stm{{e.link(0, E, e.room(1), 4), e.link(0, S, e.s.wall, 4)}, 4};
  const auto map = build_memory_map(stm, ltm, e.s);
  ASSERT_TRUE(map.links.at(e.room(0))[E].has_value());
  EXPECT_EQ(*map.links.at(e.room(0))[E], e.room(1));
}

TEST(ExploreAction, EmptyMemoryFallsBackToSeededRandom) {
  Env e;
  LongTermStore ltm(4);
  ShortTermBuffer stm{{}, 0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed);
    EXPECT_EQ(explore_action(stm, ltm, e.s, e.room(0), a), kDirections[b.below(4)]);
  }
}

TEST(ExploreActionProperty, MatchesAllPairsOracle) {
  SyntheticWorld w(9, 5);
  for (std::uint64_t trial = 0; trial < 1000; ++trial) {
    Rng state_rng(trial);
    auto st = verify::random_memory_state(w, state_rng);
    Rng a(trial + 1), b(trial + 1);
    const auto entries = st.ltm.entries();
    EXPECT_EQ(explore_action(st.stm, st.ltm, w.schema, st.current, a),
              verify::oracle_explore(st.stm.items, entries, st.ltm.next_insertion(), w.schema,
                                     st.current, b))
        << "trial " << trial;
  }
}

TEST(BaselineTransfer, AlwaysKeepsEverything) {
  Env e;
  ShortTermBuffer stm;
  for (int i = 0; i < 6; ++i) stm.items.push_back(e.at(e.s.agent, i, {0, 0, 0}));
  LongTermStore ltm(4);
  Rng rng(0);
  const auto acts = baseline_transfer(stm, ltm, {TransferBaseline::Kind::always, 0.5}, rng);
  EXPECT_EQ(acts, std::vector<TransferAction>(6, TransferAction::keep));
}

TEST(BaselineTransfer, NovelOnlyKeepsNovelIndices) {
  Env e;
  ShortTermBuffer stm;
  for (int i = 0; i < 5; ++i) stm.items.push_back(e.at(e.s.agent, i, {0, 0, 0}));
  LongTermStore ltm(8);
  ltm.keep(stm.items[1], 0, EvictionPolicy::lru);
  ltm.keep(stm.items[3], 0, EvictionPolicy::lru);
  Rng rng(0);
  const auto acts = baseline_transfer(stm, ltm, {TransferBaseline::Kind::novel_only, 0.5}, rng);
  using A = TransferAction;
  EXPECT_EQ(acts, (std::vector<A>{A::keep, A::drop, A::keep, A::drop, A::keep}));
}

TEST(BaselineTransfer, NovelOnlyEqualsAlwaysOnEmptyStore) {
  SyntheticWorld w;
  Rng rng(4);
  LongTermStore empty(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto st = verify::random_memory_state(w, rng);
    Rng r1(1), r2(1);
    EXPECT_EQ(baseline_transfer(st.stm, empty, {TransferBaseline::Kind::novel_only, 0.5}, r1),
              baseline_transfer(st.stm, empty, {TransferBaseline::Kind::always, 0.5}, r2));
  }
}

TEST(BaselineTransfer, RandomKeepFractionConcentrates) {
  Env e;
  ShortTermBuffer stm;
  for (int i = 0; i < 10000; ++i) stm.items.push_back(e.at(e.s.agent, i % 9, {0, 0, 0}));
  LongTermStore ltm(4);
  Rng rng(2024);
  const auto acts = baseline_transfer(stm, ltm, {TransferBaseline::Kind::random, 0.5}, rng);
  const double keeps = static_cast<double>(std::count(acts.begin(), acts.end(), TransferAction::keep));
  EXPECT_NEAR(keeps / 10000.0, 0.5, 0.02);
  EXPECT_THROW(baseline_transfer(stm, ltm, {TransferBaseline::Kind::random, 1.5}, rng), ConfigError);
}
