#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "kgmem/neural_core.hpp"
#include "kgmem/verify/checks.hpp"

using namespace kgmem;
using verify::SyntheticWorld;
using Mat = Eigen::MatrixXd;

namespace {

constexpr EncoderKind kKinds[] = {EncoderKind::gcn, EncoderKind::rgcn, EncoderKind::stare_lite};

struct Bench {
  SyntheticWorld w{4, 3};
  std::vector<MemoryItem> short_items;
  std::vector<MemoryItem> long_items;

  Bench() {
    const auto& s = w.schema;
    short_items = {{{s.agent, s.at_location, w.rooms[0]}, {5, 5, 0}},
                   {{w.rooms[0], s.directions[2], w.rooms[1]}, {5, 5, 0}},
                   {{w.rooms[0], s.directions[0], s.wall}, {5, 5, 0}},
                   {{w.objects[0], s.at_location, w.rooms[0]}, {5, 5, 0}}};
    long_items = {{{w.objects[1], s.at_location, w.rooms[2]}, {1, 3, 2}},
                  {{w.rooms[1], s.directions[1], w.rooms[3]}, {2, 2, 0}}};
  }

  GraphView graph() const {
    return build_graph_view(short_items, long_items, GraphMode::full, 5, 100);
  }

  ParameterSet<double> params(EncoderKind kind, int layers = 2, std::uint64_t seed = 1) const {
    return ParameterSet<double>::initialize(
        {kind, static_cast<int>(w.vocab.entities.size()),
         static_cast<int>(w.vocab.relations.size()), 6, layers, 3, 5},
        seed);
  }
};

Mat encode_nodes(const GraphView& g, const ParameterSet<double>& p) {
  Tape<double> tape;
  return tape.value(encode(tape, g, p).nodes);
}

}  // namespace

TEST(Encode, ZeroLayersReturnsEmbeddings) {
  Bench s;
  for (auto kind : kKinds) {
    const auto p = s.params(kind, 0);
    const auto g = s.graph();
    const Mat h = encode_nodes(g, p);
    ASSERT_EQ(h.rows(), static_cast<Eigen::Index>(g.nodes.size()));
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      EXPECT_EQ(h.row(static_cast<Eigen::Index>(i)),
                p.entity_embeddings.row(static_cast<Eigen::Index>(g.nodes[i].value)));
    }
  }
}

TEST(Encode, SingleNodeUsesOnlySelfPath) {
  Bench s;
  GraphView g;
  g.nodes = {s.w.rooms[2]};
  for (auto kind : kKinds) {
    auto p = s.params(kind, 1);
    p.layers[0].node_bias.setConstant(0.05);
    const Mat h = encode_nodes(g, p);
    const Mat expected =
        (p.entity_embeddings.row(s.w.rooms[2].value) * p.layers[0].node_weight +
         p.layers[0].node_bias)
            .cwiseMax(0.0);
    EXPECT_TRUE(h.isApprox(expected, 1e-14)) << to_string(kind);
  }
}

TEST(Encode, OutputShapeIsNodesByDim) {
  Bench s;
  for (auto kind : kKinds) {
    const Mat h = encode_nodes(s.graph(), s.params(kind));
    EXPECT_EQ(h.rows(), static_cast<Eigen::Index>(s.graph().nodes.size()));
    EXPECT_EQ(h.cols(), 6);
  }
}

TEST(Encode, EdgeOrderDoesNotMatter) {
  Bench s;
  Rng rng(3);
  for (auto kind : kKinds) {
    const auto p = s.params(kind);
    auto g = s.graph();
    const Mat base = encode_nodes(g, p);
    for (int k = 0; k < 5; ++k) {
      rng.shuffle(std::span<GraphEdge>(g.edges));
      EXPECT_LE((encode_nodes(g, p) - base).cwiseAbs().maxCoeff(), 1e-9) << to_string(kind);
    }
  }
}

TEST(Encode, UnknownIdsAreVocabularyErrors) {
  Bench s;
  const auto p = s.params(EncoderKind::gcn);
  auto g = s.graph();
  g.nodes.push_back(EntityId{999});
  EXPECT_THROW(encode_nodes(g, p), VocabularyError);
  g = s.graph();
  g.edges[0].relation = RelationId{999};
  EXPECT_THROW(encode_nodes(g, p), VocabularyError);
}

TEST(QValues, LocalShapeAndEmptyInput) {
  Bench s;
  for (auto kind : kKinds) {
    const auto p = s.params(kind);
    const auto q = q_values_local(s.graph(), s.short_items, p);
    EXPECT_EQ(q.rows(), 4);
    EXPECT_EQ(q.cols(), 2);
    const auto empty = q_values_local(s.graph(), std::span<const MemoryItem>{}, p);
    EXPECT_EQ(empty.rows(), 0);
    EXPECT_EQ(empty.cols(), 2);
  }
}

TEST(QValues, DuplicateItemsGiveIdenticalRows) {
  Bench s;
  auto items = s.short_items;
  items.push_back(items[1]);
  const auto q = q_values_local(s.graph(), items, s.params(EncoderKind::rgcn));
  EXPECT_EQ(q.row(1), q.row(4));
}

TEST(QValues, MissingEndpointIsUsageError) {
  Bench s;
  std::vector<MemoryItem> stray{{{s.w.objects[2], s.w.schema.at_location, s.w.rooms[3]}, {}}};
  const auto g = build_graph_view(s.short_items, {}, GraphMode::stm_only, 5, 100);
  EXPECT_THROW(q_values_local(g, stray, s.params(EncoderKind::gcn)), UsageError);
}

TEST(QValues, GlobalPoolingContracts) {
  Bench s;
  for (auto kind : kKinds) {
    const auto p = s.params(kind);
    const auto g = s.graph();
    const std::vector<MemoryItem> one{s.short_items[2]};
    EXPECT_TRUE(q_values_global(g, one, p).isApprox(q_values_local(g, one, p), 1e-14));

    const std::vector<MemoryItem> same(3, s.short_items[1]);
    const auto local = q_values_local(g, same, p);
    EXPECT_TRUE(q_values_global(g, same, p).isApprox(local.row(2), 1e-14));

    auto reversed = s.short_items;
    std::reverse(reversed.begin(), reversed.end());
    EXPECT_LE((q_values_global(g, reversed, p) - q_values_global(g, s.short_items, p))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12);
    EXPECT_EQ(q_values_global(g, s.short_items, p).rows(), 1);
    EXPECT_THROW(q_values_global(g, std::span<const MemoryItem>{}, p), UsageError);
  }
}

TEST(QValues, DeterministicAcrossCalls) {
  Bench s;
  const auto p = s.params(EncoderKind::stare_lite);
  EXPECT_EQ(q_values_local(s.graph(), s.short_items, p), q_values_local(s.graph(), s.short_items, p));
}

TEST(QValues, EntityRelabelingPermutesConsistently) {
  Bench s;
  for (auto kind : kKinds) {
    auto p = s.params(kind);
    // Swap the ids of rooms[0] and rooms[3] together with their embedding rows.
    const EntityId a = s.w.rooms[0], b = s.w.rooms[3];
    auto swap_id = [&](EntityId e) { return e == a ? b : e == b ? a : e; };
    auto relabel = [&](std::vector<MemoryItem> items) {
      for (auto& m : items) {
        m.triple.head = swap_id(m.triple.head);
        m.triple.tail = swap_id(m.triple.tail);
      }
      return items;
    };
    auto p2 = p;
    p2.entity_embeddings.row(a.value).swap(p2.entity_embeddings.row(b.value));
    const auto s2 = relabel(s.short_items), l2 = relabel(s.long_items);
    const auto g2 = build_graph_view(s2, l2, GraphMode::full, 5, 100);
    EXPECT_LE((q_values_local(s.graph(), s.short_items, p) - q_values_local(g2, s2, p2))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12)
        << to_string(kind);
  }
}

TEST(Backward, ZeroLossGivesZeroGradients) {
  Bench s;
  for (auto kind : kKinds) {
    const auto p = s.params(kind);
    const auto g = s.graph();
    const auto q = q_values_local(g, s.short_items, p);
    Tape<double> tape;
    auto grads = p.zeros_like();
    const auto out = forward_q(tape, g, s.short_items, p, HeadMode::local, &grads);
    std::vector<Tape<double>::SquaredTerm> terms;
    for (Eigen::Index i = 0; i < q.rows(); ++i) terms.push_back({i, 1, q(i, 1), 1.0});
    const auto loss = tape.squared_error(out, terms);
    EXPECT_EQ(tape.value(loss)(0, 0), 0.0);
    tape.backward(loss);
    grads.for_each([](const std::string& name, const Mat& m) {
      if (m.size() > 0) EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0) << name;
    });
  }
}

TEST(Backward, UnusedEmbeddingRowsGetNoGradient) {
  Bench s;
  for (auto kind : kKinds) {
    const auto p = s.params(kind);
    const auto g = build_graph_view(s.short_items, {}, GraphMode::stm_only, 5, 100);
    Tape<double> tape;
    auto grads = p.zeros_like();
    const auto out = forward_q(tape, g, s.short_items, p, HeadMode::local, &grads);
    const auto loss = tape.squared_error(out, {{0, 0, 3.0, 1.0}, {1, 1, -2.0, 1.0}});
    tape.backward(loss);
    for (EntityId e : {s.w.rooms[2], s.w.rooms[3], s.w.objects[1], s.w.objects[2]}) {
      EXPECT_EQ(grads.entity_embeddings.row(e.value).cwiseAbs().maxCoeff(), 0.0);
    }
    EXPECT_GT(grads.entity_embeddings.row(s.w.rooms[0].value).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Backward, MatchesCentralFiniteDifferences) {
  for (auto kind : kKinds) {
    for (auto head : {HeadMode::local, HeadMode::global}) {
      for (std::uint64_t seed = 11; seed < 14; ++seed) {
        EXPECT_LT(verify::gradient_check_error(kind, head, seed), 1e-4)
            << to_string(kind) << (head == HeadMode::local ? " local" : " global");
      }
    }
  }
}

TEST(ParameterSet, CountMatchesTensorSizes) {
  Bench s;
  const auto p = s.params(EncoderKind::rgcn);
  const int V = static_cast<int>(s.w.vocab.entities.size());
  const int R = static_cast<int>(s.w.vocab.relations.size());
  const int d = 6, bases = 3, hidden = 5;
  const int per_layer = d * d + d + d * d + d + 2 * R * bases + bases * d * d;
  const int expected = V * d + R * d + 2 * per_layer + 2 * d * hidden + hidden + hidden * 2 + 2;
  EXPECT_EQ(p.parameter_count(), static_cast<std::size_t>(expected));
}

TEST(Checkpoint, RoundTripAndMismatchRejection) {
  Bench s;
  const auto p = s.params(EncoderKind::stare_lite).cast<float>();
  const auto j = nlohmann::json::parse(checkpoint_to_json(p, s.w.vocab, 4).dump());
  const auto back = checkpoint_from_json<float>(j, s.w.vocab, p.shape);
  std::vector<Eigen::MatrixXf> a, b;
  p.for_each([&](const std::string&, const Eigen::MatrixXf& m) { a.push_back(m); });
  back.for_each([&](const std::string&, const Eigen::MatrixXf& m) { b.push_back(m); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);

  auto other = p.shape;
  other.dim = 8;
  EXPECT_THROW(checkpoint_from_json<float>(j, s.w.vocab, other), FormatError);

  SyntheticWorld bigger(5, 3);
  auto shape = p.shape;
  shape.num_entities = static_cast<int>(bigger.vocab.entities.size());
  EXPECT_THROW(checkpoint_from_json<float>(j, bigger.vocab, shape), VocabularyError);

  auto broken = j;
  broken["tensors"]["head_out_bias"]["data"] = std::vector<double>{1.0};
  EXPECT_THROW(checkpoint_from_json<float>(broken, s.w.vocab, p.shape), FormatError);
  broken = j;
  broken["version"] = 99;
  EXPECT_THROW(checkpoint_from_json<float>(broken, s.w.vocab, p.shape), FormatError);
}
