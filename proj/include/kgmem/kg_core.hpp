#pragma once

// Symbolic vocabulary, triples with temporal annotations, and the graph view
// handed to the encoders.

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kgmem/errors.hpp"

namespace kgmem {

using Step = std::int64_t;

struct EntityId {
  std::uint32_t value = 0;
  friend auto operator<=>(const EntityId&, const EntityId&) = default;
};

struct RelationId {
  std::uint32_t value = 0;
  friend auto operator<=>(const RelationId&, const RelationId&) = default;
};

// Bijective label <-> dense id map. Single writer during setup.
template <class Id>
class Interner {
 public:
  Id intern(std::string_view label) {
    if (label.empty()) throw UsageError("cannot intern an empty label");
    auto it = ids_.find(std::string(label));
    if (it != ids_.end()) return it->second;
    Id id{static_cast<std::uint32_t>(labels_.size())};
    labels_.emplace_back(label);
    ids_.emplace(labels_.back(), id);
    return id;
  }

  std::optional<Id> find(std::string_view label) const {
    auto it = ids_.find(std::string(label));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  Id at(std::string_view label) const {
    auto id = find(label);
    if (!id) throw VocabularyError("unknown label '" + std::string(label) + "'");
    return *id;
  }

  const std::string& label(Id id) const {
    if (id.value >= labels_.size()) {
      throw VocabularyError("id " + std::to_string(id.value) + " out of range");
    }
    return labels_[id.value];
  }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, Id> ids_;
};

struct Vocabulary {
  Interner<EntityId> entities;
  Interner<RelationId> relations;
};

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    std::uint64_t h = t.head.value;
    h = h * 1000003u ^ t.relation.value;
    h = h * 1000003u ^ t.tail.value;
    return std::hash<std::uint64_t>{}(h);
  }
};

struct TemporalAnnotations {
  Step time_added = 0;
  Step last_accessed = 0;
  std::int64_t num_recalled = 0;
  friend bool operator==(const TemporalAnnotations&, const TemporalAnnotations&) = default;
};

struct MemoryItem {
  Triple triple;
  TemporalAnnotations annotations;
  friend bool operator==(const MemoryItem&, const MemoryItem&) = default;
};

// Fixed labels shared by the world, the policies, and the encoders.
struct Schema {
  EntityId agent;
  EntityId wall;
  EntityId unknown;
  RelationId at_location;
  std::array<RelationId, 4> directions;  // north, south, east, west

  static Schema standard(Vocabulary& vocab) {
    Schema s;
    s.agent = vocab.entities.intern("agent");
    s.wall = vocab.entities.intern("wall");
    s.unknown = vocab.entities.intern("unknown");
    s.at_location = vocab.relations.intern("at_location");
    s.directions = {vocab.relations.intern("north"), vocab.relations.intern("south"),
                    vocab.relations.intern("east"), vocab.relations.intern("west")};
    return s;
  }

  bool is_direction(RelationId r) const {
    return std::find(directions.begin(), directions.end(), r) != directions.end();
  }
};

// ---------------------------------------------------------------------------
// Graph view

enum class MemorySource : std::uint8_t { short_term, long_term };
enum class GraphMode { stm_only, full };

// Recall counts are capped at this value before normalization.
inline constexpr std::int64_t kRecallCap = 10;

using AnnotationFeatures = std::array<double, 3>;

// (age, recency, recall) normalized by the episode horizon and the recall cap.
inline AnnotationFeatures annotation_features(const TemporalAnnotations& ann, Step now,
                                              Step horizon) {
  const double h = static_cast<double>(horizon);
  return {static_cast<double>(now - ann.time_added) / h,
          static_cast<double>(now - ann.last_accessed) / h,
          static_cast<double>(std::min(ann.num_recalled, kRecallCap)) /
              static_cast<double>(kRecallCap)};
}

struct GraphEdge {
  EntityId head;
  RelationId relation;
  EntityId tail;
  AnnotationFeatures features{};
  MemorySource source = MemorySource::short_term;
};

struct GraphView {
  std::vector<EntityId> nodes;  // sorted by id
  std::vector<GraphEdge> edges;

  // Local row of an entity in `nodes`, or -1.
  int node_index(EntityId e) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), e);
    if (it == nodes.end() || *it != e) return -1;
    return static_cast<int>(it - nodes.begin());
  }

  std::size_t count(MemorySource src) const {
    return static_cast<std::size_t>(std::count_if(
        edges.begin(), edges.end(), [src](const GraphEdge& e) { return e.source == src; }));
  }
};

inline GraphView build_graph_view(std::span<const MemoryItem> short_items,
                                  std::span<const MemoryItem> long_items, GraphMode mode,
                                  Step now, Step horizon) {
  GraphView view;
  auto add = [&](const MemoryItem& item, MemorySource src) {
    view.edges.push_back({item.triple.head, item.triple.relation, item.triple.tail,
                          annotation_features(item.annotations, now, horizon), src});
    view.nodes.push_back(item.triple.head);
    view.nodes.push_back(item.triple.tail);
  };
  for (const auto& item : short_items) add(item, MemorySource::short_term);
  if (mode == GraphMode::full) {
    for (const auto& item : long_items) add(item, MemorySource::long_term);
  }
  std::sort(view.nodes.begin(), view.nodes.end());
  view.nodes.erase(std::unique(view.nodes.begin(), view.nodes.end()), view.nodes.end());
  return view;
}

// ---------------------------------------------------------------------------
// JSON form: {"h": label, "r": label, "t": label, "ann": {...}}

inline nlohmann::json triple_to_json(const Vocabulary& vocab, const Triple& t) {
  return {{"h", vocab.entities.label(t.head)},
          {"r", vocab.relations.label(t.relation)},
          {"t", vocab.entities.label(t.tail)}};
}

inline nlohmann::json to_json(const Vocabulary& vocab, const MemoryItem& item) {
  auto j = triple_to_json(vocab, item.triple);
  j["ann"] = {{"time_added", item.annotations.time_added},
              {"last_accessed", item.annotations.last_accessed},
              {"num_recalled", item.annotations.num_recalled}};
  return j;
}

inline Triple triple_from_json(const Vocabulary& vocab, const nlohmann::json& j) {
  try {
    return {vocab.entities.at(j.at("h").get<std::string>()),
            vocab.relations.at(j.at("r").get<std::string>()),
            vocab.entities.at(j.at("t").get<std::string>())};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed triple: ") + e.what());
  }
}

inline MemoryItem item_from_json(const Vocabulary& vocab, const nlohmann::json& j) {
  MemoryItem item{triple_from_json(vocab, j), {}};
  if (j.contains("ann")) {
    try {
      const auto& a = j.at("ann");
      item.annotations.time_added = a.at("time_added").get<Step>();
      item.annotations.last_accessed = a.at("last_accessed").get<Step>();
      item.annotations.num_recalled = a.at("num_recalled").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed annotations: ") + e.what());
    }
  }
  return item;
}

}  // namespace kgmem
