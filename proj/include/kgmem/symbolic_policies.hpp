#pragma once

// Fixed symbolic policies: question answering, BFS exploration over the
// remembered map, and the non-learned transfer baselines.

#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgmem/errors.hpp"
#include "kgmem/kg_core.hpp"
#include "kgmem/memory_store.hpp"
#include "kgmem/rng.hpp"

namespace kgmem {

enum class QaPolicy : std::uint8_t { mra, mru, mfu };

inline const char* to_string(QaPolicy p) {
  switch (p) {
    case QaPolicy::mra: return "mra";
    case QaPolicy::mru: return "mru";
    case QaPolicy::mfu: return "mfu";
  }
  return "?";
}

struct TransferBaseline {
  enum class Kind : std::uint8_t { always, novel_only, random };
  Kind kind = Kind::always;
  double p = 0.5;
};

inline std::int64_t ranking_key(const TemporalAnnotations& a, QaPolicy p) {
  switch (p) {
    case QaPolicy::mra: return a.time_added;
    case QaPolicy::mru: return a.last_accessed;
    case QaPolicy::mfu: return a.num_recalled;
  }
  return 0;
}

// A memory entry seen through short ∪ long. `order` is the insertion counter
// for long-term entries; short-term entries rank after every long-term entry.
struct MemoryRef {
  const MemoryItem* item = nullptr;
  MemorySource source = MemorySource::short_term;
  std::uint64_t order = 0;
  std::size_t short_index = 0;
};

inline std::vector<MemoryRef> memory_refs(const ShortTermBuffer& stm,
                                          const std::vector<StoredItem>& ltm_entries,
                                          std::uint64_t next_insertion) {
  std::vector<MemoryRef> refs;
  refs.reserve(stm.items.size() + ltm_entries.size());
  for (const auto& s : ltm_entries) refs.push_back({&s.item, MemorySource::long_term, s.insertion});
  for (std::size_t i = 0; i < stm.items.size(); ++i) {
    refs.push_back({&stm.items[i], MemorySource::short_term, next_insertion + i, i});
  }
  return refs;
}

struct QaResult {
  EntityId answer;
  std::optional<MemoryItem> recalled;  // annotations after the recall touch
  MemorySource source = MemorySource::short_term;
};

// Answers (head, relation, ?) with the tail of the top-ranked matching
// memory; ties go to larger time_added, then later insertion. The recalled
// entry is touched in place.
inline QaResult answer_query(ShortTermBuffer& stm, LongTermStore& ltm, const Query& query,
                             QaPolicy policy, Step now, EntityId unknown) {
  const auto entries = ltm.entries();
  const auto refs = memory_refs(stm, entries, ltm.next_insertion());
  const MemoryRef* best = nullptr;
  auto better = [policy](const MemoryRef& a, const MemoryRef& b) {
    const auto ka = ranking_key(a.item->annotations, policy);
    const auto kb = ranking_key(b.item->annotations, policy);
    if (ka != kb) return ka > kb;
    if (a.item->annotations.time_added != b.item->annotations.time_added) {
      return a.item->annotations.time_added > b.item->annotations.time_added;
    }
    return a.order > b.order;
  };
  for (const auto& ref : refs) {
    const auto& t = ref.item->triple;
    if (t.head != query.head || t.relation != query.relation) continue;
    if (best == nullptr || better(ref, *best)) best = &ref;
  }
  if (best == nullptr) return {unknown, std::nullopt, MemorySource::short_term};

  QaResult result{best->item->triple.tail, std::nullopt, best->source};
  if (best->source == MemorySource::long_term) {
    ltm.recall(best->item->triple, now);
    result.recalled = ltm.find(best->item->triple)->item;
  } else {
    auto& item = stm.items[best->short_index];
    touch_on_recall(item.annotations, now);
    result.recalled = item;
  }
  return result;
}

// Room adjacency remembered in memory after conflict resolution: for every
// (room, direction) the most recently accessed direction triple wins.
struct MemoryMap {
  // room -> per-direction target (wall entity when blocked); absent = unknown.
  std::map<EntityId, std::array<std::optional<EntityId>, 4>> links;
  // visited room -> most recent last_accessed of its agent-location memory
  std::map<EntityId, Step> visited;
};

inline MemoryMap build_memory_map(const ShortTermBuffer& stm, const LongTermStore& ltm,
                                  const Schema& schema) {
  const auto entries = ltm.entries();
  const auto refs = memory_refs(stm, entries, ltm.next_insertion());
  MemoryMap map;
  std::map<std::pair<EntityId, std::size_t>, const MemoryRef*> chosen;
  for (const auto& ref : refs) {
    const auto& t = ref.item->triple;
    if (t.head == schema.agent && t.relation == schema.at_location) {
      auto [it, fresh] = map.visited.emplace(t.tail, ref.item->annotations.last_accessed);
      if (!fresh && ref.item->annotations.last_accessed > it->second) {
        it->second = ref.item->annotations.last_accessed;
      }
      continue;
    }
    for (std::size_t d = 0; d < 4; ++d) {
      if (t.relation != schema.directions[d]) continue;
      auto& slot = chosen[{t.head, d}];
      const auto& a = ref.item->annotations;
      if (slot == nullptr || a.last_accessed > slot->item->annotations.last_accessed ||
          (a.last_accessed == slot->item->annotations.last_accessed &&
           (a.time_added > slot->item->annotations.time_added ||
            (a.time_added == slot->item->annotations.time_added && ref.order > slot->order)))) {
        slot = &ref;
      }
    }
  }
  for (const auto& [key, ref] : chosen) {
    map.links[key.first][key.second] = ref->item->triple.tail;
  }
  return map;
}

// Next move: first hop (in north, south, east, west order) of a shortest path
// to the nearest unvisited room; otherwise the least recently visited open
// neighbor; otherwise a random direction.
inline Move explore_action(const ShortTermBuffer& stm, const LongTermStore& ltm,
                           const Schema& schema, EntityId current_room, Rng& rng) {
  const MemoryMap map = build_memory_map(stm, ltm, schema);

  // Reverse adjacency over open passages.
  std::map<EntityId, std::vector<EntityId>> incoming;
  std::vector<EntityId> rooms;
  for (const auto& [room, dirs] : map.links) {
    rooms.push_back(room);
    for (const auto& target : dirs) {
      if (!target || *target == schema.wall) continue;
      incoming[*target].push_back(room);
      rooms.push_back(*target);
    }
  }

  // Multi-source BFS from every unvisited room (other than the current one).
  std::map<EntityId, int> dist;
  std::deque<EntityId> frontier;
  for (EntityId r : rooms) {
    if (r == current_room || map.visited.count(r) || dist.count(r)) continue;
    dist[r] = 0;
    frontier.push_back(r);
  }
  while (!frontier.empty()) {
    const EntityId r = frontier.front();
    frontier.pop_front();
    for (EntityId from : incoming[r]) {
      if (dist.count(from)) continue;
      dist[from] = dist[r] + 1;
      frontier.push_back(from);
    }
  }

  auto here = map.links.find(current_room);
  if (here != map.links.end()) {
    if (auto it = dist.find(current_room); it != dist.end()) {
      for (std::size_t d = 0; d < 4; ++d) {
        const auto& target = here->second[d];
        if (!target || *target == schema.wall) continue;
        auto td = dist.find(*target);
        if (td != dist.end() && td->second == it->second - 1) return kDirections[d];
      }
    }
    std::optional<std::size_t> pick;
    Step oldest = std::numeric_limits<Step>::max();
    for (std::size_t d = 0; d < 4; ++d) {
      const auto& target = here->second[d];
      if (!target || *target == schema.wall) continue;
      auto v = map.visited.find(*target);
      const Step seen = v == map.visited.end() ? std::numeric_limits<Step>::min() : v->second;
      if (!pick || seen < oldest) {
        pick = d;
        oldest = seen;
      }
    }
    if (pick) return kDirections[*pick];
  }
  return kDirections[rng.below(4)];
}

inline std::vector<TransferAction> baseline_transfer(const ShortTermBuffer& stm,
                                                     const LongTermStore& ltm,
                                                     const TransferBaseline& baseline, Rng& rng) {
  if (baseline.p < 0.0 || baseline.p > 1.0) throw ConfigError("random transfer p must be in [0,1]");
  std::vector<TransferAction> actions;
  actions.reserve(stm.items.size());
  for (const auto& item : stm.items) {
    bool keep = true;
    switch (baseline.kind) {
      case TransferBaseline::Kind::always: keep = true; break;
      case TransferBaseline::Kind::novel_only: keep = !ltm.contains(item.triple); break;
      case TransferBaseline::Kind::random: keep = rng.bernoulli(baseline.p); break;
    }
    actions.push_back(keep ? TransferAction::keep : TransferAction::drop);
  }
  return actions;
}

}  // namespace kgmem
