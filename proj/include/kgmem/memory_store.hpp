#pragma once

// Two-tier memory: a short-term buffer rebuilt every step from the
// observation, and a capacity-limited long-term store with one annotated
// entry per distinct triple.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kgmem/errors.hpp"
#include "kgmem/kg_core.hpp"
#include "kgmem/room_env.hpp"

namespace kgmem {

enum class EvictionPolicy : std::uint8_t { fifo, lru, lfu };
enum class TransferAction : std::uint8_t { drop = 0, keep = 1 };

inline const char* to_string(EvictionPolicy p) {
  switch (p) {
    case EvictionPolicy::fifo: return "fifo";
    case EvictionPolicy::lru: return "lru";
    case EvictionPolicy::lfu: return "lfu";
  }
  return "?";
}

struct ShortTermBuffer {
  std::vector<MemoryItem> items;
  Step step = 0;
};

inline ShortTermBuffer refresh_short_term(const Observation& obs, Step now) {
  ShortTermBuffer buf;
  buf.step = now;
  buf.items.reserve(obs.triples.size());
  for (const auto& t : obs.triples) buf.items.push_back({t, {now, now, 0}});
  return buf;
}

inline void touch_on_recall(TemporalAnnotations& ann, Step now) {
  ann.num_recalled += 1;
  if (now > ann.last_accessed) ann.last_accessed = now;
}

struct StoredItem {
  MemoryItem item;
  std::uint64_t insertion = 0;
};

class LongTermStore {
 public:
  explicit LongTermStore(std::size_t capacity = 128) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("long-term capacity must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return by_insertion_.size(); }
  bool empty() const { return by_insertion_.empty(); }
  std::uint64_t next_insertion() const { return next_insertion_; }

  bool contains(const Triple& t) const { return index_.count(t) != 0; }

  const StoredItem* find(const Triple& t) const {
    auto it = index_.find(t);
    if (it == index_.end()) return nullptr;
    return &by_insertion_.at(it->second);
  }

  // Entries in insertion order.
  std::vector<StoredItem> entries() const {
    std::vector<StoredItem> out;
    out.reserve(by_insertion_.size());
    for (const auto& [_, s] : by_insertion_) out.push_back(s);
    return out;
  }

  std::vector<MemoryItem> items() const {
    std::vector<MemoryItem> out;
    out.reserve(by_insertion_.size());
    for (const auto& [_, s] : by_insertion_) out.push_back(s.item);
    return out;
  }

  // Keeps `item`: refreshes last_accessed of an existing entry, otherwise
  // inserts and evicts one entry if the store overflows.
  std::optional<MemoryItem> keep(const MemoryItem& item, Step now, EvictionPolicy policy) {
    if (auto it = index_.find(item.triple); it != index_.end()) {
      update(it->second, [now](TemporalAnnotations& a) {
        if (now > a.last_accessed) a.last_accessed = now;
      });
      return std::nullopt;
    }
    const std::uint64_t id = next_insertion_++;
    by_insertion_.emplace(id, StoredItem{item, id});
    index_.emplace(item.triple, id);
    add_keys(item.annotations, id);
    if (size() > capacity_) return evict_one(policy);
    return std::nullopt;
  }

  // Removes the argmin of the policy key; ties go to the oldest insertion.
  MemoryItem evict_one(EvictionPolicy policy) {
    if (empty()) throw UsageError("evict_one on an empty store");
    std::uint64_t id = 0;
    switch (policy) {
      case EvictionPolicy::fifo: id = by_insertion_.begin()->first; break;
      case EvictionPolicy::lru: id = by_last_accessed_.begin()->second; break;
      case EvictionPolicy::lfu: id = by_recalled_.begin()->second; break;
    }
    auto node = by_insertion_.find(id);
    MemoryItem removed = node->second.item;
    remove_keys(removed.annotations, id);
    index_.erase(removed.triple);
    by_insertion_.erase(node);
    return removed;
  }

  // Records that the entry answered a query.
  void recall(const Triple& t, Step now) {
    auto it = index_.find(t);
    if (it == index_.end()) throw UsageError("recall of a triple not in long-term memory");
    update(it->second, [now](TemporalAnnotations& a) { touch_on_recall(a, now); });
  }

 private:
  template <class F>
  void update(std::uint64_t id, F&& f) {
    auto& stored = by_insertion_.at(id);
    remove_keys(stored.item.annotations, id);
    f(stored.item.annotations);
    add_keys(stored.item.annotations, id);
  }

  void add_keys(const TemporalAnnotations& a, std::uint64_t id) {
    by_last_accessed_.emplace(a.last_accessed, id);
    by_recalled_.emplace(a.num_recalled, id);
  }

  void remove_keys(const TemporalAnnotations& a, std::uint64_t id) {
    by_last_accessed_.erase({a.last_accessed, id});
    by_recalled_.erase({a.num_recalled, id});
  }

  std::size_t capacity_;
  std::uint64_t next_insertion_ = 0;
  std::map<std::uint64_t, StoredItem> by_insertion_;
  std::unordered_map<Triple, std::uint64_t, TripleHash> index_;
  std::set<std::pair<Step, std::uint64_t>> by_last_accessed_;
  std::set<std::pair<std::int64_t, std::uint64_t>> by_recalled_;
};

// Executes per-item transfer decisions in buffer order. Returns evicted items.
inline std::vector<MemoryItem> apply_transfer(const ShortTermBuffer& stm,
                                              std::span<const TransferAction> actions,
                                              LongTermStore& ltm, EvictionPolicy policy,
                                              Step now) {
  if (actions.size() != stm.items.size()) {
    throw UsageError("apply_transfer: " + std::to_string(actions.size()) + " actions for " +
                     std::to_string(stm.items.size()) + " short-term items");
  }
  std::vector<MemoryItem> evicted;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i] != TransferAction::keep) continue;
    if (auto gone = ltm.keep(stm.items[i], now, policy)) evicted.push_back(*gone);
  }
  return evicted;
}

inline nlohmann::json to_json(const Vocabulary& vocab, const StoredItem& s) {
  auto j = to_json(vocab, s.item);
  j["insertion"] = s.insertion;
  return j;
}

// One JSON object per line, insertion order.
inline std::string to_jsonl(const Vocabulary& vocab, const LongTermStore& store) {
  std::string out;
  for (const auto& s : store.entries()) {
    out += to_json(vocab, s).dump();
    out += '\n';
  }
  return out;
}

}  // namespace kgmem
