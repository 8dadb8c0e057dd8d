#pragma once

// Slow, independent reference implementations used only by the test and
// self-check suites. None of them call the code they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kgmem/autodiff.hpp"
#include "kgmem/kg_core.hpp"
#include "kgmem/memory_store.hpp"
#include "kgmem/neural_core.hpp"
#include "kgmem/rng.hpp"
#include "kgmem/room_env.hpp"
#include "kgmem/symbolic_policies.hpp"

namespace kgmem::verify {

// ---------------------------------------------------------------------------
// Long-term store as a flat list with linear-scan eviction.

class ShadowStore {
 public:
  struct Entry {
    MemoryItem item;
    std::uint64_t insertion = 0;
  };

  explicit ShadowStore(std::size_t capacity) : capacity_(capacity) {}

  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<MemoryItem> transfer(std::span<const MemoryItem> items,
                                   std::span<const TransferAction> actions, EvictionPolicy policy,
                                   Step now) {
    std::vector<MemoryItem> evicted;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (actions[i] != TransferAction::keep) continue;
      Entry* existing = nullptr;
      for (auto& e : entries_)
        if (e.item.triple == items[i].triple) existing = &e;
      if (existing != nullptr) {
        existing->item.annotations.last_accessed =
            std::max(existing->item.annotations.last_accessed, now);
        continue;
      }
      entries_.push_back({items[i], next_++});
      if (entries_.size() > capacity_) {
        const std::size_t victim = argmin_index(policy);
        evicted.push_back(entries_[victim].item);
        entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(victim));
      }
    }
    return evicted;
  }

  void recall(const Triple& t, Step now) {
    for (auto& e : entries_) {
      if (e.item.triple != t) continue;
      e.item.annotations.num_recalled += 1;
      e.item.annotations.last_accessed = std::max(e.item.annotations.last_accessed, now);
    }
  }

  // Exhaustive argmin of (policy key, insertion).
  std::size_t argmin_index(EvictionPolicy policy) const {
    auto key = [policy](const Entry& e) -> std::int64_t {
      switch (policy) {
        case EvictionPolicy::fifo: return static_cast<std::int64_t>(e.insertion);
        case EvictionPolicy::lru: return e.item.annotations.last_accessed;
        case EvictionPolicy::lfu: return e.item.annotations.num_recalled;
      }
      return 0;
    };
    std::size_t best = 0;
    for (std::size_t i = 1; i < entries_.size(); ++i) {
      const auto ki = key(entries_[i]);
      const auto kb = key(entries_[best]);
      if (ki < kb || (ki == kb && entries_[i].insertion < entries_[best].insertion)) best = i;
    }
    return best;
  }

 private:
  std::size_t capacity_;
  std::uint64_t next_ = 0;
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Question answering by sorting every candidate.

struct QaOracleResult {
  EntityId answer;
  bool from_long = false;
  Triple triple{};
  bool found = false;
};

inline QaOracleResult oracle_answer(std::span<const MemoryItem> short_items,
                                    std::span<const StoredItem> long_entries,
                                    std::uint64_t next_insertion, const Query& q, QaPolicy policy,
                                    EntityId unknown) {
  struct Candidate {
    std::int64_t key, time_added;
    std::uint64_t order;
    const MemoryItem* item;
    bool from_long;
  };
  auto key_of = [policy](const TemporalAnnotations& a) -> std::int64_t {
    if (policy == QaPolicy::mra) return a.time_added;
    if (policy == QaPolicy::mru) return a.last_accessed;
    return a.num_recalled;
  };
  std::vector<Candidate> cs;
  for (const auto& e : long_entries) {
    if (e.item.triple.head == q.head && e.item.triple.relation == q.relation) {
      cs.push_back({key_of(e.item.annotations), e.item.annotations.time_added, e.insertion,
                    &e.item, true});
    }
  }
  for (std::size_t i = 0; i < short_items.size(); ++i) {
    const auto& it = short_items[i];
    if (it.triple.head == q.head && it.triple.relation == q.relation) {
      cs.push_back({key_of(it.annotations), it.annotations.time_added, next_insertion + i, &it,
                    false});
    }
  }
  if (cs.empty()) return {unknown, false, {}, false};
  std::sort(cs.begin(), cs.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.key, a.time_added, a.order) > std::tie(b.key, b.time_added, b.order);
  });
  return {cs.front().item->triple.tail, cs.front().from_long, cs.front().item->triple, true};
}

// ---------------------------------------------------------------------------
// Exploration via all-pairs shortest paths over the remembered map.

inline Move oracle_explore(std::span<const MemoryItem> short_items,
                           std::span<const StoredItem> long_entries, std::uint64_t next_insertion,
                           const Schema& schema, EntityId current, Rng& rng) {
  struct Rank {
    Step la, ta;
    std::uint64_t order;
    EntityId tail;
  };
  std::map<std::pair<EntityId, int>, Rank> chosen;
  std::map<EntityId, Step> visited;
  auto consider = [&](const MemoryItem& m, std::uint64_t order) {
    const auto& t = m.triple;
    const auto& a = m.annotations;
    if (t.head == schema.agent && t.relation == schema.at_location) {
      auto it = visited.find(t.tail);
      if (it == visited.end() || a.last_accessed > it->second) visited[t.tail] = a.last_accessed;
      return;
    }
    for (int d = 0; d < 4; ++d) {
      if (t.relation != schema.directions[static_cast<std::size_t>(d)]) continue;
      Rank r{a.last_accessed, a.time_added, order, t.tail};
      auto it = chosen.find({t.head, d});
      if (it == chosen.end() || std::tie(r.la, r.ta, r.order) >
                                    std::tie(it->second.la, it->second.ta, it->second.order)) {
        chosen[{t.head, d}] = r;
      }
    }
  };
  for (const auto& e : long_entries) consider(e.item, e.insertion);
  for (std::size_t i = 0; i < short_items.size(); ++i) consider(short_items[i], next_insertion + i);

  std::vector<EntityId> rooms;
  for (const auto& [key, r] : chosen) {
    rooms.push_back(key.first);
    if (r.tail != schema.wall) rooms.push_back(r.tail);
  }
  std::sort(rooms.begin(), rooms.end());
  rooms.erase(std::unique(rooms.begin(), rooms.end()), rooms.end());
  const std::size_t n = rooms.size();
  auto idx = [&](EntityId e) {
    return static_cast<std::size_t>(std::lower_bound(rooms.begin(), rooms.end(), e) - rooms.begin());
  };
  constexpr int inf = std::numeric_limits<int>::max() / 4;
  std::vector<int> dist(n * n, inf);
  for (std::size_t i = 0; i < n; ++i) dist[i * n + i] = 0;
  for (const auto& [key, r] : chosen) {
    if (r.tail == schema.wall) continue;
    const std::size_t a = idx(key.first), b = idx(r.tail);
    if (a != b) dist[a * n + b] = std::min(dist[a * n + b], 1);
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        dist[i * n + j] = std::min(dist[i * n + j], dist[i * n + k] + dist[k * n + j]);

  auto to_goal = [&](EntityId from) {
    int best = inf;
    for (EntityId g : rooms) {
      if (g == current || visited.count(g)) continue;
      best = std::min(best, dist[idx(from) * n + idx(g)]);
    }
    return best;
  };

  bool has_links = false;
  for (int d = 0; d < 4; ++d) has_links = has_links || chosen.count({current, d});
  if (has_links) {
    int best = inf;
    int pick = -1;
    for (int d = 0; d < 4; ++d) {
      auto it = chosen.find({current, d});
      if (it == chosen.end() || it->second.tail == schema.wall) continue;
      const int g = to_goal(it->second.tail);
      if (g < best) {
        best = g;
        pick = d;
      }
    }
    if (pick >= 0) return kDirections[static_cast<std::size_t>(pick)];
    Step oldest = std::numeric_limits<Step>::max();
    for (int d = 0; d < 4; ++d) {
      auto it = chosen.find({current, d});
      if (it == chosen.end() || it->second.tail == schema.wall) continue;
      auto v = visited.find(it->second.tail);
      const Step seen = v == visited.end() ? std::numeric_limits<Step>::min() : v->second;
      if (pick < 0 || seen < oldest) {
        pick = d;
        oldest = seen;
      }
    }
    if (pick >= 0) return kDirections[static_cast<std::size_t>(pick)];
  }
  return kDirections[rng.below(4)];
}

// ---------------------------------------------------------------------------
// Random memory states over a small synthetic map.

struct SyntheticWorld {
  Vocabulary vocab;
  Schema schema;
  std::vector<EntityId> rooms;
  std::vector<EntityId> objects;

  explicit SyntheticWorld(int num_rooms = 9, int num_objects = 5) {
    schema = Schema::standard(vocab);
    for (int i = 0; i < num_rooms; ++i) rooms.push_back(vocab.entities.intern("r" + std::to_string(i)));
    for (int i = 0; i < num_objects; ++i) {
      objects.push_back(vocab.entities.intern("o" + std::to_string(i)));
    }
  }
};

struct RandomMemoryState {
  ShortTermBuffer stm;
  LongTermStore ltm{256};
  EntityId current;
};

// Small annotation ranges so ties in every ranking key are common.
inline MemoryItem random_item(const SyntheticWorld& w, Rng& rng, Step now) {
  MemoryItem m;
  const auto pick_room = [&] { return w.rooms[rng.below(w.rooms.size())]; };
  const std::uint64_t kind = rng.below(3);
  if (kind == 0) {
    m.triple = {w.schema.agent, w.schema.at_location, pick_room()};
  } else if (kind == 1) {
    m.triple = {w.objects[rng.below(w.objects.size())], w.schema.at_location, pick_room()};
  } else {
    const EntityId tail = rng.bernoulli(0.3) ? w.schema.wall : pick_room();
    m.triple = {pick_room(), w.schema.directions[rng.below(4)], tail};
  }
  const Step ta = static_cast<Step>(rng.below(static_cast<std::uint64_t>(now) + 1));
  m.annotations.time_added = ta;
  m.annotations.last_accessed = ta + static_cast<Step>(rng.below(static_cast<std::uint64_t>(now - ta) + 1));
  m.annotations.num_recalled = static_cast<std::int64_t>(rng.below(4));
  return m;
}

inline RandomMemoryState random_memory_state(const SyntheticWorld& w, Rng& rng) {
  RandomMemoryState s;
  const Step now = 5 + static_cast<Step>(rng.below(6));
  s.current = w.rooms[rng.below(w.rooms.size())];
  s.stm.step = now;
  s.stm.items.push_back({{w.schema.agent, w.schema.at_location, s.current}, {now, now, 0}});
  for (int d = 0; d < 4; ++d) {
    if (rng.bernoulli(0.2)) continue;
    const EntityId tail = rng.bernoulli(0.3) ? w.schema.wall : w.rooms[rng.below(w.rooms.size())];
    s.stm.items.push_back({{s.current, w.schema.directions[static_cast<std::size_t>(d)], tail},
                           {now, now, 0}});
  }
  const std::size_t extra = rng.below(4);
  for (std::size_t i = 0; i < extra; ++i) {
    auto m = random_item(w, rng, now);
    m.annotations = {now, now, 0};
    s.stm.items.push_back(m);
  }
  if (rng.bernoulli(0.1)) s.stm.items.clear();
  const std::size_t n_long = rng.below(25);
  for (std::size_t i = 0; i < n_long; ++i) {
    s.ltm.keep(random_item(w, rng, now), now, EvictionPolicy::fifo);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Gradients

// Central finite differences of f w.r.t. every coordinate of every tensor.
template <class F>
ParameterSet<double> finite_difference_gradients(ParameterSet<double> p, F&& f, double eps = 1e-5) {
  auto grads = p.zeros_like();
  std::vector<ParameterSet<double>::Matrix*> gs;
  grads.for_each([&](const std::string&, ParameterSet<double>::Matrix& m) { gs.push_back(&m); });
  std::size_t t = 0;
  p.for_each([&](const std::string&, ParameterSet<double>::Matrix& m) {
    auto& g = *gs[t++];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double orig = m.data()[i];
      m.data()[i] = orig + eps;
      const double up = f(p);
      m.data()[i] = orig - eps;
      const double down = f(p);
      m.data()[i] = orig;
      g.data()[i] = (up - down) / (2.0 * eps);
    }
  });
  return grads;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline double max_relative_error(const ParameterSet<double>& a, const ParameterSet<double>& b) {
  std::vector<const ParameterSet<double>::Matrix*> bs;
  b.for_each([&](const std::string&, const ParameterSet<double>::Matrix& m) { bs.push_back(&m); });
  double worst = 0.0;
  std::size_t t = 0;
  a.for_each([&](const std::string&, const ParameterSet<double>::Matrix& m) {
    const auto& o = *bs[t++];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      worst = std::max(worst, relative_error(m.data()[i], o.data()[i]));
    }
  });
  return worst;
}

// ---------------------------------------------------------------------------
// TD loss written out with plain loops from Q tables.

struct ScalarTransition {
  Eigen::MatrixXd q_now;          // rows follow the head mode
  Eigen::MatrixXd q_next_online;
  Eigen::MatrixXd q_next_target;
  std::vector<int> actions;
  std::size_t n_next = 0;
  double reward = 0.0;
  bool done = false;
};

struct ScalarTargets {
  std::vector<double> y, q;
};

inline ScalarTargets scalar_targets(const ScalarTransition& t, double gamma, bool double_dqn,
                                    bool global) {
  ScalarTargets out;
  const std::size_t l = std::min(t.actions.size(), t.n_next);
  for (std::size_t j = 0; j < l; ++j) {
    const Eigen::Index r = global ? 0 : static_cast<Eigen::Index>(j);
    double next = 0.0;
    if (!t.done) {
      if (double_dqn) {
        const int a = t.q_next_online(r, 1) > t.q_next_online(r, 0) ? 1 : 0;
        next = t.q_next_target(r, a);
      } else {
        next = std::max(t.q_next_target(r, 0), t.q_next_target(r, 1));
      }
    }
    out.y.push_back(t.done ? t.reward : t.reward + gamma * next);
    out.q.push_back(t.q_now(r, t.actions[j]));
  }
  return out;
}

inline std::optional<double> scalar_loss(std::span<const ScalarTargets> batch) {
  double sum = 0.0;
  int used = 0;
  for (const auto& t : batch) {
    if (t.y.empty()) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < t.y.size(); ++j) s += std::pow(t.q[j] - t.y[j], 2);
    sum += s / static_cast<double>(t.y.size());
    ++used;
  }
  if (used == 0) return std::nullopt;
  return sum / used;
}

}  // namespace kgmem::verify
