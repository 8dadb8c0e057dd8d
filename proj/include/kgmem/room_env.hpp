#pragma once

// Partially observable room-grid world. The hidden state (agent room, object
// rooms, wall states) is never exposed to the agent; each step it receives the
// induced triple subgraph around its current room plus one pending query.

#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgmem/errors.hpp"
#include "kgmem/kg_core.hpp"
#include "kgmem/rng.hpp"

namespace kgmem {

enum class Move : std::uint8_t { north = 0, south = 1, east = 2, west = 3, stay = 4 };
enum class QuerySplit : std::uint8_t { train, test };

inline constexpr std::array<Move, 4> kDirections = {Move::north, Move::south, Move::east,
                                                    Move::west};

inline const char* to_string(Move m) {
  switch (m) {
    case Move::north: return "north";
    case Move::south: return "south";
    case Move::east: return "east";
    case Move::west: return "west";
    case Move::stay: return "stay";
  }
  return "?";
}

inline const char* to_string(QuerySplit s) { return s == QuerySplit::train ? "train" : "test"; }

struct WorldConfig {
  int grid_length = 7;
  int num_static_objects = 18;
  int num_moving_objects = 18;
  int num_inner_walls = 36;
  int horizon = 100;
  std::uint64_t world_seed = 0;
  QuerySplit query_split = QuerySplit::train;
  // Placement/walk slot limit per room; bounds the observation size.
  int max_objects_per_room = 4;

  int num_rooms() const { return grid_length * grid_length; }
  int num_objects() const { return num_static_objects + num_moving_objects; }
  int num_interior_edges() const { return 2 * grid_length * (grid_length - 1); }
  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

inline void validate(const WorldConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("world." + key + ": " + why);
  };
  if (c.grid_length < 2) fail("grid_length", "must be >= 2");
  if (c.num_static_objects < 0) fail("num_static_objects", "must be >= 0");
  if (c.num_moving_objects < 0) fail("num_moving_objects", "must be >= 0");
  if (c.num_objects() < 1) fail("num_static_objects", "at least one object is needed for queries");
  if (c.max_objects_per_room < 1) fail("max_objects_per_room", "must be >= 1");
  if (c.num_objects() > c.num_rooms() * c.max_objects_per_room) {
    fail("num_moving_objects", "more objects than room slots");
  }
  if (c.num_inner_walls < 0 || c.num_inner_walls > c.num_interior_edges()) {
    fail("num_inner_walls", "must be in [0, " + std::to_string(c.num_interior_edges()) + "]");
  }
  if (c.horizon < 1) fail("horizon", "must be >= 1");
}

// A periodically toggling wall between two adjacent rooms.
struct Wall {
  int room_a = 0;  // room index, north or west side
  int room_b = 0;
  int period = 4;
  int closed_span = 2;
  int phase = 0;

  bool closed_at(Step t) const { return (t + phase) % period < closed_span; }
};

struct HiddenState {
  Step step = 0;
  EntityId agent_room;
  std::vector<EntityId> object_rooms;  // parallel to RoomWorld::objects()
  std::vector<bool> wall_closed;       // parallel to RoomWorld::walls()
  friend bool operator==(const HiddenState&, const HiddenState&) = default;
};

struct Observation {
  std::vector<Triple> triples;
};

// (head, relation, ?) with the hidden truth used for scoring.
struct Query {
  EntityId head;
  RelationId relation;
  EntityId truth;
};

struct EpisodeStart {
  HiddenState state;
  Observation observation;
  Query query;
};

struct StepOutcome {
  HiddenState state;
  Observation observation;
  Query query;
  double reward = 0.0;
  bool done = false;
};

namespace detail {

inline const std::vector<std::string>& room_words() {
  static const std::vector<std::string> words = {
      "playroom", "studio",  "living",  "kitchen", "bedroom", "bathroom", "office",
      "library",  "garage",  "attic",   "basement", "hallway", "pantry",  "laundry",
      "den",      "foyer",   "nursery", "cellar",  "gym",     "lounge",   "porch",
      "study",    "closet",  "balcony", "loft",    "sunroom", "parlor",   "workshop",
      "gallery",  "vestibule"};
  return words;
}

inline const std::vector<std::string>& static_object_words() {
  static const std::vector<std::string> words = {
      "table", "sofa",   "desk",  "bed",     "lamp",   "piano",  "fridge", "shelf",
      "chair", "tv",     "stove", "mirror",  "clock",  "rug",    "vase",   "dresser",
      "bench", "toilet", "sink",  "cabinet", "ottoman", "easel", "printer", "stool"};
  return words;
}

inline const std::vector<std::string>& moving_object_words() {
  static const std::vector<std::string> words = {
      "john",  "william", "mary",   "alice", "bob",    "carol", "david",  "emma",
      "frank", "grace",   "henry",  "irene", "james",  "kate",  "laura",  "mike",
      "nina",  "oscar",   "paula",  "quinn", "robert", "sarah", "thomas", "ursula"};
  return words;
}

inline std::vector<std::string> draw_names(const std::vector<std::string>& words, int count,
                                           const std::string& overflow_prefix, Rng& rng) {
  std::vector<std::string> pool = words;
  rng.shuffle(std::span<std::string>(pool));
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    if (static_cast<std::size_t>(i) < pool.size()) {
      out.push_back(pool[static_cast<std::size_t>(i)]);
    } else {
      out.push_back(overflow_prefix + std::to_string(i));
    }
  }
  return out;
}

}  // namespace detail

class RoomWorld {
 public:
  explicit RoomWorld(WorldConfig config) : config_(config) {
    validate(config_);
    schema_ = Schema::standard(vocab_);
    build_layout();
  }

  const WorldConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const Schema& schema() const { return schema_; }
  const std::vector<EntityId>& rooms() const { return rooms_; }
  const std::vector<EntityId>& objects() const { return objects_; }
  const std::vector<Wall>& walls() const { return walls_; }
  const std::vector<int>& initial_object_rooms() const { return initial_object_rooms_; }
  bool is_moving(std::size_t object_index) const {
    return object_index >= static_cast<std::size_t>(config_.num_static_objects);
  }
  bool is_room(EntityId e) const { return room_index(e) >= 0; }
  bool is_object(EntityId e) const { return object_index(e) >= 0; }

  int room_index(EntityId e) const {
    if (e.value < first_room_ || e.value >= first_room_ + rooms_.size()) return -1;
    return static_cast<int>(e.value - first_room_);
  }
  int object_index(EntityId e) const {
    if (e.value < first_object_ || e.value >= first_object_ + objects_.size()) return -1;
    return static_cast<int>(e.value - first_object_);
  }
  EntityId room_at(int row, int col) const {
    return rooms_[static_cast<std::size_t>(row * config_.grid_length + col)];
  }

  // Neighbor room index in a direction, or -1 at the boundary.
  int neighbor(int room, Move dir) const {
    const int n = config_.grid_length;
    int r = room / n, c = room % n;
    switch (dir) {
      case Move::north: --r; break;
      case Move::south: ++r; break;
      case Move::east: ++c; break;
      case Move::west: --c; break;
      case Move::stay: return room;
    }
    if (r < 0 || c < 0 || r >= n || c >= n) return -1;
    return r * n + c;
  }

  // Wall index on the passage, or -1 when the passage has no inner wall.
  int wall_on(int room, Move dir) const {
    return passage_wall_[static_cast<std::size_t>(room)][static_cast<std::size_t>(dir)];
  }

  bool passage_open(const HiddenState& s, int room, Move dir) const {
    if (dir == Move::stay) return true;
    if (neighbor(room, dir) < 0) return false;
    const int w = wall_on(room, dir);
    return w < 0 || !s.wall_closed[static_cast<std::size_t>(w)];
  }

  EpisodeStart reset(std::uint64_t episode_seed) {
    shuffle_rng_ = Rng(mix_seed(episode_seed, 11));
    move_rng_ = Rng(mix_seed(episode_seed, 12));
    Rng query_rng(mix_seed(mix_seed(episode_seed, 13),
                           config_.query_split == QuerySplit::train ? 1 : 2));
    query_order_.resize(objects_.size());
    for (std::size_t i = 0; i < objects_.size(); ++i) query_order_[i] = i;
    query_rng.shuffle(std::span<std::size_t>(query_order_));

    state_ = HiddenState{};
    state_.step = 0;
    state_.agent_room = rooms_.front();
    state_.object_rooms.clear();
    for (int r : initial_object_rooms_) {
      state_.object_rooms.push_back(rooms_[static_cast<std::size_t>(r)]);
    }
    update_walls();
    started_ = true;
    EpisodeStart out{state_, observe(), make_query()};
    pending_ = out.query;
    return out;
  }

  StepOutcome step(Move move, EntityId answer) {
    if (!started_) throw UsageError("step() before reset()");
    if (state_.step >= config_.horizon) throw UsageError("episode already finished");
    const double reward = answer == pending_.truth ? 1.0 : 0.0;

    const int here = room_index(state_.agent_room);
    if (move != Move::stay && passage_open(state_, here, move)) {
      state_.agent_room = rooms_[static_cast<std::size_t>(neighbor(here, move))];
    }
    advance_objects();
    ++state_.step;
    update_walls();

    StepOutcome out{state_, observe(), make_query(), reward, state_.step == config_.horizon};
    pending_ = out.query;
    return out;
  }

  const HiddenState& state() const { return state_; }
  const Query& pending_query() const { return pending_; }

  // Bird's-eye text grid: '@' marks the agent, digits count objects,
  // '|' and '----' mark closed walls. A legend lists object placements.
  std::string render_birdseye(const HiddenState& s) const {
    const int n = config_.grid_length;
    std::vector<int> counts(rooms_.size(), 0);
    for (EntityId r : s.object_rooms) ++counts[static_cast<std::size_t>(room_index(r))];
    const int agent = room_index(s.agent_room);

    std::string out;
    auto horizontal = [&](int row) {  // border above `row`
      for (int c = 0; c < n; ++c) {
        out += '+';
        bool closed = true;
        if (row > 0 && row < n) closed = !passage_open(s, (row - 1) * n + c, Move::south);
        out += closed ? "----" : "    ";
      }
      out += "+\n";
    };
    for (int r = 0; r < n; ++r) {
      horizontal(r);
      out += '|';
      for (int c = 0; c < n; ++c) {
        const int room = r * n + c;
        char cell[8];
        const int k = counts[static_cast<std::size_t>(room)];
        std::snprintf(cell, sizeof cell, "%c%2s ", room == agent ? '@' : ' ',
                      k > 0 ? std::to_string(k).c_str() : "");
        out += cell;
        out += (c == n - 1 || !passage_open(s, room, Move::east)) ? '|' : ' ';
      }
      out += '\n';
    }
    horizontal(n);

    out += "step " + std::to_string(s.step) + ", agent in " +
           vocab_.entities.label(s.agent_room) + "\n";
    for (int room = 0; room < n * n; ++room) {
      if (counts[static_cast<std::size_t>(room)] == 0) continue;
      out += vocab_.entities.label(rooms_[static_cast<std::size_t>(room)]) + " (" +
             std::to_string(room / n) + "," + std::to_string(room % n) + "):";
      for (std::size_t o = 0; o < objects_.size(); ++o) {
        if (room_index(s.object_rooms[o]) == room) {
          out += " " + vocab_.entities.label(objects_[o]);
        }
      }
      out += '\n';
    }
    return out;
  }

  std::string render_birdseye() const { return render_birdseye(state_); }

 private:
  void build_layout() {
    Rng rng(mix_seed(config_.world_seed, 1));
    const int n = config_.grid_length;
    const int num_rooms = n * n;

    for (const auto& name : detail::draw_names(detail::room_words(), num_rooms, "room_", rng)) {
      rooms_.push_back(vocab_.entities.intern(name));
    }
    first_room_ = rooms_.front().value;
    auto statics = detail::draw_names(detail::static_object_words(),
                                      config_.num_static_objects, "thing_", rng);
    auto movers = detail::draw_names(detail::moving_object_words(),
                                     config_.num_moving_objects, "person_", rng);
    for (const auto& name : statics) objects_.push_back(vocab_.entities.intern(name));
    for (const auto& name : movers) objects_.push_back(vocab_.entities.intern(name));
    first_object_ = objects_.empty() ? 0 : objects_.front().value;

    // Interior edges: east and south of each room.
    std::vector<std::pair<int, Move>> edges;
    for (int room = 0; room < num_rooms; ++room) {
      if (neighbor(room, Move::east) >= 0) edges.emplace_back(room, Move::east);
      if (neighbor(room, Move::south) >= 0) edges.emplace_back(room, Move::south);
    }
    rng.shuffle(std::span<std::pair<int, Move>>(edges));
    passage_wall_.assign(static_cast<std::size_t>(num_rooms), {-1, -1, -1, -1});
    static constexpr std::array<int, 4> kPeriods = {4, 6, 8, 10};
    for (int w = 0; w < config_.num_inner_walls; ++w) {
      const auto [room, dir] = edges[static_cast<std::size_t>(w)];
      Wall wall;
      wall.room_a = room;
      wall.room_b = neighbor(room, dir);
      wall.period = kPeriods[rng.below(kPeriods.size())];
      wall.closed_span = wall.period / 2;
      wall.phase = static_cast<int>(rng.below(static_cast<std::size_t>(wall.period)));
      walls_.push_back(wall);
      const Move back = dir == Move::east ? Move::west : Move::north;
      passage_wall_[static_cast<std::size_t>(room)][static_cast<std::size_t>(dir)] = w;
      passage_wall_[static_cast<std::size_t>(wall.room_b)][static_cast<std::size_t>(back)] = w;
    }

    std::vector<int> occupancy(static_cast<std::size_t>(num_rooms), 0);
    for (std::size_t o = 0; o < objects_.size(); ++o) {
      int room = 0;
      do {
        room = static_cast<int>(rng.below(static_cast<std::size_t>(num_rooms)));
      } while (occupancy[static_cast<std::size_t>(room)] >= config_.max_objects_per_room);
      ++occupancy[static_cast<std::size_t>(room)];
      initial_object_rooms_.push_back(room);
    }
  }

  void update_walls() {
    state_.wall_closed.resize(walls_.size());
    for (std::size_t w = 0; w < walls_.size(); ++w) {
      state_.wall_closed[w] = walls_[w].closed_at(state_.step);
    }
  }

  // Lazy random walk: with probability 0.5 move to a uniformly chosen open,
  // non-full neighbor room.
  void advance_objects() {
    std::vector<int> occupancy(rooms_.size(), 0);
    for (EntityId r : state_.object_rooms) ++occupancy[static_cast<std::size_t>(room_index(r))];
    for (std::size_t o = static_cast<std::size_t>(config_.num_static_objects);
         o < objects_.size(); ++o) {
      if (!move_rng_.bernoulli(0.5)) continue;
      const int here = room_index(state_.object_rooms[o]);
      std::vector<int> options;
      for (Move d : kDirections) {
        if (!passage_open(state_, here, d)) continue;
        const int there = neighbor(here, d);
        if (occupancy[static_cast<std::size_t>(there)] < config_.max_objects_per_room) {
          options.push_back(there);
        }
      }
      if (options.empty()) continue;
      const int there = options[move_rng_.below(options.size())];
      --occupancy[static_cast<std::size_t>(here)];
      ++occupancy[static_cast<std::size_t>(there)];
      state_.object_rooms[o] = rooms_[static_cast<std::size_t>(there)];
    }
  }

  Observation observe() {
    Observation obs;
    const EntityId room = state_.agent_room;
    const int here = room_index(room);
    obs.triples.push_back({schema_.agent, schema_.at_location, room});
    for (std::size_t d = 0; d < 4; ++d) {
      const Move dir = kDirections[d];
      EntityId target = schema_.wall;
      if (passage_open(state_, here, dir)) {
        target = rooms_[static_cast<std::size_t>(neighbor(here, dir))];
      }
      obs.triples.push_back({room, schema_.directions[d], target});
    }
    for (std::size_t o = 0; o < objects_.size(); ++o) {
      if (state_.object_rooms[o] == room) {
        obs.triples.push_back({objects_[o], schema_.at_location, room});
      }
    }
    shuffle_rng_.shuffle(std::span<Triple>(obs.triples));
    return obs;
  }

  Query make_query() const {
    const std::size_t o =
        query_order_[static_cast<std::size_t>(state_.step) % query_order_.size()];
    return {objects_[o], schema_.at_location, state_.object_rooms[o]};
  }

  WorldConfig config_;
  Vocabulary vocab_;
  Schema schema_;
  std::vector<EntityId> rooms_;
  std::vector<EntityId> objects_;
  std::uint32_t first_room_ = 0;
  std::uint32_t first_object_ = 0;
  std::vector<Wall> walls_;
  std::vector<std::array<int, 4>> passage_wall_;
  std::vector<int> initial_object_rooms_;

  HiddenState state_;
  Query pending_{};
  std::vector<std::size_t> query_order_;
  Rng shuffle_rng_{0};
  Rng move_rng_{0};
  bool started_ = false;
};

}  // namespace kgmem
