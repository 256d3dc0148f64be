#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "malt/common.hpp"

namespace malt {

// One environment transition as stored in replay. `cont` is the episode
// continuation flag: 0 only on terminal steps (death), 1 otherwise, including
// truncation at the step cap. `achievements` is the set unlocked so far this
// episode, one bit per achievement index.
struct EnvStep {
  Tensor observation;  // [64,64,3] uint8
  float reward = 0.0f;
  float cont = 1.0f;
  bool is_first = false;
  uint32_t achievements = 0;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual int action_count() const = 0;
  virtual std::vector<std::string> achievement_names() const = 0;
  virtual EnvStep reset(uint64_t seed) = 0;
  // Steps the episode. Calling after a terminal or capped step throws.
  virtual EnvStep step(int action) = 0;
  virtual bool episode_over() const = 0;
};

// ---------------------------------------------------------------------------
// GridCraft: a 9x9 survival world observed through an agent-centered 7x7 crop
// rendered at 64x64. Four move actions (set facing + step), interact (on the
// faced tile), and noop. Collecting resources and evading the monster unlock
// one-time +1 achievement rewards; health lost/regained gives -0.1/+0.1.

enum class Tile : uint8_t { grass = 0, tree = 1, stone = 2, water = 3 };

enum GridCraftAchievement : uint32_t {
  ach_collect_wood = 1u << 0,
  ach_collect_stone = 1u << 1,
  ach_drink_water = 1u << 2,
  ach_evade_monster = 1u << 3,
};

struct GridCraftState {
  static constexpr int size = 9;
  static constexpr int view = 7;
  static constexpr int max_health = 9;
  std::array<Tile, size * size> grid{};
  int agent_x = 4, agent_y = 4;
  int facing = 0;  // 0 up, 1 down, 2 left, 3 right
  int monster_x = 0, monster_y = 0;
  int health = max_health;
  int step_count = 0;
  uint32_t unlocked = 0;

  Tile at(int x, int y) const { return grid[y * size + x]; }
  void set(int x, int y, Tile t) { grid[y * size + x] = t; }
  bool in_bounds(int x, int y) const { return x >= 0 && x < size && y >= 0 && y < size; }
};

// Pure function of the state: the 7x7 crop around the agent at 9px per tile
// plus a 1px frame, 64x64x3 uint8. Tiles outside the world render as void.
Tensor render_gridcraft(const GridCraftState& state);

class GridCraftEnv : public Env {
 public:
  static constexpr int episode_cap = 200;

  int action_count() const override { return 6; }
  std::vector<std::string> achievement_names() const override {
    return {"collect_wood", "collect_stone", "drink_water", "evade_monster"};
  }
  EnvStep reset(uint64_t seed) override;
  EnvStep step(int action) override;
  bool episode_over() const override { return over_; }

  const GridCraftState& state() const { return state_; }
  void load_state_for_test(const GridCraftState& s);

  // checkpoint support
  std::string serialize_rng() const;
  void restore(const GridCraftState& s, const std::string& rng, bool over);

 private:
  GridCraftState state_;
  std::mt19937_64 rng_;
  bool over_ = true;
};

// ---------------------------------------------------------------------------
// Blinker: an 8x8 two-phase pattern that alternates deterministically every
// step; all actions are no-ops and rewards are zero. Future frames are exactly
// predictable, which makes it a world-model accuracy oracle.

class BlinkerEnv : public Env {
 public:
  static constexpr int episode_cap = 100;

  int action_count() const override { return 2; }
  std::vector<std::string> achievement_names() const override { return {}; }
  EnvStep reset(uint64_t seed) override;
  EnvStep step(int action) override;
  bool episode_over() const override { return over_; }

  int phase() const { return phase_; }
  void restore(int phase, int step_count, bool over);
  int step_count() const { return step_count_; }

 private:
  int phase_ = 0;
  int step_count_ = 0;
  bool over_ = true;
};

// [8,8,3] uint8 pattern for a blinker phase, before 8x upscaling.
Tensor blinker_pattern(int phase);
Tensor render_blinker(int phase);

std::unique_ptr<Env> make_env(const std::string& name);

}  // namespace malt
