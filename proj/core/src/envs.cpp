#include "malt/envs.hpp"

#include <sstream>

namespace malt {

namespace {

struct Rgb {
  uint8_t r, g, b;
};

constexpr Rgb col_grass{64, 144, 64};
constexpr Rgb col_grass_dot{52, 120, 52};
constexpr Rgb col_canopy{24, 96, 40};
constexpr Rgb col_trunk{92, 64, 28};
constexpr Rgb col_stone{130, 130, 134};
constexpr Rgb col_stone_hi{160, 160, 164};
constexpr Rgb col_stone_lo{100, 100, 104};
constexpr Rgb col_water{44, 88, 208};
constexpr Rgb col_wave{84, 128, 232};
constexpr Rgb col_void{16, 16, 16};
constexpr Rgb col_agent{232, 200, 72};
constexpr Rgb col_face{240, 240, 240};
constexpr Rgb col_monster{204, 44, 44};
constexpr Rgb col_eye{16, 16, 16};
constexpr Rgb col_frame{10, 10, 10};
constexpr Rgb col_health{220, 60, 60};

void fill(torch::TensorAccessor<uint8_t, 3> a, int x0, int y0, int w, int h, Rgb c) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) {
      a[y][x][0] = c.r;
      a[y][x][1] = c.g;
      a[y][x][2] = c.b;
    }
}

void draw_tile(torch::TensorAccessor<uint8_t, 3> a, int ox, int oy, Tile t, bool in_world) {
  if (!in_world) {
    fill(a, ox, oy, 9, 9, col_void);
    return;
  }
  fill(a, ox, oy, 9, 9, col_grass);
  fill(a, ox + 2, oy + 2, 1, 1, col_grass_dot);
  fill(a, ox + 6, oy + 5, 1, 1, col_grass_dot);
  switch (t) {
    case Tile::grass:
      break;
    case Tile::tree:
      fill(a, ox + 2, oy + 1, 5, 5, col_canopy);
      fill(a, ox + 4, oy + 6, 1, 2, col_trunk);
      break;
    case Tile::stone:
      fill(a, ox, oy, 9, 9, col_stone);
      fill(a, ox + 2, oy + 2, 3, 3, col_stone_hi);
      fill(a, ox, oy + 7, 9, 1, col_stone_lo);
      break;
    case Tile::water:
      fill(a, ox, oy, 9, 9, col_water);
      fill(a, ox + 1, oy + 2, 7, 1, col_wave);
      fill(a, ox + 1, oy + 5, 7, 1, col_wave);
      break;
  }
}

constexpr int dx4[4] = {0, 0, -1, 1};  // up, down, left, right
constexpr int dy4[4] = {-1, 1, 0, 0};

double unit_uniform(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

}  // namespace

Tensor render_gridcraft(const GridCraftState& s) {
  auto img = torch::zeros({64, 64, 3}, torch::kUInt8);
  auto a = img.accessor<uint8_t, 3>();
  int half = GridCraftState::view / 2;
  for (int vy = 0; vy < GridCraftState::view; ++vy)
    for (int vx = 0; vx < GridCraftState::view; ++vx) {
      int wx = s.agent_x - half + vx, wy = s.agent_y - half + vy;
      bool in_world = s.in_bounds(wx, wy);
      draw_tile(a, vx * 9, vy * 9, in_world ? s.at(wx, wy) : Tile::grass, in_world);
      if (in_world && wx == s.monster_x && wy == s.monster_y) {
        fill(a, vx * 9 + 2, vy * 9 + 1, 5, 7, col_monster);
        fill(a, vx * 9 + 3, vy * 9 + 3, 1, 1, col_eye);
        fill(a, vx * 9 + 5, vy * 9 + 3, 1, 1, col_eye);
      }
    }
  // agent always sits on the center tile
  {
    int ox = half * 9, oy = half * 9;
    fill(a, ox + 2, oy + 2, 5, 5, col_agent);
    switch (s.facing) {
      case 0: fill(a, ox + 3, oy + 1, 3, 1, col_face); break;
      case 1: fill(a, ox + 3, oy + 7, 3, 1, col_face); break;
      case 2: fill(a, ox + 1, oy + 3, 1, 3, col_face); break;
      case 3: fill(a, ox + 7, oy + 3, 1, 3, col_face); break;
    }
  }
  fill(a, 63, 0, 1, 64, col_frame);
  fill(a, 0, 63, 64, 1, col_frame);
  fill(a, 0, 63, 7 * s.health, 1, col_health);
  return img;
}

EnvStep GridCraftEnv::reset(uint64_t seed) {
  rng_.seed(seed);
  state_ = GridCraftState{};
  auto place = [&](Tile t, int count) {
    while (count > 0) {
      int x = int(rng_() % GridCraftState::size);
      int y = int(rng_() % GridCraftState::size);
      if ((x == state_.agent_x && y == state_.agent_y) || state_.at(x, y) != Tile::grass) continue;
      state_.set(x, y, t);
      --count;
    }
  };
  place(Tile::tree, 6);
  place(Tile::stone, 5);
  place(Tile::water, 4);
  while (true) {
    int x = int(rng_() % GridCraftState::size);
    int y = int(rng_() % GridCraftState::size);
    int cheb = std::max(std::abs(x - state_.agent_x), std::abs(y - state_.agent_y));
    if (state_.at(x, y) != Tile::grass || cheb < 3) continue;
    state_.monster_x = x;
    state_.monster_y = y;
    break;
  }
  over_ = false;
  return {render_gridcraft(state_), 0.0f, 1.0f, true, 0};
}

EnvStep GridCraftEnv::step(int action) {
  MALT_CHECK(!over_, "gridcraft: step after episode end; call reset");
  MALT_CHECK(action >= 0 && action < action_count(), "gridcraft: invalid action");
  auto& s = state_;
  ++s.step_count;
  float reward = 0.0f;
  int prev_dist = std::abs(s.agent_x - s.monster_x) + std::abs(s.agent_y - s.monster_y);
  auto unlock = [&](uint32_t bit) {
    if (!(s.unlocked & bit)) {
      s.unlocked |= bit;
      reward += 1.0f;
    }
  };

  if (action < 4) {
    s.facing = action;
    int nx = s.agent_x + dx4[action], ny = s.agent_y + dy4[action];
    if (s.in_bounds(nx, ny) && s.at(nx, ny) == Tile::grass &&
        !(nx == s.monster_x && ny == s.monster_y)) {
      s.agent_x = nx;
      s.agent_y = ny;
    }
  } else if (action == 4) {
    int tx = s.agent_x + dx4[s.facing], ty = s.agent_y + dy4[s.facing];
    if (s.in_bounds(tx, ty)) {
      switch (s.at(tx, ty)) {
        case Tile::tree:
          s.set(tx, ty, Tile::grass);
          unlock(ach_collect_wood);
          break;
        case Tile::stone:
          s.set(tx, ty, Tile::grass);
          unlock(ach_collect_stone);
          break;
        case Tile::water:
          unlock(ach_drink_water);
          break;
        case Tile::grass:
          break;
      }
    }
  }

  // monster: half the time a greedy chase step, otherwise a random walk
  {
    int mx = s.monster_x, my = s.monster_y;
    int tx = mx, ty = my;
    if (unit_uniform(rng_) < 0.5) {
      int ddx = s.agent_x - mx, ddy = s.agent_y - my;
      if (std::abs(ddx) >= std::abs(ddy) && ddx != 0) tx += (ddx > 0) ? 1 : -1;
      else if (ddy != 0) ty += (ddy > 0) ? 1 : -1;
    } else {
      int dir = int(rng_() % 5);
      if (dir < 4) {
        tx += dx4[dir];
        ty += dy4[dir];
      }
    }
    if (s.in_bounds(tx, ty) && s.at(tx, ty) == Tile::grass &&
        !(tx == s.agent_x && ty == s.agent_y)) {
      s.monster_x = tx;
      s.monster_y = ty;
    }
  }

  int dist = std::abs(s.agent_x - s.monster_x) + std::abs(s.agent_y - s.monster_y);
  bool damaged = false;
  if (dist <= 1) {
    s.health -= 1;
    reward -= 0.1f;
    damaged = true;
  }
  if (!damaged && s.health < GridCraftState::max_health && s.step_count % 10 == 0) {
    s.health += 1;
    reward += 0.1f;
  }
  if (prev_dist <= 1 && dist >= 2) unlock(ach_evade_monster);

  float cont = 1.0f;
  if (s.health <= 0) {
    cont = 0.0f;
    over_ = true;
  } else if (s.step_count >= episode_cap) {
    over_ = true;  // truncation: episode ends but the value may still bootstrap
  }
  return {render_gridcraft(s), reward, cont, false, s.unlocked};
}

void GridCraftEnv::load_state_for_test(const GridCraftState& s) {
  state_ = s;
  over_ = false;
}

std::string GridCraftEnv::serialize_rng() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

void GridCraftEnv::restore(const GridCraftState& s, const std::string& rng, bool over) {
  state_ = s;
  std::istringstream is(rng);
  is >> rng_;
  MALT_CHECK(!is.fail(), "gridcraft: bad rng state string");
  over_ = over;
}

Tensor blinker_pattern(int phase) {
  auto img = torch::zeros({8, 8, 3}, torch::kUInt8);
  auto a = img.accessor<uint8_t, 3>();
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      bool bright = (x + y + phase) % 2 == 0;
      a[y][x][0] = bright ? 228 : 32;
      a[y][x][1] = bright ? 228 : 32;
      a[y][x][2] = bright ? 64 : 128;
    }
  return img;
}

Tensor render_blinker(int phase) {
  return blinker_pattern(phase).repeat_interleave(8, 0).repeat_interleave(8, 1).contiguous();
}

EnvStep BlinkerEnv::reset(uint64_t seed) {
  phase_ = int(seed % 2);
  step_count_ = 0;
  over_ = false;
  return {render_blinker(phase_), 0.0f, 1.0f, true, 0};
}

EnvStep BlinkerEnv::step(int action) {
  MALT_CHECK(!over_, "blinker: step after episode end; call reset");
  MALT_CHECK(action >= 0 && action < action_count(), "blinker: invalid action");
  phase_ ^= 1;
  ++step_count_;
  if (step_count_ >= episode_cap) over_ = true;
  return {render_blinker(phase_), 0.0f, 1.0f, false, 0};
}

void BlinkerEnv::restore(int phase, int step_count, bool over) {
  phase_ = phase & 1;
  step_count_ = step_count;
  over_ = over;
}

std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "gridcraft") return std::make_unique<GridCraftEnv>();
  if (name == "blinker") return std::make_unique<BlinkerEnv>();
  throw contract_error("unknown env '" + name + "'");
}

}  // namespace malt
