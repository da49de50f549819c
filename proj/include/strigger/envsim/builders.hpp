#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "strigger/envsim/world.hpp"

namespace strigger::envsim {

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace palette {
inline constexpr Color wall{0.55, 0.55, 0.55};
inline constexpr Color fixed_obstacle{0.85, 0.55, 0.15};
inline constexpr Color round_obstacle{0.10, 0.20, 0.95};
inline constexpr Color green{0.10, 0.90, 0.10};
inline constexpr Color red{0.95, 0.10, 0.10};
} // namespace palette

namespace detail {

inline std::vector<Entity> boundary_walls(double w, double h, double thickness, Color color) {
  auto wall = [&](Rect r) { return Entity{EntityKind::wall, EdibleClass::neutral, r, color}; };
  return {wall({{0, 0}, {w, thickness}}), wall({{0, h - thickness}, {w, h}}),
          wall({{0, thickness}, {thickness, h - thickness}}),
          wall({{w - thickness, thickness}, {w, h - thickness}})};
}

// Rejection-samples a circle of radius r whose disc (padded by `clearance`) avoids all
// existing entities. Throws after `retries` failures.
inline Circle place_circle(const std::vector<Entity> &entities, const Rect &region, double r,
                           double clearance, std::mt19937_64 &rng, int retries) {
  std::uniform_real_distribution<double> ux(region.lo.x + r, region.hi.x - r);
  std::uniform_real_distribution<double> uy(region.lo.y + r, region.hi.y - r);
  for (int attempt = 0; attempt < retries; ++attempt) {
    Circle c{{ux(rng), uy(rng)}, r};
    bool ok = true;
    for (const auto &e : entities)
      if (disc_intersects(c.center, r + clearance, e.geometry)) {
        ok = false;
        break;
      }
    if (ok) return c;
  }
  throw GenerationError("could not place a circle of radius " + std::to_string(r) + " after " +
                        std::to_string(retries) + " attempts");
}

} // namespace detail

struct Experiment1Config {
  double size = 12.0;
  double wall_thickness = 0.4;
  int round_obstacles = 10;
  int edibles = 16;
  double round_obstacle_radius = 0.5;
  double edible_radius = 0.45;
  Color first_edible_color = palette::green;
  Color second_edible_color = palette::red;
  double edible_reward = 10.0;
  int episode_length = 500;
};

// Two rooms with identical geometry; only the edible color differs.
inline std::pair<WorldSpec, WorldSpec> build_experiment1_pair(std::uint64_t seed,
                                                              const Experiment1Config &cfg = {}) {
  std::mt19937_64 rng(seed);
  const double s = cfg.size;
  WorldSpec w;
  w.name = "exp1-env1";
  w.width = w.height = s;
  w.episode_length = cfg.episode_length;
  w.rewards = {{EdibleClass::fruit, cfg.edible_reward}, {EdibleClass::poison, -cfg.edible_reward},
               {EdibleClass::neutral, 0.0}};
  w.vision.max_range = std::sqrt(2.0) * s;
  w.spawn = Rect{{cfg.wall_thickness, cfg.wall_thickness},
                 {s - cfg.wall_thickness, s - cfg.wall_thickness}};
  w.entities = detail::boundary_walls(s, s, cfg.wall_thickness, palette::wall);

  // Fixed obstacles do not depend on the seed.
  const std::array<Rect, 3> fixed{Rect{{0.18 * s, 0.18 * s}, {0.30 * s, 0.26 * s}},
                                  Rect{{0.68 * s, 0.25 * s}, {0.76 * s, 0.42 * s}},
                                  Rect{{0.35 * s, 0.70 * s}, {0.58 * s, 0.77 * s}}};
  for (const auto &r : fixed)
    w.entities.push_back(Entity{EntityKind::fixed_obstacle, EdibleClass::neutral, r,
                                palette::fixed_obstacle});

  // A dead-end layout is discarded and resampled as a whole, a bounded number of times.
  const Rect inner = w.spawn;
  const auto base = w.entities;
  for (int layout = 0;; ++layout) {
    w.entities = base;
    try {
      for (int i = 0; i < cfg.round_obstacles; ++i)
        w.entities.push_back(Entity{EntityKind::round_obstacle, EdibleClass::neutral,
                                    detail::place_circle(w.entities, inner, cfg.round_obstacle_radius,
                                                         0.8, rng, 1000),
                                    palette::round_obstacle});
      for (int i = 0; i < cfg.edibles; ++i)
        w.entities.push_back(Entity{EntityKind::edible, EdibleClass::fruit,
                                    detail::place_circle(w.entities, inner, cfg.edible_radius, 0.3,
                                                         rng, 1000),
                                    cfg.first_edible_color});
      break;
    } catch (const GenerationError &) {
      if (layout + 1 >= 20) throw;
    }
  }

  WorldSpec w2 = w;
  w2.name = "exp1-env2";
  for (auto &e : w2.entities)
    if (e.kind == EntityKind::edible) e.color = cfg.second_edible_color;
  validate(w);
  validate(w2);
  return {std::move(w), std::move(w2)};
}

// ---- mazes -------------------------------------------------------------------

struct StagePalette {
  Color wall;
  Color fruit;
  Color poison;
};

struct MazeGenConfig {
  std::uint64_t seed = 0;
  int stage = 1; // 1, 2 or 3
  int grid = 16; // cells per side, boundary included
  double cell = 1.0;
  int min_rooms = 3;
  int max_rooms = 5;
  int min_room_cells = 3;
  int min_door = 2;
  int max_door = 3;
  int fruits = 6;
  int poisons = 6;
  std::array<double, 3> edible_radius{0.25, 0.35, 0.45};
  std::array<StagePalette, 3> palettes{
      StagePalette{{0.45, 0.45, 0.75}, {0.10, 0.90, 0.10}, {0.90, 0.10, 0.10}},
      StagePalette{{0.80, 0.60, 0.30}, {0.95, 0.95, 0.10}, {0.65, 0.10, 0.85}},
      StagePalette{{0.20, 0.70, 0.65}, {0.95, 0.95, 0.95}, {0.95, 0.30, 0.65}}};
  int episode_length = 500;
  int placement_retries = 100;
};

inline void validate(const MazeGenConfig &cfg) {
  if (cfg.stage < 1 || cfg.stage > 3) throw GenerationError("maze stage must be 1, 2 or 3");
  if (cfg.grid < 2 * cfg.min_room_cells + 3) throw GenerationError("maze grid too small");
  if (cfg.min_rooms < 1 || cfg.max_rooms < cfg.min_rooms) throw GenerationError("bad room count range");
  if (cfg.min_door < 1 || cfg.max_door < cfg.min_door) throw GenerationError("bad corridor width range");
  for (int k = 0; k + 1 < 3; ++k)
    if (!(cfg.edible_radius[k] < cfg.edible_radius[k + 1]))
      throw GenerationError("edible radius must increase with stage");
  for (const auto &p : cfg.palettes)
    if (p.fruit == p.poison) throw GenerationError("fruit and poison colors must differ");
}

// Occupancy grid of a maze: true marks a wall cell. Row index is y.
struct MazeGrid {
  int n = 0;
  std::vector<char> wall;
  bool at(int x, int y) const { return wall[static_cast<std::size_t>(y * n + x)] != 0; }
  void set(int x, int y, bool v) { wall[static_cast<std::size_t>(y * n + x)] = v ? 1 : 0; }
};

namespace detail {

struct Chamber {
  int x0, y0, x1, y1; // inclusive interior cell bounds
  int w() const { return x1 - x0 + 1; }
  int h() const { return y1 - y0 + 1; }
};

// Recursive division: chambers are split by one-cell walls pierced by a door, so the
// free space stays connected by construction.
inline MazeGrid carve_rooms(const MazeGenConfig &cfg, std::mt19937_64 &rng) {
  MazeGrid g{cfg.grid, std::vector<char>(static_cast<std::size_t>(cfg.grid * cfg.grid), 0)};
  for (int i = 0; i < cfg.grid; ++i) {
    g.set(i, 0, true);
    g.set(i, cfg.grid - 1, true);
    g.set(0, i, true);
    g.set(cfg.grid - 1, i, true);
  }
  std::uniform_int_distribution<int> rooms_dist(cfg.min_rooms, cfg.max_rooms);
  const int target = rooms_dist(rng);
  std::vector<Chamber> chambers{{1, 1, cfg.grid - 2, cfg.grid - 2}};
  const int min_split = 2 * cfg.min_room_cells + 1;

  int rooms_final = 0;
  while (static_cast<int>(chambers.size()) + rooms_final < target) {
    // Split the largest chamber that can still hold two rooms.
    int best = -1;
    for (int i = 0; i < static_cast<int>(chambers.size()); ++i) {
      const auto &c = chambers[static_cast<std::size_t>(i)];
      if (std::max(c.w(), c.h()) < min_split) continue;
      if (best < 0 || c.w() * c.h() > chambers[static_cast<std::size_t>(best)].w() *
                                          chambers[static_cast<std::size_t>(best)].h())
        best = i;
    }
    if (best < 0) break;
    Chamber c = chambers[static_cast<std::size_t>(best)];
    chambers.erase(chambers.begin() + best);

    bool vertical = c.w() > c.h() || (c.w() == c.h() && std::bernoulli_distribution(0.5)(rng));
    if (vertical && c.w() < min_split) vertical = false;
    if (!vertical && c.h() < min_split) vertical = true;

    const int lo = vertical ? c.x0 : c.y0;
    const int span = vertical ? c.w() : c.h();
    // A new wall may not end against an existing door opening.
    std::vector<int> candidates;
    for (int p = lo + cfg.min_room_cells; p <= lo + span - 1 - cfg.min_room_cells; ++p) {
      const bool ends_on_wall = vertical ? (g.at(p, c.y0 - 1) && g.at(p, c.y1 + 1))
                                         : (g.at(c.x0 - 1, p) && g.at(c.x1 + 1, p));
      if (ends_on_wall) candidates.push_back(p);
    }
    if (candidates.empty()) {
      ++rooms_final;
      continue;
    }
    const int line = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];

    const int along_lo = vertical ? c.y0 : c.x0;
    const int along_len = vertical ? c.h() : c.w();
    const int door = std::min(std::uniform_int_distribution<int>(cfg.min_door, cfg.max_door)(rng), along_len);
    const int door_at = std::uniform_int_distribution<int>(along_lo, along_lo + along_len - door)(rng);
    for (int k = along_lo; k < along_lo + along_len; ++k) {
      const bool open = k >= door_at && k < door_at + door;
      if (vertical) g.set(line, k, !open);
      else g.set(k, line, !open);
    }
    if (vertical) {
      chambers.push_back({c.x0, c.y0, line - 1, c.y1});
      chambers.push_back({line + 1, c.y0, c.x1, c.y1});
    } else {
      chambers.push_back({c.x0, c.y0, c.x1, line - 1});
      chambers.push_back({c.x0, line + 1, c.x1, c.y1});
    }
  }
  return g;
}

// Greedy merge of wall cells into maximal rectangles (row-major scan).
inline std::vector<Rect> wall_rectangles(const MazeGrid &g, double cell) {
  std::vector<char> used(g.wall.size(), 0);
  std::vector<Rect> rects;
  auto idx = [&](int x, int y) { return static_cast<std::size_t>(y * g.n + x); };
  for (int y = 0; y < g.n; ++y)
    for (int x = 0; x < g.n; ++x) {
      if (!g.at(x, y) || used[idx(x, y)]) continue;
      int x2 = x;
      while (x2 + 1 < g.n && g.at(x2 + 1, y) && !used[idx(x2 + 1, y)]) ++x2;
      int y2 = y;
      for (;;) {
        if (y2 + 1 >= g.n) break;
        bool full = true;
        for (int k = x; k <= x2; ++k)
          if (!g.at(k, y2 + 1) || used[idx(k, y2 + 1)]) {
            full = false;
            break;
          }
        if (!full) break;
        ++y2;
      }
      for (int yy = y; yy <= y2; ++yy)
        for (int xx = x; xx <= x2; ++xx) used[idx(xx, yy)] = 1;
      rects.push_back(Rect{{x * cell, y * cell}, {(x2 + 1) * cell, (y2 + 1) * cell}});
    }
  return rects;
}

} // namespace detail

// Number of free cells reachable from (sx, sy) by 4-neighbour moves.
inline int flood_fill_count(const MazeGrid &g, int sx, int sy) {
  if (g.at(sx, sy)) return 0;
  std::vector<char> seen(g.wall.size(), 0);
  std::deque<std::pair<int, int>> q{{sx, sy}};
  seen[static_cast<std::size_t>(sy * g.n + sx)] = 1;
  int count = 0;
  while (!q.empty()) {
    auto [x, y] = q.front();
    q.pop_front();
    ++count;
    const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const int nx = x + dx[k], ny = y + dy[k];
      if (nx < 0 || ny < 0 || nx >= g.n || ny >= g.n || g.at(nx, ny)) continue;
      auto &s = seen[static_cast<std::size_t>(ny * g.n + nx)];
      if (!s) {
        s = 1;
        q.emplace_back(nx, ny);
      }
    }
  }
  return count;
}

struct Maze {
  WorldSpec world;
  MazeGrid grid;
};

// Rooms and corridors with randomly placed fruits and poisons; stage selects palette and
// edible size. Same (seed, stage) always yields the same maze.
inline Maze generate_maze_with_grid(const MazeGenConfig &cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(cfg.stage));
  MazeGrid grid = detail::carve_rooms(cfg, rng);

  int free_cells = 0, fx = -1, fy = -1;
  for (int y = 0; y < grid.n; ++y)
    for (int x = 0; x < grid.n; ++x)
      if (!grid.at(x, y)) {
        ++free_cells;
        if (fx < 0) fx = x, fy = y;
      }
  if (fx < 0 || flood_fill_count(grid, fx, fy) != free_cells)
    throw GenerationError("maze free space is not connected");

  const auto &pal = cfg.palettes[static_cast<std::size_t>(cfg.stage - 1)];
  const double size = cfg.grid * cfg.cell;
  WorldSpec w;
  w.name = "maze-s" + std::to_string(cfg.seed) + "-stage" + std::to_string(cfg.stage);
  w.width = w.height = size;
  w.episode_length = cfg.episode_length;
  w.vision.max_range = std::sqrt(2.0) * size;
  w.spawn = Rect{{cfg.cell, cfg.cell}, {size - cfg.cell, size - cfg.cell}};
  for (const auto &r : detail::wall_rectangles(grid, cfg.cell))
    w.entities.push_back(Entity{EntityKind::wall, EdibleClass::neutral, r, pal.wall});

  const double radius = cfg.edible_radius[static_cast<std::size_t>(cfg.stage - 1)];
  auto place = [&](EdibleClass cls, Color color) {
    auto c = detail::place_circle(w.entities, w.spawn, radius, 0.3, rng, cfg.placement_retries);
    w.entities.push_back(Entity{EntityKind::edible, cls, c, color});
  };
  for (int i = 0; i < cfg.fruits; ++i) place(EdibleClass::fruit, pal.fruit);
  for (int i = 0; i < cfg.poisons; ++i) place(EdibleClass::poison, pal.poison);
  validate(w);
  return Maze{std::move(w), std::move(grid)};
}

inline WorldSpec generate_maze(const MazeGenConfig &cfg) { return generate_maze_with_grid(cfg).world; }

// Three mazes of increasing stage for one sequence; maze k uses seed base_seed + k.
inline std::vector<WorldSpec> maze_sequence(std::uint64_t base_seed, MazeGenConfig cfg = {}) {
  std::vector<WorldSpec> seq;
  for (int stage = 1; stage <= 3; ++stage) {
    cfg.seed = base_seed * 7919 + static_cast<std::uint64_t>(stage);
    cfg.stage = stage;
    seq.push_back(generate_maze(cfg));
  }
  return seq;
}

} // namespace strigger::envsim
