#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "strigger/envsim/world.hpp"

namespace strigger::envsim {

// First-person 1-D RGB strip, 3 values per ray, interleaved r,g,b, left to right.
using Observation = std::vector<double>;

struct AgentPose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0; // radians in [0, 2pi)
};

enum class Action { forward = 0, turn_left = 1, turn_right = 2 };
inline constexpr std::size_t kActionCount = 3;

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  int consumed = 0; // edibles consumed so far this episode
};

// Nearest-hit raycast per ray; `consumed` masks edibles already eaten (may be empty).
inline Observation render_observation(const WorldSpec &world, const AgentPose &pose,
                                      std::span<const char> consumed = {}) {
  const auto &vis = world.vision;
  Observation obs(3 * vis.rays);
  const Vec2 origin{pose.x, pose.y};
  for (std::size_t i = 0; i < vis.rays; ++i) {
    const double offset = vis.fov / 2.0 - vis.fov * (static_cast<double>(i) + 0.5) /
                                              static_cast<double>(vis.rays);
    const double a = pose.heading + offset;
    const Vec2 dir{std::cos(a), std::sin(a)};
    double best = INFINITY;
    const Color *hit = nullptr;
    for (std::size_t k = 0; k < world.entities.size(); ++k) {
      if (!consumed.empty() && consumed[k]) continue;
      const double d = ray_hit(origin, dir, world.entities[k].geometry);
      if (d < best) {
        best = d;
        hit = &world.entities[k].color;
      }
    }
    Color c = vis.background;
    if (hit) {
      const double atten = std::clamp(1.0 - best / vis.max_range, 0.0, 1.0);
      c = Color{hit->r * atten, hit->g * atten, hit->b * atten};
    }
    obs[3 * i] = c.r;
    obs[3 * i + 1] = c.g;
    obs[3 * i + 2] = c.b;
  }
  return obs;
}

inline bool collides_with_solid(const WorldSpec &world, const Vec2 &p, double radius) {
  for (const auto &e : world.entities)
    if (e.solid() && disc_intersects(p, radius, e.geometry)) return true;
  return false;
}

// One episode of interaction with a world. Holds a copy of the world spec.
class Simulator {
public:
  explicit Simulator(WorldSpec world) : world_(std::move(world)) {
    validate(world_);
    consumed_.assign(world_.entities.size(), 0);
  }

  const WorldSpec &world() const { return world_; }
  const AgentPose &pose() const { return pose_; }
  int time() const { return t_; }
  int consumed_count() const { return eaten_; }
  std::span<const char> consumed_mask() const { return consumed_; }

  // Samples a spawn pose uniformly from the spawn region, clear of solids and edibles.
  Observation reset(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return reset(rng);
  }

  Observation reset(std::mt19937_64 &rng) {
    std::fill(consumed_.begin(), consumed_.end(), 0);
    t_ = 0;
    eaten_ = 0;
    pose_ = sample_spawn(rng);
    return observe();
  }

  // Places the agent explicitly; the pose must be collision-free.
  void set_pose(const AgentPose &pose) {
    if (collides_with_solid(world_, {pose.x, pose.y}, world_.body.radius))
      throw WorldError("set_pose: agent overlaps a solid entity");
    pose_ = pose;
    pose_.heading = wrap_angle(pose_.heading);
  }

  Observation observe() const { return render_observation(world_, pose_, consumed_); }

  // Applies the action without rendering; returns the reward.
  double act(Action action) {
    double reward = 0.0;
    switch (action) {
    case Action::turn_left: pose_.heading = wrap_angle(pose_.heading + world_.body.turn_step); break;
    case Action::turn_right: pose_.heading = wrap_angle(pose_.heading - world_.body.turn_step); break;
    case Action::forward: {
      const Vec2 next{pose_.x + world_.body.move_step * std::cos(pose_.heading),
                      pose_.y + world_.body.move_step * std::sin(pose_.heading)};
      if (!collides_with_solid(world_, next, world_.body.radius)) {
        pose_.x = next.x;
        pose_.y = next.y;
        reward = consume_overlapping();
      }
      break;
    }
    }
    ++t_;
    return reward;
  }

  StepResult step(Action action) {
    StepResult r;
    r.reward = act(action);
    r.done = done();
    r.consumed = eaten_;
    r.observation = observe();
    return r;
  }

  bool done() const { return t_ >= world_.episode_length; }

private:
  AgentPose sample_spawn(std::mt19937_64 &rng) const {
    const auto &s = world_.spawn;
    std::uniform_real_distribution<double> ux(s.lo.x, s.hi.x), uy(s.lo.y, s.hi.y),
        uh(0.0, 2.0 * std::numbers::pi);
    for (int attempt = 0; attempt < 10000; ++attempt) {
      AgentPose p{ux(rng), uy(rng), 0.0};
      p.heading = wrap_angle(uh(rng));
      bool clear = true;
      for (const auto &e : world_.entities)
        if (disc_intersects({p.x, p.y}, world_.body.radius, e.geometry)) {
          clear = false;
          break;
        }
      if (clear) return p;
    }
    throw WorldError("no collision-free spawn pose found in " + world_.name);
  }

  double consume_overlapping() {
    double reward = 0.0;
    for (std::size_t k = 0; k < world_.entities.size(); ++k) {
      const auto &e = world_.entities[k];
      if (e.kind != EntityKind::edible || consumed_[k]) continue;
      if (disc_intersects({pose_.x, pose_.y}, world_.body.radius, e.geometry)) {
        consumed_[k] = 1;
        ++eaten_;
        reward += world_.reward_for(e.edible_class);
      }
    }
    return reward;
  }

  WorldSpec world_;
  AgentPose pose_;
  std::vector<char> consumed_;
  int t_ = 0;
  int eaten_ = 0;
};

// `n` states gathered by a uniform-random policy. Every state comes from its own short
// episode: a fresh spawn followed by 0..max_steps random actions, so states are independent.
inline std::vector<Observation> collect_random_states(const WorldSpec &world, std::size_t n,
                                                      std::uint64_t seed, int max_steps = 12) {
  if (n == 0) throw WorldError("collect_random_states: n must be at least 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> steps(0, max_steps);
  std::uniform_int_distribution<int> action(0, static_cast<int>(kActionCount) - 1);
  Simulator sim(world);
  std::vector<Observation> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    sim.reset(rng);
    for (int s = steps(rng); s > 0; --s) sim.act(static_cast<Action>(action(rng)));
    out.push_back(sim.observe());
  }
  return out;
}

} // namespace strigger::envsim
