#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace strigger::envsim {

struct WorldError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2 &, const Vec2 &) = default;
};

struct Color {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  friend bool operator==(const Color &, const Color &) = default;
};

struct Circle {
  Vec2 center;
  double radius = 0.0;
  friend bool operator==(const Circle &, const Circle &) = default;
};

// Axis-aligned rectangle [lo.x, hi.x] x [lo.y, hi.y].
struct Rect {
  Vec2 lo;
  Vec2 hi;
  friend bool operator==(const Rect &, const Rect &) = default;
};

enum class EntityKind { wall, fixed_obstacle, round_obstacle, edible };
enum class EdibleClass { fruit, poison, neutral };

NLOHMANN_JSON_SERIALIZE_ENUM(EntityKind, {{EntityKind::wall, "wall"},
                                          {EntityKind::fixed_obstacle, "fixed_obstacle"},
                                          {EntityKind::round_obstacle, "round_obstacle"},
                                          {EntityKind::edible, "edible"}})
NLOHMANN_JSON_SERIALIZE_ENUM(EdibleClass, {{EdibleClass::fruit, "fruit"},
                                           {EdibleClass::poison, "poison"},
                                           {EdibleClass::neutral, "neutral"}})

using Geometry = std::variant<Circle, Rect>;

struct Entity {
  EntityKind kind = EntityKind::wall;
  EdibleClass edible_class = EdibleClass::neutral;
  Geometry geometry;
  Color color;

  bool solid() const { return kind != EntityKind::edible; }
  friend bool operator==(const Entity &, const Entity &) = default;
};

// Vision sensor: `rays` samples spread uniformly over `fov` radians.
struct Vision {
  std::size_t rays = 64;
  double fov = std::numbers::pi / 2.0;
  double max_range = 17.0;
  Color background{0.0, 0.0, 0.0};
  friend bool operator==(const Vision &, const Vision &) = default;
};

struct Body {
  double radius = 0.5;
  double move_step = 0.25;                       // half an agent radius per forward action
  double turn_step = 15.0 * std::numbers::pi / 180.0;
  friend bool operator==(const Body &, const Body &) = default;
};

struct WorldSpec {
  std::string name;
  double width = 0.0;
  double height = 0.0;
  std::vector<Entity> entities;
  Rect spawn;
  int episode_length = 500;
  std::map<EdibleClass, double> rewards{{EdibleClass::fruit, 10.0},
                                        {EdibleClass::poison, -10.0},
                                        {EdibleClass::neutral, 0.0}};
  Vision vision;
  Body body;

  std::size_t observation_size() const { return 3 * vision.rays; }
  double reward_for(EdibleClass c) const {
    auto it = rewards.find(c);
    return it == rewards.end() ? 0.0 : it->second;
  }
  friend bool operator==(const WorldSpec &, const WorldSpec &) = default;
};

// ---- geometry --------------------------------------------------------------

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0.0) a += two_pi;
  if (a >= two_pi) a -= two_pi;
  return a;
}

inline bool disc_intersects(const Vec2 &c, double r, const Circle &o) {
  const double dx = c.x - o.center.x, dy = c.y - o.center.y;
  const double rr = r + o.radius;
  return dx * dx + dy * dy < rr * rr;
}

inline bool disc_intersects(const Vec2 &c, double r, const Rect &o) {
  const double px = std::clamp(c.x, o.lo.x, o.hi.x);
  const double py = std::clamp(c.y, o.lo.y, o.hi.y);
  const double dx = c.x - px, dy = c.y - py;
  return dx * dx + dy * dy < r * r;
}

inline bool disc_intersects(const Vec2 &c, double r, const Geometry &g) {
  return std::visit([&](const auto &shape) { return disc_intersects(c, r, shape); }, g);
}

// Distance along a unit-direction ray to the first hit, or +inf.
inline double ray_hit(const Vec2 &o, const Vec2 &d, const Circle &c) {
  const double fx = o.x - c.center.x, fy = o.y - c.center.y;
  const double b = fx * d.x + fy * d.y;
  const double cc = fx * fx + fy * fy - c.radius * c.radius;
  const double disc = b * b - cc;
  if (disc < 0.0) return INFINITY;
  const double s = std::sqrt(disc);
  const double t0 = -b - s;
  if (t0 >= 0.0) return t0;
  const double t1 = -b + s;
  return t1 >= 0.0 ? 0.0 : INFINITY; // origin inside the circle
}

inline double ray_hit(const Vec2 &o, const Vec2 &d, const Rect &r) {
  double tmin = 0.0, tmax = INFINITY;
  const double os[2] = {o.x, o.y}, ds[2] = {d.x, d.y};
  const double lo[2] = {r.lo.x, r.lo.y}, hi[2] = {r.hi.x, r.hi.y};
  for (int a = 0; a < 2; ++a) {
    if (std::abs(ds[a]) < 1e-15) {
      if (os[a] < lo[a] || os[a] > hi[a]) return INFINITY;
    } else {
      double t1 = (lo[a] - os[a]) / ds[a];
      double t2 = (hi[a] - os[a]) / ds[a];
      if (t1 > t2) std::swap(t1, t2);
      tmin = std::max(tmin, t1);
      tmax = std::min(tmax, t2);
      if (tmin > tmax) return INFINITY;
    }
  }
  return tmin;
}

inline double ray_hit(const Vec2 &o, const Vec2 &d, const Geometry &g) {
  return std::visit([&](const auto &shape) { return ray_hit(o, d, shape); }, g);
}

inline bool inside_arena(const Geometry &g, double width, double height) {
  constexpr double tol = 1e-9;
  if (const auto *c = std::get_if<Circle>(&g))
    return c->center.x - c->radius >= -tol && c->center.x + c->radius <= width + tol &&
           c->center.y - c->radius >= -tol && c->center.y + c->radius <= height + tol;
  const auto &r = std::get<Rect>(g);
  return r.lo.x >= -tol && r.lo.y >= -tol && r.hi.x <= width + tol && r.hi.y <= height + tol;
}

inline void validate(const WorldSpec &w) {
  if (!(w.width > 0.0) || !(w.height > 0.0)) throw WorldError("arena must have positive size");
  if (w.episode_length < 1) throw WorldError("episode length must be at least 1");
  if (w.vision.rays == 0) throw WorldError("vision needs at least one ray");
  for (std::size_t i = 0; i < w.entities.size(); ++i) {
    const auto &e = w.entities[i];
    const auto where = " (entity " + std::to_string(i) + ")";
    if (const auto *c = std::get_if<Circle>(&e.geometry)) {
      if (!(c->radius > 0.0)) throw WorldError("circle radius must be positive" + where);
    } else {
      const auto &r = std::get<Rect>(e.geometry);
      if (!(r.hi.x > r.lo.x) || !(r.hi.y > r.lo.y))
        throw WorldError("rectangle must have positive extent" + where);
      if (e.kind == EntityKind::edible) throw WorldError("edibles must be circles" + where);
    }
    if (!inside_arena(e.geometry, w.width, w.height)) throw WorldError("entity outside arena" + where);
    for (double ch : {e.color.r, e.color.g, e.color.b})
      if (ch < 0.0 || ch > 1.0) throw WorldError("color channel outside [0, 1]" + where);
  }
}

// ---- JSON ------------------------------------------------------------------

inline void to_json(nlohmann::json &j, const Vec2 &v) { j = {v.x, v.y}; }
inline void from_json(const nlohmann::json &j, Vec2 &v) { v = {j.at(0).get<double>(), j.at(1).get<double>()}; }
inline void to_json(nlohmann::json &j, const Color &c) { j = {c.r, c.g, c.b}; }
inline void from_json(const nlohmann::json &j, Color &c) {
  c = {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}
inline void to_json(nlohmann::json &j, const Rect &r) { j = {{"lo", r.lo}, {"hi", r.hi}}; }
inline void from_json(const nlohmann::json &j, Rect &r) { r = {j.at("lo").get<Vec2>(), j.at("hi").get<Vec2>()}; }

inline void to_json(nlohmann::json &j, const Entity &e) {
  j = {{"kind", e.kind}, {"edible_class", e.edible_class}, {"color", e.color}};
  if (const auto *c = std::get_if<Circle>(&e.geometry))
    j["circle"] = {{"center", c->center}, {"radius", c->radius}};
  else
    j["rect"] = std::get<Rect>(e.geometry);
}

inline void from_json(const nlohmann::json &j, Entity &e) {
  e.kind = j.at("kind").get<EntityKind>();
  e.edible_class = j.value("edible_class", EdibleClass::neutral);
  e.color = j.at("color").get<Color>();
  if (j.contains("circle"))
    e.geometry = Circle{j["circle"].at("center").get<Vec2>(), j["circle"].at("radius").get<double>()};
  else
    e.geometry = j.at("rect").get<Rect>();
}

inline void to_json(nlohmann::json &j, const WorldSpec &w) {
  nlohmann::json rewards = nlohmann::json::object();
  for (const auto &[k, v] : w.rewards) rewards[nlohmann::json(k).get<std::string>()] = v;
  j = {{"name", w.name},
       {"arena", {{"width", w.width}, {"height", w.height}}},
       {"entities", w.entities},
       {"spawn", w.spawn},
       {"episode_length", w.episode_length},
       {"rewards", rewards},
       {"vision",
        {{"rays", w.vision.rays},
         {"fov", w.vision.fov},
         {"max_range", w.vision.max_range},
         {"background", w.vision.background}}},
       {"body",
        {{"radius", w.body.radius}, {"move_step", w.body.move_step}, {"turn_step", w.body.turn_step}}}};
}

inline void from_json(const nlohmann::json &j, WorldSpec &w) {
  w.name = j.value("name", std::string{});
  w.width = j.at("arena").at("width").get<double>();
  w.height = j.at("arena").at("height").get<double>();
  w.entities = j.at("entities").get<std::vector<Entity>>();
  w.spawn = j.at("spawn").get<Rect>();
  w.episode_length = j.value("episode_length", 500);
  w.rewards.clear();
  for (const auto &[k, v] : j.at("rewards").items())
    w.rewards[nlohmann::json(k).get<EdibleClass>()] = v.get<double>();
  const auto &vis = j.at("vision");
  w.vision = Vision{vis.at("rays").get<std::size_t>(), vis.at("fov").get<double>(),
                    vis.at("max_range").get<double>(), vis.at("background").get<Color>()};
  const auto &body = j.at("body");
  w.body = Body{body.at("radius").get<double>(), body.at("move_step").get<double>(),
                body.at("turn_step").get<double>()};
  validate(w);
}

} // namespace strigger::envsim
