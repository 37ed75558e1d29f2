#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rda/cot.hpp"
#include "rda/planeval.hpp"
#include "rda/sample.hpp"
#include "rda/types.hpp"

namespace rda::data {

// ---- kinematics -----------------------------------------------------------------

// Straight-line travel under constant acceleration, holding at rest once
// stopped.
inline double travelled(double v, double a, double t) {
  if (a < 0 && v + a * t <= 0) return v * v / (-2 * a);
  return v * t + 0.5 * a * t * t;
}

inline Trajectory straight_plan(double v, double a) {
  Trajectory t;
  for (std::size_t i = 1; i <= kWaypoints; ++i) t.points.push_back({travelled(v, a, kWaypointDt * i), 0.0});
  return t;
}

// Arc at constant speed. sign +1 turns left.
inline Trajectory arc_plan(double v, double radius, double sign) {
  Trajectory t;
  for (std::size_t i = 1; i <= kWaypoints; ++i) {
    const double phi = v * kWaypointDt * i / radius;
    t.points.push_back({radius * std::sin(phi), sign * radius * (1 - std::cos(phi))});
  }
  return t;
}

inline std::array<Waypoint, 3> straight_history(double v, double a) {
  std::array<Waypoint, 3> h;
  for (std::size_t i = 0; i < 3; ++i) {
    const double tau = kWaypointDt * static_cast<double>(3 - i);
    h[i] = {-(v * tau - 0.5 * a * tau * tau), 0.0};
  }
  return h;
}

inline std::array<Waypoint, 3> arc_history(double v, double radius, double sign) {
  std::array<Waypoint, 3> h;
  for (std::size_t i = 0; i < 3; ++i) {
    const double phi = v * kWaypointDt * static_cast<double>(3 - i) / radius;
    h[i] = {-radius * std::sin(phi), sign * radius * (1 - std::cos(phi))};
  }
  return h;
}

inline constexpr double kEgoHalfLength = 4.084 / 2;
inline constexpr double kStopMargin = 1.0;

// Deceleration that comes to rest within `room` metres and within 2.5 s.
inline double stop_decel(double v, double room) { return std::min(-v * v / (2 * std::max(room, 0.5)), -v / 2.5); }

// ---- world -------------------------------------------------------------------------

struct WorldConfig {
  std::uint64_t seed = 7;
  std::size_t n_scenes = 256;  // number of samples; two timestamps per scene
};

inline constexpr double kLeadStopRange = 12.0;  // stopped lead within this many metres → stop

namespace detail {

struct Rng {
  std::mt19937_64 eng;
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }
};

inline double r2(double v) { return round2(v); }

inline ObjectBox car(double x, double y, double yaw = 0.0, double vx = 0.0, double vy = 0.0) {
  return ObjectBox{r2(x), r2(y), 4.5, 1.9, yaw, r2(vx), r2(vy), ObjectClass::car};
}

inline ObjectBox pedestrian(double x, double y, double vy) {
  return ObjectBox{r2(x), r2(y), 0.6, 0.6, 0.0, 0.0, r2(vy), ObjectClass::pedestrian};
}

inline ObjectBox light(double x, double y, bool red) {
  return ObjectBox{r2(x), r2(y), 0.5, 0.5, 0.0, 0.0, 0.0, red ? ObjectClass::red_light : ObjectClass::green_light};
}

// One timestamp before annotation text is attached.
struct Frame {
  std::vector<ObjectBox> objects;  // main object (if any) first
  EgoStatus ego;
  Trajectory plan;
  Annotation annotation;
};

inline EgoStatus quantized_ego(EgoStatus e) { return cot::quantized(e); }

inline void add_roadside_keys(Frame& f, std::size_t first_clutter) {
  for (std::size_t i = first_clutter; i < f.objects.size() && f.annotation.key_objects.size() < 3; ++i) {
    const auto& o = f.objects[i];
    if (o.x > 0 && o.x < 25 && std::abs(o.y) < 8) {
      f.annotation.key_objects.push_back({i, ObjectState::parked_roadside, ObjectAdvice::keep_going});
    }
  }
}

// Builds both timestamps of one scene. Returns false when the draw should be
// rejected.
inline bool build_scene(Scenario sc, Rng& rng, std::array<Frame, 2>& out) {
  // Parked cars beside the road, shared by both timestamps.
  std::vector<ObjectBox> clutter;
  const int n_clutter = rng.integer(0, 3);
  for (int i = 0; i < n_clutter; ++i) {
    const double side = rng.coin() ? 1.0 : -1.0;
    clutter.push_back(car(rng.uniform(-12.0, 24.0), side * rng.uniform(4.8, 7.0), rng.uniform(-0.1, 0.1)));
  }
  const double gap = 1.0;  // seconds between the two timestamps
  double v0 = 0, d0 = 0, d1 = 0, vl = 0, side = 1, dir = 1, radius = 10;
  const double lat = rng.uniform(-0.3, 0.3);  // lateral offset of an in-lane object

  for (int k = 0; k < 2; ++k) {
    Frame& f = out[k];
    f = Frame{};
    double v = 0, a = 0, a_prev = 0;
    switch (sc) {
      case Scenario::cruise: {
        if (k == 0) v0 = rng.uniform(3.0, 10.0);
        v = k == 0 ? v0 : v0 + (v0 < 5.0 ? 1.0 : 0.0) * gap;
        a_prev = k == 0 ? 0.0 : (v0 < 5.0 ? 1.0 : 0.0);
        const bool slow = v < 5.0;
        a = slow ? 1.0 : 0.0;
        f.plan = straight_plan(v, a);
        f.annotation = {sc, {Direction::forward, slow ? Speed::accelerate : Speed::keep}, {}};
        break;
      }
      case Scenario::stopped_lead: {
        if (k == 0) {
          v0 = rng.uniform(4.5, 9.0);
          d1 = rng.uniform(9.0, kLeadStopRange);
        }
        const double d = k == 0 ? d1 + v0 * gap - 0.5 * 1.5 * gap * gap : d1;
        v = k == 0 ? v0 : v0 - 1.5 * gap;
        a_prev = k == 0 ? 0.0 : -1.5;
        const double room = d - 4.5 / 2 - kEgoHalfLength - kStopMargin;
        f.objects.push_back(car(d, lat));
        if (d <= kLeadStopRange) {
          a = stop_decel(v, room);
          f.annotation = {sc, {Direction::forward, Speed::stop}, {{0, ObjectState::stopped_in_lane, ObjectAdvice::stop}}};
        } else {
          a = std::min(-1.5, -v * v / (2 * room) * 0.8);
          f.annotation = {sc,
                          {Direction::forward, Speed::decelerate},
                          {{0, ObjectState::stopped_in_lane, ObjectAdvice::decelerate}}};
        }
        f.plan = straight_plan(v, a);
        break;
      }
      case Scenario::decelerating_lead: {
        if (k == 0) {
          v0 = rng.uniform(6.0, 9.5);
          vl = rng.uniform(1.0, 3.5);
          d0 = rng.uniform(13.0, 20.0);
        }
        v = k == 0 ? v0 : v0 - 1.0 * gap;
        a_prev = k == 0 ? 0.0 : -1.0;
        const double d = k == 0 ? d0 : d0 - (v0 - 0.5) * gap + vl * gap;
        // match the lead's speed over 2.5 s, then follow it
        const double tm = 2.5;
        a = -(v - vl) / tm;
        f.objects.push_back(car(d, lat, 0.0, vl));
        f.plan = straight_plan(v, a);
        for (std::size_t i = 0; i < kWaypoints; ++i) {
          const double t = kWaypointDt * static_cast<double>(i + 1);
          f.plan[i].x = t <= tm ? v * t + 0.5 * a * t * t : v * tm + 0.5 * a * tm * tm + vl * (t - tm);
        }
        f.annotation = {sc,
                        {Direction::forward, Speed::decelerate},
                        {{0, ObjectState::slower_in_lane, ObjectAdvice::decelerate}}};
        break;
      }
      case Scenario::signal: {
        if (k == 0) {
          v0 = rng.uniform(4.0, 9.0);
          d0 = rng.uniform(13.0, 22.0);
          side = rng.coin() ? 1.0 : -1.0;
        }
        const bool red = k == 0;
        v = k == 0 ? v0 : std::max(2.0, v0 - 1.5 * gap);
        a_prev = k == 0 ? 0.0 : -1.5;
        const double d = k == 0 ? d0 : d0 - (v0 - 0.75) * gap;
        f.objects.push_back(light(d, side * 3.0, red));
        if (red) {
          a = stop_decel(v, d - kEgoHalfLength - kStopMargin);
          f.annotation = {sc, {Direction::forward, Speed::stop}, {{0, ObjectState::red_light, ObjectAdvice::stop}}};
        } else {
          a = 0.0;
          f.annotation = {sc, {Direction::forward, Speed::keep}, {{0, ObjectState::green_light, ObjectAdvice::keep_going}}};
        }
        f.plan = straight_plan(v, a);
        break;
      }
      case Scenario::pedestrian_crossing: {
        if (k == 0) {
          v0 = rng.uniform(4.0, 8.0);
          d0 = rng.uniform(11.0, 17.0);
          dir = rng.coin() ? 1.0 : -1.0;
        }
        v = k == 0 ? v0 : std::max(1.5, v0 - 2.0 * gap);
        a_prev = k == 0 ? 0.0 : -2.0;
        const double d = k == 0 ? d0 : d0 - (v0 - 1.0) * gap;
        if (k == 0) {
          f.objects.push_back(pedestrian(d, -dir * rng.uniform(0.0, 1.5), dir * 1.2));
          a = stop_decel(v, d - 0.3 - kEgoHalfLength - kStopMargin);
          f.annotation = {sc,
                          {Direction::forward, Speed::stop},
                          {{0, ObjectState::crossing_pedestrian, ObjectAdvice::stop}}};
        } else {
          f.objects.push_back(pedestrian(d, dir * rng.uniform(3.8, 5.0), dir * 1.2));
          a = 0.0;
          f.annotation = {sc,
                          {Direction::forward, Speed::keep},
                          {{0, ObjectState::leaving_pedestrian, ObjectAdvice::keep_going}}};
        }
        f.plan = straight_plan(v, a);
        break;
      }
      case Scenario::left_turn:
      case Scenario::right_turn: {
        if (k == 0) {
          v0 = rng.uniform(3.5, 6.5);
          radius = rng.uniform(9.0, 16.0);
        }
        const double sign = sc == Scenario::left_turn ? 1.0 : -1.0;
        v = v0;
        f.plan = arc_plan(v, radius, sign);
        f.ego.yaw_rate = sign * v / radius;
        f.ego.history = arc_history(v, radius, sign);
        f.annotation = {sc, {sc == Scenario::left_turn ? Direction::left_turn : Direction::right_turn, Speed::keep}, {}};
        break;
      }
    }
    // clutter drifts backwards with the ego between timestamps
    const double shift = k == 0 ? 0.0 : out[0].ego.velocity * gap;
    const std::size_t first_clutter = f.objects.size();
    for (auto c : clutter) {
      c.x = r2(c.x - shift);
      f.objects.push_back(c);
    }
    f.ego.velocity = v;
    f.ego.acceleration = a_prev;
    if (sc != Scenario::left_turn && sc != Scenario::right_turn) f.ego.history = straight_history(v, a_prev);
    f.ego = quantized_ego(f.ego);
    f.plan = quantized(f.plan);
    add_roadside_keys(f, first_clutter);
    if (!std::all_of(f.plan.points.begin(), f.plan.points.end(),
                     [](const Waypoint& w) { return std::isfinite(w.x) && std::isfinite(w.y); })) {
      return false;
    }
    if (v <= 0) return false;
    const auto hits = plan::waypoint_collisions(f.plan, f.objects, plan::EgoDims{});
    if (std::any_of(hits.begin(), hits.end(), [](bool b) { return b; })) return false;
  }
  return true;
}

}  // namespace detail

inline SceneSample make_sample(int scene_id, int t, const detail::Frame& f) {
  SceneSample s;
  s.scene_id = scene_id;
  s.timestamp_index = t;
  s.objects = f.objects;
  s.ego_status = f.ego;
  s.gt_trajectory = f.plan;
  s.annotation = f.annotation;
  const auto prompts = cot::build_prompt_turns();
  const auto responses = cot::gt_responses(s);
  for (std::size_t i = 0; i < cot::kTurns; ++i) s.cot.emplace_back(prompts[i], responses[i]);
  return s;
}

inline constexpr std::array<Scenario, 7> kScenarios = {
    Scenario::cruise,    Scenario::stopped_lead, Scenario::decelerating_lead, Scenario::signal,
    Scenario::pedestrian_crossing, Scenario::left_turn, Scenario::right_turn};

// n_scenes samples, built scene by scene (two timestamps each).
inline std::vector<SceneSample> gen_world(std::uint64_t seed, std::size_t n_scenes) {
  if (n_scenes < 1) throw std::invalid_argument("n_scenes must be at least 1");
  detail::Rng rng{std::mt19937_64(seed)};
  std::vector<SceneSample> out;
  int scene = 0;
  while (out.size() < n_scenes) {
    const Scenario sc = kScenarios[static_cast<std::size_t>(rng.integer(0, 6))];
    std::array<detail::Frame, 2> frames;
    int attempts = 0;
    while (!detail::build_scene(sc, rng, frames)) {
      if (++attempts > 1000) throw std::runtime_error("world generator failed to place a collision-free scene");
    }
    for (int t = 0; t < 2 && out.size() < n_scenes; ++t) out.push_back(make_sample(scene, t, frames[t]));
    ++scene;
  }
  return out;
}

// ---- split -----------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// 80/20 split keyed on scene id so both timestamps land on the same side.
inline bool is_validation(int scene_id) { return splitmix64(static_cast<std::uint64_t>(scene_id)) % 5 == 0; }

inline std::vector<SceneSample> split(const std::vector<SceneSample>& all, bool validation) {
  std::vector<SceneSample> out;
  for (const auto& s : all) {
    if (is_validation(s.scene_id) == validation) out.push_back(s);
  }
  return out;
}

// ---- JSONL ----------------------------------------------------------------------------

using nlohmann::json;
using ojson = nlohmann::ordered_json;

inline ojson xy(const Waypoint& w) { return ojson::array({w.x, w.y}); }
inline Waypoint waypoint_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("waypoint must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline ojson trajectory_json(const Trajectory& t) {
  ojson a = ojson::array();
  for (const auto& w : t.points) a.push_back(xy(w));
  return a;
}

inline Trajectory trajectory_from(const json& j) {
  Trajectory t;
  for (const auto& w : j) t.points.push_back(waypoint_from(w));
  return t;
}

inline ojson ego_json(const EgoStatus& e) {
  ojson j;
  j["v"] = e.velocity;
  j["yaw_rate"] = e.yaw_rate;
  j["a"] = e.acceleration;
  j["history"] = ojson::array({xy(e.history[0]), xy(e.history[1]), xy(e.history[2])});
  return j;
}

inline EgoStatus ego_from(const json& j) {
  EgoStatus e;
  e.velocity = j.at("v").get<double>();
  e.yaw_rate = j.at("yaw_rate").get<double>();
  e.acceleration = j.at("a").get<double>();
  const auto& h = j.at("history");
  if (h.size() != 3) throw std::invalid_argument("ego history must hold 3 waypoints");
  for (std::size_t i = 0; i < 3; ++i) e.history[i] = waypoint_from(h[i]);
  return e;
}

inline std::string_view state_name(ObjectState s) {
  switch (s) {
    case ObjectState::stopped_in_lane: return "stopped_in_lane";
    case ObjectState::slower_in_lane: return "slower_in_lane";
    case ObjectState::parked_roadside: return "parked_roadside";
    case ObjectState::red_light: return "red_light";
    case ObjectState::green_light: return "green_light";
    case ObjectState::crossing_pedestrian: return "crossing_pedestrian";
    case ObjectState::leaving_pedestrian: return "leaving_pedestrian";
  }
  return "";
}

inline ObjectState state_from(std::string_view s) {
  for (auto st : {ObjectState::stopped_in_lane, ObjectState::slower_in_lane, ObjectState::parked_roadside,
                  ObjectState::red_light, ObjectState::green_light, ObjectState::crossing_pedestrian,
                  ObjectState::leaving_pedestrian}) {
    if (state_name(st) == s) return st;
  }
  throw std::invalid_argument("unknown object state '" + std::string(s) + "'");
}

inline std::string_view advice_name(ObjectAdvice a) {
  switch (a) {
    case ObjectAdvice::stop: return "stop";
    case ObjectAdvice::decelerate: return "decelerate";
    case ObjectAdvice::keep_going: return "keep_going";
  }
  return "";
}

inline ObjectAdvice advice_from(std::string_view s) {
  for (auto a : {ObjectAdvice::stop, ObjectAdvice::decelerate, ObjectAdvice::keep_going}) {
    if (advice_name(a) == s) return a;
  }
  throw std::invalid_argument("unknown object advice '" + std::string(s) + "'");
}

inline ojson sample_json(const SceneSample& s) {
  ojson j;
  j["scene_id"] = s.scene_id;
  j["t"] = s.timestamp_index;
  j["ego_status"] = ego_json(s.ego_status);
  ojson objs = ojson::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"x", o.x}, {"y", o.y}, {"l", o.length}, {"w", o.width}, {"yaw", o.yaw}, {"vx", o.vx},
                    {"vy", o.vy}, {"class", std::string(to_string(o.cls))}});
  }
  j["objects"] = objs;
  ojson turns = ojson::array();
  for (const auto& [p, r] : s.cot) turns.push_back(ojson::array({p, r}));
  j["cot"] = turns;
  j["gt_traj"] = trajectory_json(s.gt_trajectory);
  if (s.annotation) {
    const auto& a = *s.annotation;
    ojson keys = ojson::array();
    for (const auto& k : a.key_objects) {
      keys.push_back({{"object", k.object_index}, {"state", std::string(state_name(k.state))},
                      {"advice", std::string(advice_name(k.advice))}});
    }
    j["annotation"] = {{"scenario", std::string(to_string(a.scenario))},
                       {"direction", std::string(to_string(a.decision.direction))},
                       {"speed", std::string(to_string(a.decision.speed))},
                       {"key_objects", keys}};
  }
  return j;
}

inline SceneSample sample_from(const json& j) {
  SceneSample s;
  s.scene_id = j.at("scene_id").get<int>();
  s.timestamp_index = j.at("t").get<int>();
  s.ego_status = ego_from(j.at("ego_status"));
  for (const auto& o : j.at("objects")) {
    s.objects.push_back(ObjectBox{o.at("x").get<double>(), o.at("y").get<double>(), o.at("l").get<double>(),
                                  o.at("w").get<double>(), o.at("yaw").get<double>(), o.at("vx").get<double>(),
                                  o.at("vy").get<double>(), object_class_from_string(o.at("class").get<std::string>())});
  }
  for (const auto& t : j.at("cot")) s.cot.emplace_back(t.at(0).get<std::string>(), t.at(1).get<std::string>());
  if (s.cot.size() != cot::kTurns) throw std::invalid_argument("cot must hold 6 turns");
  s.gt_trajectory = trajectory_from(j.at("gt_traj"));
  if (s.gt_trajectory.size() != kWaypoints) throw std::invalid_argument("gt_traj must hold 6 waypoints");
  if (j.contains("annotation")) {
    const auto& a = j["annotation"];
    Annotation ann;
    ann.scenario = scenario_from_string(a.at("scenario").get<std::string>());
    ann.decision = {direction_from_string(a.at("direction").get<std::string>()),
                    speed_from_string(a.at("speed").get<std::string>())};
    for (const auto& k : a.at("key_objects")) {
      ann.key_objects.push_back({k.at("object").get<std::size_t>(), state_from(k.at("state").get<std::string>()),
                                 advice_from(k.at("advice").get<std::string>())});
    }
    s.annotation = ann;
  }
  return s;
}

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_jsonl(const std::string& path, const std::vector<ojson>& lines) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  for (const auto& l : lines) os << l.dump() << '\n';
  if (!os) throw IoError("write failed for " + path);
}

inline std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline void save_world(const std::string& path, const std::vector<SceneSample>& samples) {
  std::vector<ojson> lines;
  lines.reserve(samples.size());
  for (const auto& s : samples) lines.push_back(sample_json(s));
  write_jsonl(path, lines);
}

inline std::vector<SceneSample> load_world(const std::string& path) {
  std::vector<SceneSample> out;
  for (const auto& j : read_jsonl(path)) out.push_back(sample_from(j));
  return out;
}

// ---- data-based pairs --------------------------------------------------------------

enum class Provenance { model_based, positive, negative_cot, negative_answer, negative_both };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::model_based: return "model_based";
    case Provenance::positive: return "data_based_positive";
    case Provenance::negative_cot: return "data_based_negative_cot";
    case Provenance::negative_answer: return "data_based_negative_answer";
    case Provenance::negative_both: return "data_based_negative_both";
  }
  return "";
}

inline Provenance provenance_from(std::string_view s) {
  for (auto p : {Provenance::model_based, Provenance::positive, Provenance::negative_cot, Provenance::negative_answer,
                 Provenance::negative_both}) {
    if (to_string(p) == s) return p;
  }
  throw std::invalid_argument("unknown provenance '" + std::string(s) + "'");
}

// Visual input and ego status always come from the base sample; the five
// reasoning responses and the plan may come from its partner.
struct DataTuple {
  Provenance provenance = Provenance::positive;
  std::string cot_from;
  std::string answer_from;
  std::vector<std::string> responses;  // 6 stage responses
  friend bool operator==(const DataTuple&, const DataTuple&) = default;
};

struct DataBasedSet {
  DataTuple positive;
  std::vector<DataTuple> negatives;
  friend bool operator==(const DataBasedSet&, const DataBasedSet&) = default;
};

class PairError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::vector<std::string> responses_of(const SceneSample& s) {
  std::vector<std::string> r;
  for (const auto& [p, resp] : s.cot) r.push_back(resp);
  return r;
}

inline DataTuple make_tuple(Provenance p, const SceneSample& cot_src, const SceneSample& ans_src) {
  DataTuple t{p, cot_src.sample_id(), ans_src.sample_id(), responses_of(cot_src)};
  t.responses[cot::kTurns - 1] = responses_of(ans_src)[cot::kTurns - 1];
  return t;
}

inline DataBasedSet permute_negatives(const SceneSample& u, const SceneSample& v) {
  if (u.scene_id != v.scene_id) throw PairError("samples come from different scenes");
  if (u.timestamp_index == v.timestamp_index) throw PairError("samples share a timestamp");
  if (!u.annotation || !v.annotation) throw PairError("samples lack decision labels");
  if (u.annotation->decision == v.annotation->decision) throw PairError("samples share the same decision");
  DataBasedSet set;
  set.positive = make_tuple(Provenance::positive, u, u);
  set.negatives = {make_tuple(Provenance::negative_cot, v, u), make_tuple(Provenance::negative_answer, u, v),
                   make_tuple(Provenance::negative_both, v, v)};
  return set;
}

inline ojson tuple_json(const DataTuple& t) {
  return {{"provenance", std::string(to_string(t.provenance))},
          {"cot_from", t.cot_from},
          {"answer_from", t.answer_from},
          {"responses", t.responses}};
}

inline DataTuple tuple_from(const json& j) {
  DataTuple t;
  t.provenance = provenance_from(j.at("provenance").get<std::string>());
  t.cot_from = j.at("cot_from").get<std::string>();
  t.answer_from = j.at("answer_from").get<std::string>();
  t.responses = j.at("responses").get<std::vector<std::string>>();
  if (t.responses.size() != cot::kTurns) throw std::invalid_argument("data tuple must hold 6 responses");
  return t;
}

// Partner lookup: the other timestamps of the same scene with a different
// decision, in timestamp order.
inline std::vector<std::size_t> partners(const std::vector<SceneSample>& samples, std::size_t i) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < samples.size(); ++j) {
    if (j == i || samples[j].scene_id != samples[i].scene_id) continue;
    if (samples[j].timestamp_index == samples[i].timestamp_index) continue;
    if (!samples[i].annotation || !samples[j].annotation) continue;
    if (samples[j].annotation->decision == samples[i].annotation->decision) continue;
    out.push_back(j);
  }
  return out;
}

// Fraction of scenes with two timestamps whose decisions differ.
inline double differing_scene_fraction(const std::vector<SceneSample>& samples) {
  std::map<int, std::vector<Decision>> by_scene;
  for (const auto& s : samples) {
    if (s.annotation) by_scene[s.scene_id].push_back(s.annotation->decision);
  }
  std::size_t differing = 0;
  for (const auto& [id, ds] : by_scene) {
    if (ds.size() >= 2 && std::any_of(ds.begin(), ds.end(), [&](const Decision& d) { return !(d == ds[0]); })) {
      ++differing;
    }
  }
  return by_scene.empty() ? 0.0 : static_cast<double>(differing) / static_cast<double>(by_scene.size());
}

}  // namespace rda::data
