#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rda/tokenizer.hpp"
#include "rda/types.hpp"

namespace rda {

enum class Direction { forward, left_turn, right_turn };
enum class Speed { stop, decelerate, keep, accelerate };

struct Decision {
  Direction direction = Direction::forward;
  Speed speed = Speed::keep;
  friend bool operator==(const Decision&, const Decision&) = default;
};

inline std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::forward: return "forward";
    case Direction::left_turn: return "left-turn";
    case Direction::right_turn: return "right-turn";
  }
  return "forward";
}

inline std::string_view to_string(Speed s) {
  switch (s) {
    case Speed::stop: return "stop";
    case Speed::decelerate: return "decelerate";
    case Speed::keep: return "keep";
    case Speed::accelerate: return "accelerate";
  }
  return "keep";
}

inline Direction direction_from_string(std::string_view s) {
  if (s == "forward") return Direction::forward;
  if (s == "left-turn") return Direction::left_turn;
  if (s == "right-turn") return Direction::right_turn;
  throw std::invalid_argument("unknown direction '" + std::string(s) + "'");
}

inline Speed speed_from_string(std::string_view s) {
  if (s == "stop") return Speed::stop;
  if (s == "decelerate") return Speed::decelerate;
  if (s == "keep") return Speed::keep;
  if (s == "accelerate") return Speed::accelerate;
  throw std::invalid_argument("unknown speed class '" + std::string(s) + "'");
}

enum class Scenario {
  cruise,
  stopped_lead,
  decelerating_lead,
  signal,
  pedestrian_crossing,
  left_turn,
  right_turn,
};

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::cruise: return "cruise";
    case Scenario::stopped_lead: return "stopped_lead";
    case Scenario::decelerating_lead: return "decelerating_lead";
    case Scenario::signal: return "signal";
    case Scenario::pedestrian_crossing: return "pedestrian_crossing";
    case Scenario::left_turn: return "left_turn";
    case Scenario::right_turn: return "right_turn";
  }
  return "cruise";
}

inline Scenario scenario_from_string(std::string_view s) {
  for (Scenario c : {Scenario::cruise, Scenario::stopped_lead, Scenario::decelerating_lead, Scenario::signal,
                     Scenario::pedestrian_crossing, Scenario::left_turn, Scenario::right_turn}) {
    if (to_string(c) == s) return c;
  }
  throw std::invalid_argument("unknown scenario '" + std::string(s) + "'");
}

// What the rule table says about one noticed object.
enum class ObjectState {
  stopped_in_lane,
  slower_in_lane,
  parked_roadside,
  red_light,
  green_light,
  crossing_pedestrian,
  leaving_pedestrian,
};

enum class ObjectAdvice { stop, decelerate, keep_going };

struct KeyObject {
  std::size_t object_index = 0;  // into SceneSample::objects
  ObjectState state = ObjectState::parked_roadside;
  ObjectAdvice advice = ObjectAdvice::keep_going;
  friend bool operator==(const KeyObject&, const KeyObject&) = default;
};

// Rule-table labels behind the CoT responses.
struct Annotation {
  Scenario scenario = Scenario::cruise;
  Decision decision;
  std::vector<KeyObject> key_objects;  // most important first, at most 3
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

// One annotated frame of the synthetic world.
struct SceneSample {
  int scene_id = 0;
  int timestamp_index = 0;
  std::vector<ObjectBox> objects;
  EgoStatus ego_status;
  std::vector<tok::Turn> cot;  // 6 (prompt, response) pairs
  Trajectory gt_trajectory;
  std::optional<Annotation> annotation;

  std::string sample_id() const { return std::to_string(scene_id) + "-" + std::to_string(timestamp_index); }
  friend bool operator==(const SceneSample&, const SceneSample&) = default;
};

}  // namespace rda
