#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rda/sample.hpp"
#include "rda/tokenizer.hpp"
#include "rda/types.hpp"

namespace rda::cot {

inline constexpr std::size_t kTurns = 6;

inline const std::string kPerceptionPrompt =
    "What are the important objects in the current scene? Those objects will be considered for the "
    "future reasoning and driving decision.";
inline const std::string kDecisionPrompt = "Predict the behavior of the ego vehicle.";
inline const std::string kPlanningPrompt = "Plan a safe, feasible 3-second trajectory of 6 waypoints.";

inline std::string prediction_prompt(std::string_view ordinal) {
  const std::string o(ordinal);
  return "What object should the ego vehicle notice " + o +
         " when the ego vehicle is getting to the next possible location? What is the state of the object "
         "that is " + o + " noticed by the ego vehicle, and what action should the ego vehicle take?";
}

// Perception, prediction x3 (first/second/third), decision, planning.
inline std::vector<std::string> build_prompt_turns() {
  return {kPerceptionPrompt, prediction_prompt("first"), prediction_prompt("second"),
          prediction_prompt("third"), kDecisionPrompt, kPlanningPrompt};
}

// ---- ego status ------------------------------------------------------------

inline std::string format_ego_status(const EgoStatus& e) {
  using tok::format_fixed2;
  std::string out = "Ego status: velocity " + format_fixed2(e.velocity) + " m/s, yaw rate " +
                    format_fixed2(e.yaw_rate) + " rad/s, acceleration " + format_fixed2(e.acceleration) +
                    " m/s2, history ";
  for (std::size_t i = 0; i < e.history.size(); ++i) {
    if (i) out += ',';
    out += '(' + format_fixed2(e.history[i].x) + ',' + format_fixed2(e.history[i].y) + ')';
  }
  out += '.';
  return out;
}

inline std::optional<EgoStatus> parse_ego_status(const std::string& text) {
  EgoStatus e;
  char tail = 0;
  const int n = std::sscanf(text.c_str(),
                            "Ego status: velocity %lf m/s, yaw rate %lf rad/s, acceleration %lf m/s2, history "
                            "(%lf,%lf),(%lf,%lf),(%lf,%lf)%c",
                            &e.velocity, &e.yaw_rate, &e.acceleration, &e.history[0].x, &e.history[0].y,
                            &e.history[1].x, &e.history[1].y, &e.history[2].x, &e.history[2].y, &tail);
  if (n != 10 || tail != '.') return std::nullopt;
  return e;
}

inline EgoStatus quantized(const EgoStatus& e) {
  EgoStatus q = e;
  q.velocity = round2(q.velocity);
  q.yaw_rate = round2(q.yaw_rate);
  q.acceleration = round2(q.acceleration);
  for (auto& h : q.history) {
    h.x = round2(h.x);
    h.y = round2(h.y);
  }
  return q;
}

// ---- response templates ----------------------------------------------------

inline std::string_view camera_of(const ObjectBox& o) {
  const double bearing = std::atan2(o.y, o.x) * 180.0 / kPi;
  if (std::abs(bearing) <= 30.0) return "CAM_FRONT";
  if (bearing > 30.0 && bearing <= 90.0) return "CAM_FRONT_LEFT";
  if (bearing < -30.0 && bearing >= -90.0) return "CAM_FRONT_RIGHT";
  if (bearing > 90.0 && bearing <= 150.0) return "CAM_BACK_LEFT";
  if (bearing < -90.0 && bearing >= -150.0) return "CAM_BACK_RIGHT";
  return "CAM_BACK";
}

inline std::string_view state_phrase(ObjectState s) {
  switch (s) {
    case ObjectState::stopped_in_lane: return "stopped car in the ego lane";
    case ObjectState::slower_in_lane: return "slower car ahead in the ego lane";
    case ObjectState::parked_roadside: return "parked car beside the road";
    case ObjectState::red_light: return "red traffic light";
    case ObjectState::green_light: return "green traffic light";
    case ObjectState::crossing_pedestrian: return "pedestrian crossing the road";
    case ObjectState::leaving_pedestrian: return "pedestrian leaving the road";
  }
  return "";
}

inline std::string_view advice_phrase(ObjectAdvice a) {
  switch (a) {
    case ObjectAdvice::stop: return "stop";
    case ObjectAdvice::decelerate: return "decelerate";
    case ObjectAdvice::keep_going: return "keep going";
  }
  return "";
}

inline std::string_view direction_phrase(Direction d) {
  switch (d) {
    case Direction::forward: return "go forward";
    case Direction::left_turn: return "turn left";
    case Direction::right_turn: return "turn right";
  }
  return "";
}

inline std::string_view speed_phrase(Speed s) {
  switch (s) {
    case Speed::stop: return "stop";
    case Speed::decelerate: return "decelerate";
    case Speed::keep: return "keep its speed";
    case Speed::accelerate: return "accelerate";
  }
  return "";
}

inline std::string object_tag(std::size_t index, std::string_view camera) {
  return "<c" + std::to_string(index) + ", " + std::string(camera) + ">";
}

inline const std::string kNoObjects = "There are no important objects.";
inline const std::string kNone = "None.";

inline std::string perception_response(const std::vector<std::string>& tags) {
  if (tags.empty()) return kNoObjects;
  std::string out = "The important objects are ";
  for (std::size_t i = 0; i < tags.size(); ++i) out += (i ? ", " : "") + tags[i];
  return out + ".";
}

inline std::string prediction_response(const std::string& tag, ObjectState s, ObjectAdvice a) {
  return tag + " is a " + std::string(state_phrase(s)) + ", so the ego vehicle should " +
         std::string(advice_phrase(a)) + ".";
}

inline std::string decision_response(const Decision& d) {
  return "The ego vehicle should " + std::string(direction_phrase(d.direction)) + " and " +
         std::string(speed_phrase(d.speed)) + ".";
}

class MissingAnnotation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::vector<std::string> gt_responses(const SceneSample& s) {
  if (!s.annotation) throw MissingAnnotation("sample " + s.sample_id() + " carries no annotations");
  const Annotation& a = *s.annotation;
  std::vector<std::string> tags;
  for (std::size_t i = 0; i < a.key_objects.size() && i < 3; ++i) {
    tags.push_back(object_tag(i + 1, camera_of(s.objects.at(a.key_objects[i].object_index))));
  }
  std::vector<std::string> out;
  out.push_back(perception_response(tags));
  for (std::size_t i = 0; i < 3; ++i) {
    if (i < tags.size()) {
      out.push_back(prediction_response(tags[i], a.key_objects[i].state, a.key_objects[i].advice));
    } else {
      out.push_back(kNone);
    }
  }
  out.push_back(decision_response(a.decision));
  out.push_back(tok::serialize_trajectory(s.gt_trajectory));
  return out;
}

// ---- conversation assembly ---------------------------------------------------

struct CotOptions {
  bool perception = true;
  bool prediction = true;
  bool decision = true;
  bool multi_turn = true;
  friend bool operator==(const CotOptions&, const CotOptions&) = default;
};

// Indices into the six stage turns that stay enabled; planning always does.
inline std::vector<std::size_t> enabled_turns(const CotOptions& o) {
  std::vector<std::size_t> idx;
  if (o.perception) idx.push_back(0);
  if (o.prediction) idx.insert(idx.end(), {1, 2, 3});
  if (o.decision) idx.push_back(4);
  idx.push_back(5);
  return idx;
}

inline std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

// Conversation turns for the model. Ego status text opens the first prompt.
// The last turn always carries the plan.
inline std::vector<tok::Turn> assemble_conversation(const EgoStatus& ego, const std::vector<std::string>& responses,
                                                    const CotOptions& o) {
  if (responses.size() != kTurns) throw std::invalid_argument("expected 6 stage responses");
  const auto prompts = build_prompt_turns();
  std::vector<tok::Turn> turns;
  for (std::size_t i : enabled_turns(o)) turns.emplace_back(prompts[i], responses[i]);
  turns.front().first = format_ego_status(ego) + " " + turns.front().first;
  if (!o.multi_turn) {
    std::vector<std::string> ps, rs;
    for (auto& [p, r] : turns) {
      ps.push_back(p);
      rs.push_back(r);
    }
    return {{join(ps), join(rs)}};
  }
  return turns;
}

// Prompts only, for generation.
inline std::vector<std::string> conversation_prompts(const EgoStatus& ego, const CotOptions& o) {
  std::vector<std::string> blanks(kTurns);
  std::vector<std::string> out;
  for (auto& [p, r] : assemble_conversation(ego, blanks, o)) out.push_back(p);
  return out;
}

inline std::vector<tok::Turn> sample_conversation(const SceneSample& s, const CotOptions& o) {
  std::vector<std::string> responses;
  for (const auto& [p, r] : s.cot) responses.push_back(r);
  return assemble_conversation(s.ego_status, responses, o);
}

// Every template instantiation the vocabulary must cover.
inline std::vector<std::string> template_corpus() {
  std::vector<std::string> corpus = build_prompt_turns();
  corpus.push_back(format_ego_status(EgoStatus{}));
  corpus.push_back(kNoObjects);
  corpus.push_back(kNone);
  const std::vector<std::string_view> cams = {"CAM_FRONT", "CAM_FRONT_LEFT", "CAM_FRONT_RIGHT",
                                              "CAM_BACK", "CAM_BACK_LEFT", "CAM_BACK_RIGHT"};
  std::vector<std::string> tags;
  for (std::size_t i = 0; i < cams.size(); ++i) tags.push_back(object_tag(i % 3 + 1, cams[i]));
  corpus.push_back(perception_response(tags));
  for (auto s : {ObjectState::stopped_in_lane, ObjectState::slower_in_lane, ObjectState::parked_roadside,
                 ObjectState::red_light, ObjectState::green_light, ObjectState::crossing_pedestrian,
                 ObjectState::leaving_pedestrian}) {
    for (auto a : {ObjectAdvice::stop, ObjectAdvice::decelerate, ObjectAdvice::keep_going}) {
      corpus.push_back(prediction_response(tags[0], s, a));
    }
  }
  for (auto d : {Direction::forward, Direction::left_turn, Direction::right_turn}) {
    for (auto v : {Speed::stop, Speed::decelerate, Speed::keep, Speed::accelerate}) {
      corpus.push_back(decision_response({d, v}));
    }
  }
  corpus.push_back(tok::serialize_trajectory(Trajectory{std::vector<Waypoint>(kWaypoints)}));
  return corpus;
}

inline tok::Vocab default_vocab() { return tok::build_vocab(template_corpus()); }

}  // namespace rda::cot
