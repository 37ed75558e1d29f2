#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rda {

inline constexpr std::size_t kWaypoints = 6;
inline constexpr double kWaypointDt = 0.5;  // seconds between waypoints
inline constexpr double kPi = 3.14159265358979323846;

struct Waypoint {
  double x = 0.0;  // forward, metres (ego frame)
  double y = 0.0;  // left, metres
  friend bool operator==(const Waypoint&, const Waypoint&) = default;
};

// Planned or logged ego path: waypoints at 0.5 s, 1.0 s, ... in the ego frame.
struct Trajectory {
  std::vector<Waypoint> points;

  std::size_t size() const { return points.size(); }
  const Waypoint& operator[](std::size_t i) const { return points[i]; }
  Waypoint& operator[](std::size_t i) { return points[i]; }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

inline double round2(double v) {
  const double r = std::round(v * 100.0) / 100.0;
  return r == 0.0 ? 0.0 : r;  // no negative zero
}

inline Trajectory quantized(const Trajectory& t) {
  Trajectory q = t;
  for (auto& p : q.points) {
    p.x = round2(p.x);
    p.y = round2(p.y);
  }
  return q;
}

enum class ObjectClass { car, pedestrian, red_light, green_light };

inline std::string_view to_string(ObjectClass c) {
  switch (c) {
    case ObjectClass::car: return "car";
    case ObjectClass::pedestrian: return "pedestrian";
    case ObjectClass::red_light: return "red_light";
    case ObjectClass::green_light: return "green_light";
  }
  return "car";
}

inline ObjectClass object_class_from_string(std::string_view s) {
  if (s == "car") return ObjectClass::car;
  if (s == "pedestrian") return ObjectClass::pedestrian;
  if (s == "red_light") return ObjectClass::red_light;
  if (s == "green_light") return ObjectClass::green_light;
  throw std::invalid_argument("unknown object class '" + std::string(s) + "'");
}

// Value written into the BEV class-flag channel.
inline double class_flag(ObjectClass c) {
  switch (c) {
    case ObjectClass::car: return 0.25;
    case ObjectClass::pedestrian: return 0.5;
    case ObjectClass::red_light: return 0.75;
    case ObjectClass::green_light: return 1.0;
  }
  return 0.0;
}

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

// Oriented box in the ego frame. Length runs along the heading.
struct ObjectBox {
  double x = 0.0;
  double y = 0.0;
  double length = 1.0;
  double width = 1.0;
  double yaw = 0.0;  // (-pi, pi]
  double vx = 0.0;
  double vy = 0.0;
  ObjectClass cls = ObjectClass::car;

  friend bool operator==(const ObjectBox&, const ObjectBox&) = default;
};

struct EgoStatus {
  double velocity = 0.0;      // m/s
  double yaw_rate = 0.0;      // rad/s
  double acceleration = 0.0;  // m/s^2
  std::array<Waypoint, 3> history{};  // oldest first, 0.5 s spacing

  friend bool operator==(const EgoStatus&, const EgoStatus&) = default;
};

}  // namespace rda
