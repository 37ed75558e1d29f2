#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rda/sample.hpp"
#include "rda/types.hpp"

namespace rda::plan {

enum class Convention { stp3, uniad };

inline constexpr std::array<Convention, 2> kConventions = {Convention::stp3, Convention::uniad};
inline constexpr std::array<int, 3> kHorizons = {1, 2, 3};

inline std::string_view to_string(Convention c) { return c == Convention::stp3 ? "stp3" : "uniad"; }

inline Convention convention_from_string(std::string_view s) {
  if (s == "stp3") return Convention::stp3;
  if (s == "uniad") return Convention::uniad;
  throw std::invalid_argument("unknown metric convention '" + std::string(s) + "'");
}

// Number of waypoints covered by a horizon in seconds.
inline std::size_t horizon_steps(int horizon_s) {
  if (horizon_s < 1 || horizon_s > 3) throw std::invalid_argument("horizon must be 1, 2 or 3 seconds");
  return static_cast<std::size_t>(horizon_s) * 2;
}

inline double waypoint_error(const Waypoint& a, const Waypoint& b) { return std::hypot(a.x - b.x, a.y - b.y); }

inline double l2_metric(const Trajectory& pred, const Trajectory& gt, int horizon_s, Convention c) {
  if (pred.size() != gt.size()) throw std::invalid_argument("prediction and ground truth differ in waypoint count");
  const std::size_t n = horizon_steps(horizon_s);
  if (gt.size() < n) throw std::invalid_argument("trajectory shorter than the horizon");
  if (c == Convention::uniad) return waypoint_error(pred[n - 1], gt[n - 1]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += waypoint_error(pred[i], gt[i]);
  return sum / static_cast<double>(n);
}

// Mean waypoint error over the full 3 s, used for ranking candidates.
inline double average_l2(const Trajectory& pred, const Trajectory& gt) { return l2_metric(pred, gt, 3, Convention::stp3); }

// ---- oriented boxes -----------------------------------------------------------

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

inline std::array<Vec2, 2> box_axes(const ObjectBox& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return {Vec2{c, s}, Vec2{-s, c}};
}

inline std::array<Vec2, 4> box_corners(const ObjectBox& b) {
  const auto [u, v] = box_axes(b);
  const double hl = b.length / 2, hw = b.width / 2;
  std::array<Vec2, 4> out;
  const int sx[4] = {1, -1, -1, 1};
  const int sy[4] = {1, 1, -1, -1};
  for (int i = 0; i < 4; ++i) {
    out[i] = {b.x + sx[i] * hl * u.x + sy[i] * hw * v.x, b.y + sx[i] * hl * u.y + sy[i] * hw * v.y};
  }
  return out;
}

inline double projected_radius(const ObjectBox& b, Vec2 axis) {
  const auto [u, v] = box_axes(b);
  return b.length / 2 * std::abs(dot(axis, u)) + b.width / 2 * std::abs(dot(axis, v));
}

// Smallest overlap of the two projections over the four candidate axes.
// Negative when some axis separates the boxes.
inline double min_axis_overlap(const ObjectBox& a, const ObjectBox& b) {
  const Vec2 d{b.x - a.x, b.y - a.y};
  double best = std::numeric_limits<double>::infinity();
  for (const auto& box : {a, b}) {
    for (Vec2 axis : box_axes(box)) {
      const double overlap = projected_radius(a, axis) + projected_radius(b, axis) - std::abs(dot(d, axis));
      best = std::min(best, overlap);
    }
  }
  return best;
}

// Separating-axis test. Touching boundaries count as intersecting.
inline bool obb_intersect(const ObjectBox& a, const ObjectBox& b) { return min_axis_overlap(a, b) >= 0.0; }

inline bool point_in_box(Vec2 p, const ObjectBox& b) {
  const auto [u, v] = box_axes(b);
  const Vec2 d{p.x - b.x, p.y - b.y};
  return std::abs(dot(d, u)) <= b.length / 2 && std::abs(dot(d, v)) <= b.width / 2;
}

namespace detail {

inline double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab{b.x - a.x, b.y - a.y};
  const double len2 = dot(ab, ab);
  double t = len2 > 0 ? dot(Vec2{p.x - a.x, p.y - a.y}, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * ab.x), p.y - (a.y + t * ab.y));
}

// Samples the outline of `a` every `res` metres (corners included) and tests
// each point against `b`. For convex shapes an outline point lies inside the
// other box whenever the two overlap.
inline bool outline_hits(const ObjectBox& a, const ObjectBox& b, double res) {
  const auto c = box_corners(a);
  for (int e = 0; e < 4; ++e) {
    const Vec2 p = c[e], q = c[(e + 1) % 4];
    const double len = std::hypot(q.x - p.x, q.y - p.y);
    const auto steps = static_cast<std::size_t>(std::ceil(len / res));
    for (std::size_t i = 0; i <= steps; ++i) {
      const double t = steps ? static_cast<double>(i) / static_cast<double>(steps) : 0.0;
      if (point_in_box({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)}, b)) return true;
    }
  }
  return point_in_box({a.x, a.y}, b);
}

}  // namespace detail

// Brute-force reference for obb_intersect.
inline bool obb_intersect_oracle(const ObjectBox& a, const ObjectBox& b, double resolution_m) {
  if (!(resolution_m > 0)) throw std::invalid_argument("oracle resolution must be positive");
  return detail::outline_hits(a, b, resolution_m) || detail::outline_hits(b, a, resolution_m);
}

// Distance between the outlines when apart, minus the penetration depth when
// overlapping.
inline double signed_separation(const ObjectBox& a, const ObjectBox& b) {
  const double overlap = min_axis_overlap(a, b);
  if (overlap >= 0.0) return -overlap;
  const auto ca = box_corners(a), cb = box_corners(b);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i) {
    for (int e = 0; e < 4; ++e) {
      best = std::min(best, detail::segment_distance(ca[i], cb[e], cb[(e + 1) % 4]));
      best = std::min(best, detail::segment_distance(cb[i], ca[e], ca[(e + 1) % 4]));
    }
  }
  return best;
}

// ---- collisions -----------------------------------------------------------------

struct EgoDims {
  double length = 4.084;
  double width = 1.730;
};

// Ego footprint at each waypoint. Heading follows the last displacement; the
// first waypoint faces +x.
inline std::vector<ObjectBox> ego_boxes(const Trajectory& t, const EgoDims& dims) {
  if (!(dims.length > 0 && dims.width > 0)) throw std::invalid_argument("ego dimensions must be positive");
  std::vector<ObjectBox> out;
  double heading = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i > 0) {
      const double dx = t[i].x - t[i - 1].x, dy = t[i].y - t[i - 1].y;
      if (std::hypot(dx, dy) > 1e-9) heading = std::atan2(dy, dx);
    }
    out.push_back(ObjectBox{t[i].x, t[i].y, dims.length, dims.width, heading, 0, 0, ObjectClass::car});
  }
  return out;
}

inline ObjectBox extrapolate(const ObjectBox& o, double t) {
  ObjectBox m = o;
  m.x += o.vx * t;
  m.y += o.vy * t;
  return m;
}

// Per-waypoint collision flags against constant-velocity objects.
inline std::vector<bool> waypoint_collisions(const Trajectory& t, const std::vector<ObjectBox>& objects,
                                             const EgoDims& dims) {
  const auto ego = ego_boxes(t, dims);
  std::vector<bool> hit(t.size(), false);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double time = kWaypointDt * static_cast<double>(i + 1);
    for (const auto& o : objects) {
      if (obb_intersect(ego[i], extrapolate(o, time))) {
        hit[i] = true;
        break;
      }
    }
  }
  return hit;
}

inline bool flag_at(const std::vector<bool>& hits, int horizon_s, Convention c) {
  const std::size_t n = horizon_steps(horizon_s);
  if (hits.size() < n) throw std::invalid_argument("trajectory shorter than the horizon");
  if (c == Convention::uniad) return hits[n - 1];
  return std::any_of(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), [](bool b) { return b; });
}

inline bool collision_rate(const Trajectory& pred, const std::vector<ObjectBox>& objects, int horizon_s, Convention c,
                           const EgoDims& dims = {}) {
  return flag_at(waypoint_collisions(pred, objects, dims), horizon_s, c);
}

// ---- report ---------------------------------------------------------------------

struct ConventionMetrics {
  std::array<double, 3> l2{};
  std::array<double, 3> collision{};  // percent
  double l2_avg = 0.0;
  double collision_avg = 0.0;
  friend bool operator==(const ConventionMetrics&, const ConventionMetrics&) = default;
};

struct PlanReport {
  std::size_t n = 0;
  ConventionMetrics stp3;
  ConventionMetrics uniad;

  const ConventionMetrics& at(Convention c) const { return c == Convention::stp3 ? stp3 : uniad; }
  ConventionMetrics& at(Convention c) { return c == Convention::stp3 ? stp3 : uniad; }
  friend bool operator==(const PlanReport&, const PlanReport&) = default;
};

struct EvalOptions {
  EgoDims ego;
  bool mask_gt_collisions = false;  // ignore horizons where the ground truth itself collides
};

inline PlanReport evaluate(const std::vector<Trajectory>& predictions, const std::vector<SceneSample>& dataset,
                           const EvalOptions& opt = {}) {
  if (predictions.size() != dataset.size()) {
    throw std::invalid_argument("got " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(dataset.size()) + " samples");
  }
  PlanReport r;
  r.n = dataset.size();
  if (r.n == 0) return r;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const auto& gt = dataset[s].gt_trajectory;
    const auto hits = waypoint_collisions(predictions[s], dataset[s].objects, opt.ego);
    std::vector<bool> gt_hits;
    if (opt.mask_gt_collisions) gt_hits = waypoint_collisions(gt, dataset[s].objects, opt.ego);
    for (Convention c : kConventions) {
      auto& m = r.at(c);
      for (std::size_t h = 0; h < 3; ++h) {
        m.l2[h] += l2_metric(predictions[s], gt, kHorizons[h], c);
        bool hit = flag_at(hits, kHorizons[h], c);
        if (hit && opt.mask_gt_collisions && flag_at(gt_hits, kHorizons[h], c)) hit = false;
        m.collision[h] += hit ? 1.0 : 0.0;
      }
    }
  }
  const double n = static_cast<double>(r.n);
  for (Convention c : kConventions) {
    auto& m = r.at(c);
    for (std::size_t h = 0; h < 3; ++h) {
      m.l2[h] /= n;
      m.collision[h] = 100.0 * m.collision[h] / n;
    }
    m.l2_avg = (m.l2[0] + m.l2[1] + m.l2[2]) / 3.0;
    m.collision_avg = (m.collision[0] + m.collision[1] + m.collision[2]) / 3.0;
  }
  return r;
}

inline nlohmann::ordered_json to_json(const PlanReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  for (const char* metric : {"l2", "collision"}) {
    nlohmann::ordered_json block;
    for (Convention c : kConventions) {
      const auto& m = r.at(c);
      const bool l2 = std::string_view(metric) == "l2";
      const auto& v = l2 ? m.l2 : m.collision;
      block[std::string(to_string(c))] = {{"1s", v[0]}, {"2s", v[1]}, {"3s", v[2]},
                                          {"avg", l2 ? m.l2_avg : m.collision_avg}};
    }
    j[metric] = block;
  }
  return j;
}

inline PlanReport report_from_json(const nlohmann::json& j) {
  PlanReport r;
  r.n = j.at("n").get<std::size_t>();
  for (Convention c : kConventions) {
    auto& m = r.at(c);
    const auto& l2 = j.at("l2").at(std::string(to_string(c)));
    const auto& col = j.at("collision").at(std::string(to_string(c)));
    for (std::size_t h = 0; h < 3; ++h) {
      const std::string key = std::to_string(h + 1) + "s";
      m.l2[h] = l2.at(key).get<double>();
      m.collision[h] = col.at(key).get<double>();
    }
    m.l2_avg = l2.at("avg").get<double>();
    m.collision_avg = col.at("avg").get<double>();
  }
  return r;
}

inline std::string to_csv(const PlanReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "convention,l2_1s,l2_2s,l2_3s,l2_avg,collision_1s,collision_2s,collision_3s,collision_avg,n\n";
  for (Convention c : kConventions) {
    const auto& m = r.at(c);
    os << to_string(c);
    for (double v : m.l2) os << ',' << v;
    os << ',' << m.l2_avg;
    for (double v : m.collision) os << ',' << v;
    os << ',' << m.collision_avg << ',' << r.n << '\n';
  }
  return os.str();
}

}  // namespace rda::plan
