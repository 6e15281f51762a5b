// Copyright 2026 The GridDrive Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "griddrive/world.hpp"

#include <algorithm>
#include <cmath>

namespace griddrive::world {

namespace {

struct Rect {
  double min_x, min_y, max_x, max_y;
  bool contains(double x, double y) const {
    return x >= min_x && x <= max_x && y >= min_y && y <= max_y;
  }
  // Distance from an interior point to the boundary; negative if outside.
  double inside_distance(double x, double y) const {
    return std::min(std::min(x - min_x, max_x - x), std::min(y - min_y, max_y - y));
  }
  bool overlaps(const Rect& o, double margin = 0.0) const {
    return min_x < o.max_x + margin && max_x > o.min_x - margin &&
           min_y < o.max_y + margin && max_y > o.min_y - margin;
  }
};

std::vector<Rect> drivable_rects(const WorldMap& map) {
  const double hw = map.corridor_width / 2.0;
  std::vector<Rect> rects;
  rects.push_back({map.main_x_min, -hw, map.main_x_max, hw});
  if (map.plaza_half_x > 0.0) {
    rects.push_back({map.intersection_x - map.plaza_half_x,
                     map.plaza_center_y - map.plaza_half_y,
                     map.intersection_x + map.plaza_half_x,
                     map.plaza_center_y + map.plaza_half_y});
  }
  if (map.branch_left) {
    rects.push_back({map.branch_x - hw, 0.0, map.branch_x + hw, map.branch_len});
  }
  if (map.branch_right) {
    rects.push_back({map.branch_x - hw, -map.branch_len, map.branch_x + hw, 0.0});
  }
  return rects;
}

Rect map_bounds(const WorldMap& map) {
  Rect b{1e30, 1e30, -1e30, -1e30};
  auto grow = [&](double x0, double y0, double x1, double y1) {
    b.min_x = std::min(b.min_x, x0);
    b.min_y = std::min(b.min_y, y0);
    b.max_x = std::max(b.max_x, x1);
    b.max_y = std::max(b.max_y, y1);
  };
  for (const Rect& r : drivable_rects(map)) grow(r.min_x, r.min_y, r.max_x, r.max_y);
  for (const ObstacleBox& o : map.obstacles) grow(o.min_x, o.min_y, o.max_x, o.max_y);
  const double margin = 24.0;
  return {b.min_x - margin, b.min_y - margin, b.max_x + margin, b.max_y + margin};
}

constexpr double kEdgeBand = 0.15;
constexpr double kCenterHalf = 0.08;

}  // namespace

const char* class_name(InstructionClass c) {
  switch (c) {
    case InstructionClass::TurnLeft: return "turn_left";
    case InstructionClass::TurnRight: return "turn_right";
    case InstructionClass::GoStraight: return "go_straight";
    case InstructionClass::SpeedUp: return "speed_up";
    case InstructionClass::SlowDown: return "slow_down";
    case InstructionClass::Stop: return "stop";
  }
  return "unknown";
}

InstructionClass class_from_name(const std::string& name) {
  for (int i = 0; i < kNumClasses; ++i) {
    const auto c = static_cast<InstructionClass>(i);
    if (name == class_name(c)) return c;
  }
  throw InvalidInputError("unknown instruction class: " + name);
}

Image to_image(const Raster& r) {
  Image img;
  for (int i = 0; i < Raster::kBytes; ++i) img.px[i] = r.cells[i] ? 1.0 : 0.0;
  return img;
}

Raster to_raster(const Image& img) {
  Raster r;
  for (int i = 0; i < Raster::kBytes; ++i) r.cells[i] = img.px[i] >= 0.5 ? 1 : 0;
  return r;
}

EgoState step(const EgoState& state, const Action& action) {
  if (!std::isfinite(action.dx) || !std::isfinite(action.dy) || !std::isfinite(action.dtheta)) {
    throw InvalidInputError("non-finite action");
  }
  const double c = std::cos(state.theta);
  const double s = std::sin(state.theta);
  EgoState out;
  out.x = state.x + c * action.dx - s * action.dy;
  out.y = state.y + s * action.dx + c * action.dy;
  out.theta = wrap_angle(state.theta + action.dtheta);
  out.v = std::sqrt(action.dx * action.dx + action.dy * action.dy) / kDt;
  return out;
}

bool point_drivable(const WorldMap& map, double x, double y) {
  for (const Rect& r : drivable_rects(map)) {
    if (r.contains(x, y)) return true;
  }
  return false;
}

double drivable_inside_distance(const WorldMap& map, double x, double y) {
  double best = -1e30;
  for (const Rect& r : drivable_rects(map)) {
    best = std::max(best, r.inside_distance(x, y));
  }
  return best;
}

bool point_on_lane_marking(const WorldMap& map, double x, double y) {
  const double d = drivable_inside_distance(map, x, y);
  if (d < 0.0) return false;
  if (d <= kEdgeBand) return true;
  const double hw = map.corridor_width / 2.0;
  // Solid centerlines of the main and branch corridors.
  if (std::abs(y) <= kCenterHalf && x >= map.main_x_min && x <= map.main_x_max &&
      std::abs(y) <= hw) {
    return true;
  }
  if ((map.branch_left || map.branch_right) && std::abs(x - map.branch_x) <= kCenterHalf) {
    if (map.branch_left && y >= 0.0 && y <= map.branch_len) return true;
    if (map.branch_right && y <= 0.0 && y >= -map.branch_len) return true;
  }
  return false;
}

bool point_in_obstacle(const WorldMap& map, double x, double y) {
  for (const ObstacleBox& o : map.obstacles) {
    if (x >= o.min_x && x <= o.max_x && y >= o.min_y && y <= o.max_y) return true;
  }
  return false;
}

namespace {

// Separating-axis test between the oriented ego square and an AABB.
bool obb_aabb_overlap(const EgoState& pose, const ObstacleBox& box) {
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  double cx[4], cy[4];
  const double off[4][2] = {{kEgoHalf, kEgoHalf},
                            {kEgoHalf, -kEgoHalf},
                            {-kEgoHalf, kEgoHalf},
                            {-kEgoHalf, -kEgoHalf}};
  for (int i = 0; i < 4; ++i) {
    cx[i] = pose.x + c * off[i][0] - s * off[i][1];
    cy[i] = pose.y + s * off[i][0] + c * off[i][1];
  }
  const double axes[4][2] = {{1, 0}, {0, 1}, {c, s}, {-s, c}};
  const double bx[4] = {box.min_x, box.max_x, box.max_x, box.min_x};
  const double by[4] = {box.min_y, box.min_y, box.max_y, box.max_y};
  for (const auto& ax : axes) {
    double lo_a = 1e30, hi_a = -1e30, lo_b = 1e30, hi_b = -1e30;
    for (int i = 0; i < 4; ++i) {
      const double pa = cx[i] * ax[0] + cy[i] * ax[1];
      lo_a = std::min(lo_a, pa);
      hi_a = std::max(hi_a, pa);
      const double pb = bx[i] * ax[0] + by[i] * ax[1];
      lo_b = std::min(lo_b, pb);
      hi_b = std::max(hi_b, pb);
    }
    if (hi_a < lo_b || hi_b < lo_a) return false;
  }
  return true;
}

}  // namespace

bool footprint_hits_obstacle(const WorldMap& map, const EgoState& pose) {
  for (const ObstacleBox& o : map.obstacles) {
    if (obb_aabb_overlap(pose, o)) return true;
  }
  return false;
}

bool footprint_on_drivable(const WorldMap& map, const EgoState& pose) {
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  for (int i = -1; i <= 1; ++i) {
    for (int j = -1; j <= 1; ++j) {
      const double fx = kEgoHalf * i;
      const double fy = kEgoHalf * j;
      const double px = pose.x + c * fx - s * fy;
      const double py = pose.y + s * fx + c * fy;
      if (!point_drivable(map, px, py)) return false;
    }
  }
  return true;
}

Raster render(const EgoState& state, const WorldMap& map) {
  const Rect bounds = map_bounds(map);
  if (!bounds.contains(state.x, state.y)) {
    throw InvalidInputError("render: state outside map bounds");
  }
  const double c = std::cos(state.theta);
  const double s = std::sin(state.theta);
  const double res = map.raster_resolution;
  const int n = Raster::kSize;
  Raster out;
  for (int i = 0; i < n; ++i) {
    const double fwd = (n / 2 - i - 0.5) / res;
    for (int j = 0; j < n; ++j) {
      const double left = (n / 2 - j - 0.5) / res;
      const double px = state.x + c * fwd - s * left;
      const double py = state.y + s * fwd + c * left;
      out.at(i, j, 0) = point_drivable(map, px, py) ? 1 : 0;
      out.at(i, j, 1) = point_on_lane_marking(map, px, py) ? 1 : 0;
      out.at(i, j, 2) = point_in_obstacle(map, px, py) ? 1 : 0;
    }
  }
  return out;
}

InstructionClass classify_motion(const std::vector<EgoState>& poses,
                                 const MotionThresholds& th) {
  if (poses.size() < 2) throw InvalidInputError("classify_motion: need at least 2 poses");
  double net_heading = 0.0;
  for (size_t k = 0; k + 1 < poses.size(); ++k) {
    net_heading += wrap_angle(poses[k + 1].theta - poses[k].theta);
  }
  const double v_first = poses.front().v;
  const double v_term = poses.back().v;
  if (v_term < th.stop_mps) return InstructionClass::Stop;
  if (std::abs(net_heading) >= th.turn_rad) {
    return net_heading > 0.0 ? InstructionClass::TurnLeft : InstructionClass::TurnRight;
  }
  const double dv = v_term - v_first;
  if (dv >= th.speedup_mps) return InstructionClass::SpeedUp;
  if (dv <= -th.slowdown_mps) return InstructionClass::SlowDown;
  return InstructionClass::GoStraight;
}

const std::vector<std::string>& instruction_templates() {
  static const std::vector<std::string> kTemplates = {
      // TurnLeft
      "turn left at the next intersection",
      "take the left branch ahead",
      "please make a left turn",
      // TurnRight
      "turn right at the next intersection",
      "take the right branch ahead",
      "please make a right turn",
      // GoStraight
      "keep going straight ahead",
      "maintain your current heading",
      "continue straight along the road",
      // SpeedUp
      "speed up along this road",
      "accelerate to a higher speed",
      "please go faster now",
      // SlowDown
      "slow down along this road",
      "reduce your speed gradually",
      "please drive slower now",
      // Stop
      "come to a complete stop",
      "brake until the vehicle stops",
      "please stop the car",
  };
  return kTemplates;
}

const std::string& instruction_template(InstructionClass c, int variant) {
  return instruction_templates()[static_cast<int>(c) * 3 + (variant % 3)];
}

bool class_for_instruction_text(const std::string& text, InstructionClass* out) {
  const auto& all = instruction_templates();
  for (size_t i = 0; i < all.size(); ++i) {
    if (all[i] == text) {
      *out = static_cast<InstructionClass>(i / 3);
      return true;
    }
  }
  return false;
}

namespace {

constexpr double kTurnSpeed = 1.2;
constexpr int kTurnStart = 4;   // first arc step
constexpr int kTurnSteps = 8;   // quarter turn spread over these steps

struct EpisodePlan {
  InstructionClass cls;
  std::array<double, kHorizon> speeds{};  // target speed of each step, m/s
  double cruise = 2.0;
  double entry_x = 0.0;    // arc entry along +x (turn classes)
  double radius = 0.0;
  double start_y = 0.0;
  double start_theta = 0.0;
  int template_variant = 0;
  // Dense reference polyline with cumulative arclength.
  std::vector<double> ref_x, ref_y, ref_s;
};

void append_ref_point(EpisodePlan& p, double x, double y) {
  if (!p.ref_x.empty()) {
    const double dx = x - p.ref_x.back();
    const double dy = y - p.ref_y.back();
    p.ref_s.push_back(p.ref_s.back() + std::sqrt(dx * dx + dy * dy));
  } else {
    p.ref_s.push_back(0.0);
  }
  p.ref_x.push_back(x);
  p.ref_y.push_back(y);
}

EpisodePlan make_plan(uint64_t seed, InstructionClass cls) {
  Rng rng = Rng(seed).child("plan");
  EpisodePlan p;
  p.cls = cls;
  p.start_y = rng.uniform(-0.25, 0.25);
  p.start_theta = rng.uniform(-0.04, 0.04);
  p.template_variant = static_cast<int>(rng.uniform_index(3));

  const bool turn = cls == InstructionClass::TurnLeft || cls == InstructionClass::TurnRight;
  switch (cls) {
    case InstructionClass::TurnLeft:
    case InstructionClass::TurnRight: {
      p.cruise = rng.uniform(1.8, 2.2);
      const double mid = 0.5 * (p.cruise + kTurnSpeed);
      for (int k = 0; k < kHorizon; ++k) {
        if (k < 2) p.speeds[k] = p.cruise;
        else if (k == 2) p.speeds[k] = mid;
        else if (k < kTurnStart + kTurnSteps) p.speeds[k] = kTurnSpeed;
        else if (k == kTurnStart + kTurnSteps) p.speeds[k] = mid;
        else p.speeds[k] = p.cruise;
      }
      break;
    }
    case InstructionClass::GoStraight: {
      p.cruise = rng.uniform(1.8, 2.2);
      p.speeds.fill(p.cruise);
      break;
    }
    case InstructionClass::SpeedUp: {
      const double v0 = rng.uniform(1.0, 1.2);
      for (int k = 0; k < kHorizon; ++k) p.speeds[k] = v0 + 0.125 * k;
      p.cruise = v0;
      break;
    }
    case InstructionClass::SlowDown: {
      const double v0 = rng.uniform(2.8, 3.0);
      for (int k = 0; k < kHorizon; ++k) p.speeds[k] = v0 - 0.125 * k;
      p.cruise = v0;
      break;
    }
    case InstructionClass::Stop: {
      const double v0 = rng.uniform(1.8, 2.0);
      for (int k = 0; k < kHorizon; ++k) p.speeds[k] = std::max(0.0, v0 - 0.4 * k);
      p.cruise = v0;
      break;
    }
  }

  if (turn) {
    const double arc_len = kTurnSteps * kTurnSpeed * kDt;
    p.radius = arc_len / (kPi / 2.0);
    double d = 0.0;
    for (int k = 0; k < kTurnStart; ++k) d += p.speeds[k] * kDt;
    p.entry_x = d;
    const double sign = cls == InstructionClass::TurnLeft ? 1.0 : -1.0;
    // Straight approach, quarter arc, straight exit along the branch.
    const int kDense = 12;
    for (int i = 0; i <= kDense * 4; ++i) {
      append_ref_point(p, p.entry_x * i / (kDense * 4.0), 0.0);
    }
    const double cx = p.entry_x;
    const double cy = sign * p.radius;
    const int kArc = 96;
    for (int i = 1; i <= kArc; ++i) {
      const double phi = -sign * kPi / 2.0 + sign * (kPi / 2.0) * i / kArc;
      append_ref_point(p, cx + p.radius * std::cos(phi), cy + p.radius * std::sin(phi));
    }
    const double bx = p.entry_x + p.radius;
    for (int i = 1; i <= kDense * 10; ++i) {
      append_ref_point(p, bx, sign * (p.radius + 12.0 * i / (kDense * 10.0)));
    }
  } else {
    for (int i = 0; i <= 300; ++i) append_ref_point(p, 30.0 * i / 300.0, 0.0);
  }
  return p;
}

WorldMap make_map_from_plan(uint64_t seed, const EpisodePlan& plan) {
  Rng rng = Rng(seed).child("map");
  WorldMap map;
  map.corridor_width = rng.uniform(3.6, 4.4);
  map.raster_resolution = 2.0;
  map.main_x_min = -6.0;
  map.main_x_max = 26.0;

  const double hw = map.corridor_width / 2.0;
  const bool left = plan.cls == InstructionClass::TurnLeft;
  const bool right = plan.cls == InstructionClass::TurnRight;
  if (left || right) {
    const double sign = left ? 1.0 : -1.0;
    map.branch_left = left;
    map.branch_right = right;
    map.branch_straight = false;
    map.branch_x = plan.entry_x + plan.radius;
    map.branch_len = plan.radius + 14.0;
    map.intersection_x = plan.entry_x + plan.radius / 2.0;
    map.plaza_half_x = plan.radius / 2.0 + hw;
    map.plaza_half_y = plan.radius / 2.0 + hw;
    map.plaza_center_y = sign * plan.radius / 2.0;
    map.main_x_max = map.branch_x + hw;
  }

  // Off-road clutter boxes, clear of the drivable union.
  const auto rects = drivable_rects(map);
  const int want = 1 + static_cast<int>(rng.uniform_index(3));
  for (int n = 0; n < want; ++n) {
    for (int attempt = 0; attempt < 24; ++attempt) {
      const double sx = rng.uniform(0.6, 1.4);
      const double sy = rng.uniform(0.6, 1.4);
      const double cx = rng.uniform(0.0, 16.0);
      const double side = rng.uniform_index(2) == 0 ? 1.0 : -1.0;
      const double clearance = rng.uniform(0.4, 1.2);
      const double cy = side * (hw + clearance + sy / 2.0);
      ObstacleBox box{cx - sx / 2.0, cy - sy / 2.0, cx + sx / 2.0, cy + sy / 2.0};
      Rect brect{box.min_x, box.min_y, box.max_x, box.max_y};
      bool ok = true;
      for (const Rect& r : rects) {
        if (brect.overlaps(r, 0.3)) { ok = false; break; }
      }
      for (const ObstacleBox& o : map.obstacles) {
        if (brect.overlaps(Rect{o.min_x, o.min_y, o.max_x, o.max_y}, 0.3)) { ok = false; break; }
      }
      if (ok) {
        map.obstacles.push_back(box);
        break;
      }
    }
  }
  return map;
}

}  // namespace

WorldMap make_map(uint64_t seed, InstructionClass cls) {
  return make_map_from_plan(seed, make_plan(seed, cls));
}

Episode generate_episode(uint64_t seed, InstructionClass cls, const WorldMap& map) {
  const bool turn = cls == InstructionClass::TurnLeft || cls == InstructionClass::TurnRight;
  if (cls == InstructionClass::TurnLeft && !map.branch_left) {
    throw InvalidInputError("generate_episode: turn_left infeasible, map has no left branch");
  }
  if (cls == InstructionClass::TurnRight && !map.branch_right) {
    throw InvalidInputError("generate_episode: turn_right infeasible, map has no right branch");
  }
  const EpisodePlan plan = make_plan(seed, cls);

  Episode ep;
  ep.map = map;
  ep.seed = seed;
  ep.instruction_class = cls;
  ep.instruction_text = instruction_template(cls, plan.template_variant);

  EgoState pose{0.0, plan.start_y, plan.start_theta, plan.speeds[0]};
  ep.poses.push_back(pose);

  size_t near = 0;  // monotonic index into the reference polyline
  for (int k = 0; k < kHorizon; ++k) {
    const double sp = plan.speeds[k];
    const double ds = sp * kDt;
    Action a;
    if (ds > 1e-12) {
      // Advance the nearest-point index.
      double best = 1e30;
      size_t best_i = near;
      for (size_t i = near; i < plan.ref_x.size(); ++i) {
        const double dx = plan.ref_x[i] - pose.x;
        const double dy = plan.ref_y[i] - pose.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 < best) {
          best = d2;
          best_i = i;
        } else if (d2 > best + 4.0) {
          break;
        }
      }
      near = best_i;
      const double lookahead = std::max(1.0, 1.0 * sp);
      const double target_s = plan.ref_s[near] + lookahead;
      size_t ti = near;
      while (ti + 1 < plan.ref_s.size() && plan.ref_s[ti] < target_s) ++ti;
      const double gx = plan.ref_x[ti] - pose.x;
      const double gy = plan.ref_y[ti] - pose.y;
      const double cth = std::cos(pose.theta);
      const double sth = std::sin(pose.theta);
      const double lx = cth * gx + sth * gy;   // target in ego frame
      const double ly = -sth * gx + cth * gy;
      const double dist = std::sqrt(lx * lx + ly * ly);
      double dtheta = 0.0;
      if (dist > 1e-9) {
        const double alpha = std::atan2(ly, lx);
        const double kappa = 2.0 * std::sin(alpha) / dist;
        dtheta = std::clamp(kappa * ds, -0.5, 0.5);
      }
      if (std::abs(dtheta) < 1e-12) {
        a = {ds, 0.0, 0.0};
      } else {
        a = {ds * std::sin(dtheta) / dtheta, ds * (1.0 - std::cos(dtheta)) / dtheta, dtheta};
      }
    }
    pose = step(pose, a);
    ep.actions.push_back(a);
    ep.poses.push_back(pose);
  }

  (void)turn;
  ep.frames.reserve(ep.poses.size());
  for (const EgoState& s : ep.poses) ep.frames.push_back(render(s, map));
  return ep;
}

bool episode_gates_pass(const Episode& ep, const MotionThresholds& th) {
  if (classify_motion(ep.poses, th) != ep.instruction_class) return false;
  // The standard planning window must carry the same label.
  std::vector<EgoState> window(ep.poses.begin() + 3, ep.poses.begin() + 3 + kPlanHorizon + 1);
  if (classify_motion(window, th) != ep.instruction_class) return false;
  for (const EgoState& p : ep.poses) {
    if (footprint_hits_obstacle(ep.map, p)) return false;
    if (!footprint_on_drivable(ep.map, p)) return false;
  }
  // Comfort bounds of the expert itself.
  for (size_t k = 0; k + 1 < ep.poses.size(); ++k) {
    if (std::abs(ep.poses[k + 1].v - ep.poses[k].v) / kDt > 2.0) return false;
    if (std::abs(ep.actions[k].dtheta) > 0.8) return false;
  }
  // Extrapolating the final velocity must stay clear of obstacles.
  EgoState p = ep.poses.back();
  const Action last = ep.actions.back();
  for (int i = 0; i < 2; ++i) {
    p = step(p, last);
    if (footprint_hits_obstacle(ep.map, p)) return false;
  }
  return true;
}

Episode generate_episode(uint64_t seed, InstructionClass cls) {
  const MotionThresholds th;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const uint64_t sub = Rng(seed).child("episode", attempt).next_u64();
    const WorldMap map = make_map(sub, cls);
    Episode ep = generate_episode(sub, cls, map);
    if (episode_gates_pass(ep, th)) return ep;
  }
  throw NumericalError("generate_episode: gates failed for all attempts");
}

}  // namespace griddrive::world
