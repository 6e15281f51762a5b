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

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "griddrive/common.hpp"
#include "griddrive/rng.hpp"

namespace griddrive::world {

// Frame rate and episode shape. Poses are sampled at 2 Hz; an episode is
// 16 steps (8 s) so every 8-step planning window plus its future frame
// fits inside it.
constexpr double kDt = 0.5;
constexpr int kHorizon = 16;
constexpr int kPlanHorizon = 8;

// Ego frame convention used everywhere: +x forward, +y left, dtheta
// applied after the translation.
struct EgoState {
  double x = 0.0;      // meters, world frame
  double y = 0.0;      // meters, world frame
  double theta = 0.0;  // radians in (-pi, pi]
  double v = 0.0;      // meters/second, >= 0
};

// Relative movement between consecutive poses, expressed in the frame of
// the preceding pose.
struct Action {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;
};

enum class InstructionClass : uint8_t {
  TurnLeft = 0,
  TurnRight = 1,
  GoStraight = 2,
  SpeedUp = 3,
  SlowDown = 4,
  Stop = 5,
};
constexpr int kNumClasses = 6;
const char* class_name(InstructionClass c);
InstructionClass class_from_name(const std::string& name);

struct ObstacleBox {
  double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
};

// Axis-aligned road geometry: a main corridor along +x, an optional
// intersection plaza sized to contain the turn arcs, and branch corridors
// along +y / -y. The drivable region is the union of these rectangles.
struct WorldMap {
  double corridor_width = 4.0;    // meters
  double intersection_x = 4.5;    // plaza center along +x (turn maps)
  double plaza_half_x = 0.0;      // plaza half extents; 0 means no plaza
  double plaza_half_y = 0.0;
  double plaza_center_y = 0.0;
  bool branch_left = false;
  bool branch_right = false;
  bool branch_straight = true;
  double branch_x = 0.0;          // branch corridor centerline
  double branch_len = 10.0;
  double main_x_min = -6.0;
  double main_x_max = 24.0;
  std::vector<ObstacleBox> obstacles;
  double raster_resolution = 2.0;  // cells per meter
};

struct MotionThresholds {
  double turn_rad = 0.35;      // net heading change
  double speedup_mps = 0.5;    // net speed change
  double slowdown_mps = 0.5;
  double stop_mps = 0.1;       // terminal speed
};

// Top-down ego-centric raster, 32x32, 3 channels
// {drivable, lane-marking, obstacle}, binary cell values.
struct Raster {
  static constexpr int kSize = 32;
  static constexpr int kChannels = 3;
  static constexpr int kBytes = kSize * kSize * kChannels;
  std::array<uint8_t, kBytes> cells{};

  uint8_t& at(int row, int col, int ch) {
    return cells[(static_cast<size_t>(row) * kSize + col) * kChannels + ch];
  }
  uint8_t at(int row, int col, int ch) const {
    return cells[(static_cast<size_t>(row) * kSize + col) * kChannels + ch];
  }
  bool operator==(const Raster& o) const { return cells == o.cells; }
};

// Raster decoded to doubles in [0, 1]; the image codec operates on this.
struct Image {
  int height = Raster::kSize;
  int width = Raster::kSize;
  int channels = Raster::kChannels;
  std::vector<double> px;  // row-major, channel-interleaved

  Image() : px(static_cast<size_t>(Raster::kBytes), 0.0) {}
  double& at(int row, int col, int ch) {
    return px[(static_cast<size_t>(row) * width + col) * channels + ch];
  }
  double at(int row, int col, int ch) const {
    return px[(static_cast<size_t>(row) * width + col) * channels + ch];
  }
};

Image to_image(const Raster& r);
Raster to_raster(const Image& img);  // quantizes at 0.5

struct Episode {
  WorldMap map;
  uint64_t seed = 0;
  InstructionClass instruction_class = InstructionClass::GoStraight;
  std::string instruction_text;
  std::vector<EgoState> poses;    // kHorizon + 1
  std::vector<Action> actions;    // kHorizon
  std::vector<Raster> frames;     // kHorizon + 1
};

// --- kinematics ---------------------------------------------------------

// Applies one relative action: world displacement R(theta)*(dx,dy), then
// the heading increment. Speed is |(dx,dy)| / dt.
EgoState step(const EgoState& state, const Action& action);

// --- geometry shared with the evaluator ---------------------------------

bool point_drivable(const WorldMap& map, double x, double y);
// Signed inside-distance to the drivable union (positive inside).
double drivable_inside_distance(const WorldMap& map, double x, double y);
bool point_on_lane_marking(const WorldMap& map, double x, double y);
bool point_in_obstacle(const WorldMap& map, double x, double y);

// Ego footprint: a 0.6 m square oriented with the heading.
constexpr double kEgoHalf = 0.3;
bool footprint_hits_obstacle(const WorldMap& map, const EgoState& pose);
bool footprint_on_drivable(const WorldMap& map, const EgoState& pose);

// --- rendering -----------------------------------------------------------

// Deterministic cell-center sampling in the ego frame; row 0 is farthest
// forward, column 0 is farthest left. Throws if the state is outside the
// map bounds.
Raster render(const EgoState& state, const WorldMap& map);

// --- instruction classification -----------------------------------------

// Rule-based classifier over a pose sequence. Priority:
// Stop > TurnLeft/TurnRight > SpeedUp/SlowDown > GoStraight.
InstructionClass classify_motion(const std::vector<EgoState>& poses,
                                 const MotionThresholds& thresholds);

// --- episode generation ---------------------------------------------------

// All template strings, 3 per class; index = class * 3 + variant.
const std::vector<std::string>& instruction_templates();
const std::string& instruction_template(InstructionClass c, int variant);
// Maps text back to a class if it matches a template exactly.
bool class_for_instruction_text(const std::string& text, InstructionClass* out);

WorldMap make_map(uint64_t seed, InstructionClass cls);

// Pure-pursuit rollout of the class-specific reference path. Deterministic
// in seed. Throws InvalidInputError if the class is infeasible for map
// (e.g. TurnLeft without a left branch).
Episode generate_episode(uint64_t seed, InstructionClass cls, const WorldMap& map);

// Convenience: builds its own map and resamples until the emitted episode
// passes the label-consistency and geometry gates.
Episode generate_episode(uint64_t seed, InstructionClass cls);

// Gates enforced on every emitted episode.
bool episode_gates_pass(const Episode& ep, const MotionThresholds& thresholds);

}  // namespace griddrive::world
