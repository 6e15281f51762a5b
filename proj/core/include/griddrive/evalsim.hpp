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

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "griddrive/common.hpp"
#include "griddrive/imageio.hpp"
#include "griddrive/rng.hpp"
#include "griddrive/world.hpp"

namespace griddrive::sim {

// Non-reactive rollout over the 8-step plan horizon.
struct RolloutEvent {
  enum class Type { Collision, OffDrivable };
  Type type;
  int step;  // pose index reached when the event fired (1-based)
};

struct RolloutTrace {
  std::vector<world::EgoState> poses;  // actions + 1
  std::vector<RolloutEvent> events;    // sorted by step
  std::vector<double> speeds;          // per pose
  std::vector<double> accels;          // per step, m/s^2
};

RolloutTrace rollout(const world::WorldMap& map, const world::EgoState& start,
                     const std::vector<world::Action>& actions);

// Mini driver score: multiplicative collision/drivable gates over a
// weighted average of progress, time-to-collision and comfort.
struct ScoreCard {
  int nc = 1;     // no collision
  int dac = 1;    // drivable-area compliance
  double ep = 0;  // ego progress in [0, 1]
  int ttc = 1;    // time-to-collision gate
  int comf = 1;   // comfort gate
  double aggregate = 0.0;
};

constexpr double kComfortAccel = 2.0;    // m/s^2
constexpr double kComfortYaw = 0.8;      // rad per step
constexpr double kStopProgress = 0.2;    // below this reference length EP := 1

ScoreCard score(const RolloutTrace& trace, const world::WorldMap& map,
                const std::vector<world::EgoState>& reference);

double aggregate_score(int nc, int dac, double ep, int ttc, int comf);

// A plan sampler: episode + context time + rng stream -> denormalized
// kPlanHorizon x 3 actions. Wraps either the model sampler or expert
// replay.
using PlanSampler = std::function<MatD(const world::Episode&, int, Rng)>;

PlanSampler expert_replay_sampler();

// Fraction of episodes whose sampled plan classifies back to the episode
// instruction. Episode i uses the stream rng.child("episode", i).
double follow_rate(const std::vector<world::Episode>& episodes, int t0,
                   const PlanSampler& sampler, const world::MotionThresholds& thresholds,
                   const Rng& rng, int jobs = 0);

struct BestOfResult {
  MatD best_actions;
  int best_index = 0;
  std::vector<ScoreCard> cards;
};

// Draws n candidates on split streams rng.child("candidate", i), scores
// each by rollout, returns the argmax aggregate (ties to the lowest
// index).
BestOfResult best_of_n(const world::Episode& episode, int t0, const PlanSampler& sampler,
                       int n, const Rng& rng);

// --- evaluation reports ----------------------------------------------------

struct EvalRow {
  int episode_id = 0;
  world::InstructionClass cls = world::InstructionClass::GoStraight;
  bool followed = false;
  ScoreCard card;
};

struct EvalSummary {
  double follow_rate = 0.0;
  double mean_aggregate = 0.0;
  std::map<std::string, double> follow_rate_per_class;
};

struct EvalOptions {
  int t0 = 3;
  int best_of = 1;
  world::MotionThresholds thresholds;
  int jobs = 0;
  std::optional<std::string> overlay_dir;
};

std::vector<EvalRow> evaluate_episodes(const std::vector<world::Episode>& episodes,
                                       const PlanSampler& sampler, const EvalOptions& options,
                                       const Rng& rng);
EvalSummary summarize(const std::vector<EvalRow>& rows);

// CSV: episode_id,instruction_class,followed,NC,DAC,EP,TTC,Comf,aggregate
void write_report_csv(const std::string& path, const std::vector<EvalRow>& rows);
void write_summary_json(const std::string& path, const EvalSummary& summary);

// Top-down map raster with the expert (reference) and planned
// trajectories drawn in.
Rgb8Image render_overlay(const world::Episode& episode, int t0,
                         const std::vector<world::EgoState>& planned);

}  // namespace griddrive::sim
