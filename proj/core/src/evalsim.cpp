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

#include "griddrive/evalsim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "griddrive/codec.hpp"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace griddrive::sim {

RolloutTrace rollout(const world::WorldMap& map, const world::EgoState& start,
                     const std::vector<world::Action>& actions) {
  RolloutTrace trace;
  trace.poses.push_back(start);
  trace.speeds.push_back(start.v);
  for (size_t k = 0; k < actions.size(); ++k) {
    const world::EgoState next = world::step(trace.poses.back(), actions[k]);
    const int step_idx = static_cast<int>(k) + 1;
    if (world::footprint_hits_obstacle(map, next)) {
      trace.events.push_back({RolloutEvent::Type::Collision, step_idx});
    }
    if (!world::footprint_on_drivable(map, next)) {
      trace.events.push_back({RolloutEvent::Type::OffDrivable, step_idx});
    }
    trace.accels.push_back((next.v - trace.poses.back().v) / world::kDt);
    trace.poses.push_back(next);
    trace.speeds.push_back(next.v);
  }
  std::stable_sort(trace.events.begin(), trace.events.end(),
                   [](const RolloutEvent& a, const RolloutEvent& b) { return a.step < b.step; });
  return trace;
}

double aggregate_score(int nc, int dac, double ep, int ttc, int comf) {
  return nc * dac * (5.0 * ep + 5.0 * ttc + 2.0 * comf) / 12.0;
}

namespace {

// Arc-length position of the closest polyline point to p.
double projected_progress(const std::vector<world::EgoState>& reference,
                          const world::EgoState& p) {
  double best_d2 = 1e30;
  double best_s = 0.0;
  double s = 0.0;
  for (size_t i = 0; i + 1 < reference.size(); ++i) {
    const double ax = reference[i].x, ay = reference[i].y;
    const double bx = reference[i + 1].x, by = reference[i + 1].y;
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = 0.0;
    if (len2 > 1e-18) {
      t = std::clamp(((p.x - ax) * vx + (p.y - ay) * vy) / len2, 0.0, 1.0);
    }
    const double cx = ax + t * vx, cy = ay + t * vy;
    const double d2 = (p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy);
    if (d2 < best_d2) {
      best_d2 = d2;
      best_s = s + t * std::sqrt(len2);
    }
    s += std::sqrt(len2);
  }
  return best_s;
}

double polyline_length(const std::vector<world::EgoState>& poses) {
  double s = 0.0;
  for (size_t i = 0; i + 1 < poses.size(); ++i) {
    const double dx = poses[i + 1].x - poses[i].x;
    const double dy = poses[i + 1].y - poses[i].y;
    s += std::sqrt(dx * dx + dy * dy);
  }
  return s;
}

}  // namespace

ScoreCard score(const RolloutTrace& trace, const world::WorldMap& map,
                const std::vector<world::EgoState>& reference) {
  ScoreCard card;
  for (const RolloutEvent& e : trace.events) {
    if (e.type == RolloutEvent::Type::Collision) card.nc = 0;
    if (e.type == RolloutEvent::Type::OffDrivable) card.dac = 0;
  }

  const double ref_len = polyline_length(reference);
  if (ref_len < kStopProgress) {
    card.ep = 1.0;  // progress is meaningless for an intended stop
  } else {
    card.ep = std::clamp(projected_progress(reference, trace.poses.back()) / ref_len, 0.0, 1.0);
  }

  // Extrapolate the final velocity two steps.
  if (trace.poses.size() >= 2) {
    world::EgoState p = trace.poses.back();
    const world::EgoState& prev = trace.poses[trace.poses.size() - 2];
    const double c = std::cos(prev.theta);
    const double s = std::sin(prev.theta);
    const double wx = p.x - prev.x, wy = p.y - prev.y;
    world::Action last{c * wx + s * wy, -s * wx + c * wy,
                       wrap_angle(p.theta - prev.theta)};
    for (int i = 0; i < 2 && card.ttc == 1; ++i) {
      p = world::step(p, last);
      if (world::footprint_hits_obstacle(map, p)) card.ttc = 0;
    }
  }

  for (double a : trace.accels) {
    if (std::abs(a) > kComfortAccel) card.comf = 0;
  }
  for (size_t k = 0; k + 1 < trace.poses.size(); ++k) {
    if (std::abs(wrap_angle(trace.poses[k + 1].theta - trace.poses[k].theta)) > kComfortYaw) {
      card.comf = 0;
    }
  }

  card.aggregate = aggregate_score(card.nc, card.dac, card.ep, card.ttc, card.comf);
  return card;
}

PlanSampler expert_replay_sampler() {
  return [](const world::Episode& ep, int t0, Rng) {
    MatD plan(world::kPlanHorizon, codec::kActionDim);
    for (int k = 0; k < world::kPlanHorizon; ++k) {
      plan.at(k, 0) = ep.actions[t0 + k].dx;
      plan.at(k, 1) = ep.actions[t0 + k].dy;
      plan.at(k, 2) = ep.actions[t0 + k].dtheta;
    }
    return plan;
  };
}

double follow_rate(const std::vector<world::Episode>& episodes, int t0,
                   const PlanSampler& sampler, const world::MotionThresholds& thresholds,
                   const Rng& rng, int jobs) {
  if (episodes.empty()) throw InvalidInputError("follow_rate: empty episode set");
  std::vector<uint8_t> followed(episodes.size(), 0);
  parallel_for(static_cast<int>(episodes.size()), jobs, [&](int i) {
    const world::Episode& ep = episodes[i];
    const MatD plan = sampler(ep, t0, rng.child("episode", i));
    const auto actions = codec::mat_to_actions(plan);
    const auto poses = codec::fold(ep.poses[t0], actions);
    followed[i] = world::classify_motion(poses, thresholds) == ep.instruction_class ? 1 : 0;
  });
  size_t n = 0;
  for (uint8_t f : followed) n += f;
  return static_cast<double>(n) / episodes.size();
}

BestOfResult best_of_n(const world::Episode& episode, int t0, const PlanSampler& sampler,
                       int n, const Rng& rng) {
  if (n < 1) throw InvalidInputError("best_of_n: n must be >= 1");
  BestOfResult result;
  const auto reference = std::vector<world::EgoState>(
      episode.poses.begin() + t0, episode.poses.begin() + t0 + world::kPlanHorizon + 1);
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    const MatD plan = sampler(episode, t0, rng.child("candidate", i));
    const RolloutTrace trace =
        rollout(episode.map, episode.poses[t0], codec::mat_to_actions(plan));
    const ScoreCard card = score(trace, episode.map, reference);
    result.cards.push_back(card);
    if (card.aggregate > best) {
      best = card.aggregate;
      result.best_index = i;
      result.best_actions = plan;
    }
  }
  return result;
}

std::vector<EvalRow> evaluate_episodes(const std::vector<world::Episode>& episodes,
                                       const PlanSampler& sampler, const EvalOptions& options,
                                       const Rng& rng) {
  if (episodes.empty()) throw InvalidInputError("evaluate_episodes: empty episode set");
  std::vector<EvalRow> rows(episodes.size());
  if (options.overlay_dir) {
    std::error_code ec;
    fs::create_directories(*options.overlay_dir, ec);
    if (ec) throw IoError("cannot create overlay dir: " + *options.overlay_dir);
  }
  parallel_for(static_cast<int>(episodes.size()), options.jobs, [&](int i) {
    const world::Episode& ep = episodes[i];
    const Rng ep_rng = rng.child("episode", i);
    const BestOfResult pick = best_of_n(ep, options.t0, sampler, options.best_of, ep_rng);
    const auto actions = codec::mat_to_actions(pick.best_actions);
    const auto poses = codec::fold(ep.poses[options.t0], actions);
    EvalRow row;
    row.episode_id = i;
    row.cls = ep.instruction_class;
    row.followed =
        world::classify_motion(poses, options.thresholds) == ep.instruction_class;
    row.card = pick.cards[pick.best_index];
    rows[i] = row;
    if (options.overlay_dir) {
      char name[48];
      std::snprintf(name, sizeof(name), "episode_%04d.png", i);
      write_png((fs::path(*options.overlay_dir) / name).string(),
                render_overlay(ep, options.t0, poses));
    }
  });
  return rows;
}

EvalSummary summarize(const std::vector<EvalRow>& rows) {
  EvalSummary s;
  std::map<std::string, std::pair<int, int>> per_class;
  for (const EvalRow& r : rows) {
    s.follow_rate += r.followed ? 1.0 : 0.0;
    s.mean_aggregate += r.card.aggregate;
    auto& [followed, total] = per_class[world::class_name(r.cls)];
    followed += r.followed ? 1 : 0;
    total += 1;
  }
  if (!rows.empty()) {
    s.follow_rate /= static_cast<double>(rows.size());
    s.mean_aggregate /= static_cast<double>(rows.size());
  }
  for (const auto& [name, counts] : per_class) {
    s.follow_rate_per_class[name] =
        counts.second > 0 ? static_cast<double>(counts.first) / counts.second : 0.0;
  }
  return s;
}

void write_report_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report: " + path);
  out << "episode_id,instruction_class,followed,NC,DAC,EP,TTC,Comf,aggregate\n";
  out.precision(6);
  for (const EvalRow& r : rows) {
    out << r.episode_id << ',' << world::class_name(r.cls) << ',' << (r.followed ? 1 : 0) << ','
        << r.card.nc << ',' << r.card.dac << ',' << r.card.ep << ',' << r.card.ttc << ','
        << r.card.comf << ',' << r.card.aggregate << '\n';
  }
}

void write_summary_json(const std::string& path, const EvalSummary& summary) {
  json j;
  j["follow_rate"] = summary.follow_rate;
  j["mean_aggregate"] = summary.mean_aggregate;
  j["follow_rate_per_class"] = summary.follow_rate_per_class;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write summary: " + path);
  out << j.dump(2) << "\n";
}

namespace {

struct OverlayFrame {
  double min_x, min_y, max_x, max_y;
  int width, height;
  double scale;
  int px(double x) const { return static_cast<int>((x - min_x) * scale); }
  int py(double y) const { return height - 1 - static_cast<int>((y - min_y) * scale); }
};

void draw_polyline(Rgb8Image& img, const OverlayFrame& f,
                   const std::vector<world::EgoState>& poses, uint8_t r, uint8_t g, uint8_t b) {
  for (size_t i = 0; i + 1 < poses.size(); ++i) {
    const double steps = 64.0;
    for (int s = 0; s <= 64; ++s) {
      const double t = s / steps;
      const double x = poses[i].x + t * (poses[i + 1].x - poses[i].x);
      const double y = poses[i].y + t * (poses[i + 1].y - poses[i].y);
      const int cx = f.px(x), cy = f.py(y);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int px = cx + dx, py = cy + dy;
          if (px < 0 || py < 0 || px >= img.width || py >= img.height) continue;
          uint8_t* p = img.at(py, px);
          p[0] = r;
          p[1] = g;
          p[2] = b;
        }
      }
    }
  }
}

}  // namespace

Rgb8Image render_overlay(const world::Episode& episode, int t0,
                         const std::vector<world::EgoState>& planned) {
  const world::WorldMap& map = episode.map;
  OverlayFrame f{};
  f.min_x = map.main_x_min - 2.0;
  f.max_x = map.main_x_max + 2.0;
  f.min_y = -12.0;
  f.max_y = 12.0;
  if (map.branch_left) f.max_y = std::max(f.max_y, map.branch_len + 2.0);
  if (map.branch_right) f.min_y = std::min(f.min_y, -map.branch_len - 2.0);
  f.scale = 12.0;  // pixels per meter
  f.width = static_cast<int>((f.max_x - f.min_x) * f.scale);
  f.height = static_cast<int>((f.max_y - f.min_y) * f.scale);

  Rgb8Image img(f.width, f.height);
  for (int py = 0; py < f.height; ++py) {
    for (int px = 0; px < f.width; ++px) {
      const double x = f.min_x + (px + 0.5) / f.scale;
      const double y = f.max_y - (py + 0.5) / f.scale;
      uint8_t* p = img.at(py, px);
      if (world::point_in_obstacle(map, x, y)) {
        p[0] = 190;
        p[1] = 60;
        p[2] = 60;
      } else if (world::point_on_lane_marking(map, x, y)) {
        p[0] = 230;
        p[1] = 230;
        p[2] = 210;
      } else if (world::point_drivable(map, x, y)) {
        p[0] = 90;
        p[1] = 90;
        p[2] = 95;
      } else {
        p[0] = 24;
        p[1] = 32;
        p[2] = 24;
      }
    }
  }

  const std::vector<world::EgoState> expert(
      episode.poses.begin() + t0,
      episode.poses.begin() + std::min<size_t>(episode.poses.size(), t0 + world::kPlanHorizon + 1));
  draw_polyline(img, f, expert, 90, 200, 90);
  draw_polyline(img, f, planned, 80, 140, 255);
  return img;
}

}  // namespace griddrive::sim
