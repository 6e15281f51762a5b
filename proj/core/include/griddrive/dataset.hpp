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

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "griddrive/world.hpp"

namespace griddrive::world {

constexpr int kDatasetFormatVersion = 1;

// Dataset container: a directory holding manifest.json plus binary shard
// files. Per-episode record layout (little-endian):
//   seed u64, class u8, text length u32 + UTF-8 bytes,
//   poses  f64 x 4 x (H+1)   (x, y, theta, v)
//   actions f64 x 3 x H      (dx, dy, dtheta)
//   frames  u8  x 32*32*3 x (H+1)
// Maps are not stored; they are rebuilt deterministically from the
// episode seed and class.
struct DatasetMeta {
  int format_version = kDatasetFormatVersion;
  uint64_t seed = 0;
  int episode_count = 0;
  double rate_hz = 2.0;
  int horizon = kHorizon;
  std::string ego_frame = "x-forward y-left";
  MotionThresholds thresholds;
  std::map<std::string, double> class_mix;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Episode> episodes;
};

// Uniform mix helper.
std::map<std::string, double> uniform_class_mix();

// Generates n episodes with a largest-remainder class allocation shuffled
// deterministically by seed. Generation parallelizes across episodes.
Dataset generate_dataset(int n_episodes, uint64_t seed,
                         const std::map<std::string, double>& class_mix,
                         int jobs = 0);

void write_dataset(const std::string& dir, const Dataset& ds,
                   int episodes_per_shard = 1000);
Dataset read_dataset(const std::string& dir);

}  // namespace griddrive::world
