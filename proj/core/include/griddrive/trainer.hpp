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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "griddrive/codec.hpp"
#include "griddrive/common.hpp"
#include "griddrive/dataset.hpp"
#include "griddrive/flow.hpp"
#include "griddrive/mot.hpp"
#include "griddrive/seqpack.hpp"

namespace griddrive::train {

enum class FutureFrame : uint8_t { NextFrame = 0, RandomFrame = 1, ActionOnly = 2 };
enum class Precision : uint8_t { F32 = 0, F64 = 1 };

const char* future_frame_name(FutureFrame f);
const char* precision_name(Precision p);

struct TrainConfig {
  // Objective and schedule.
  double lambda_a = 1.0;
  double lambda_v = 1.0;
  double base_lr = 2e-5;
  int warmup_steps = 2500;
  int total_steps = 5000;
  int batch_size = 16;
  double ema_decay = 0.9999;
  // Optimizer.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  // Task composition.
  seq::LayoutMode layout_mode = seq::LayoutMode::ImagesOnly;
  int interleave_k = 4;
  FutureFrame future_frame = FutureFrame::NextFrame;
  model::ActionModule action_module = model::ActionModule::Expert;
  bool use_context = true;
  double drop_text = 0.1;
  double drop_context = 0.1;
  double drop_clean_image = 0.1;
  double drop_clean_action = 0.1;
  int t0_min = -1;  // -1: derived from the layout mode
  int t0_max = -1;
  // Model dimensions.
  int layers = 4;
  int d_und = 64;
  int d_gen = 64;
  int d_act = 32;
  int d_attn = 64;
  int heads = 4;
  int ffn_mult = 4;
  int time_bins = 256;
  // Run control.
  uint64_t seed = 0;
  int jobs = 0;
  Precision precision = Precision::F32;

  void validate() const;
  model::MoTConfig mot_config(int vocab_size) const;
  seq::DropProbs drop_probs() const;
  int history_len() const {
    return layout_mode == seq::LayoutMode::Interleaved ? interleave_k : 4;
  }
  int resolved_t0_min() const { return t0_min >= 0 ? t0_min : history_len() - 1; }
  int resolved_t0_max() const {
    return t0_max >= 0 ? t0_max : world::kHorizon - world::kPlanHorizon;
  }
};

// Flat `key = value` config file; '#' starts a comment. Unknown keys and
// malformed lines raise ConfigError naming the line.
TrainConfig parse_config_text(const std::string& text, const TrainConfig& base = {});
TrainConfig parse_config_file(const std::string& path, const TrainConfig& base = {});
void apply_config_entry(TrainConfig& config, const std::string& key, const std::string& value);
std::map<std::string, std::string> config_entries(const TrainConfig& config);
std::string config_to_text(const TrainConfig& config);

// Linear warmup from zero to base_lr over warmup_steps, constant after.
double lr_at(int64_t step, const TrainConfig& config);

// Ablation variants. Returns the adjusted config; unknown names raise.
TrainConfig make_variant(const TrainConfig& config, const std::string& name);
const std::vector<std::string>& variant_names();

// e <- decay * e + (1 - decay) * w, elementwise over all parameters.
template <typename S>
void ema_update(model::MoTWeights<S>& ema, const model::MoTWeights<S>& weights, double decay);

template <typename S>
struct AdamState {
  std::vector<Matrix<S>> m;
  std::vector<Matrix<S>> v;
  void allocate(const model::MoTWeights<S>& weights);
};

template <typename S>
void adamw_step(model::MoTWeights<S>& weights, model::MoTWeights<S>& grads, AdamState<S>& opt,
                const TrainConfig& config, int64_t step, double lr);

template <typename S>
struct TrainerState {
  TrainConfig config;
  codec::Vocabulary vocab;
  codec::ActionStats stats;
  model::MoTWeights<S> weights;
  model::MoTWeights<S> ema;
  AdamState<S> opt;
  int64_t step = 0;  // last completed step, 1-based

  // Scratch reused across steps.
  std::vector<model::MoTWeights<S>> sample_grads;
  model::MoTWeights<S> grads;
};

template <typename S>
TrainerState<S> init_trainer(const TrainConfig& config, const world::Dataset& data);

struct StepStats {
  double loss_a = 0.0;
  double loss_v = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

// One optimizer step on a batch drawn statelessly from (seed, step).
// Throws NumericalError with a batch dump on non-finite loss.
template <typename S>
StepStats train_step(TrainerState<S>& state, const world::Dataset& data);

// Runs steps until config.total_steps, streaming rows to the optional
// callback (used for the metrics CSV).
template <typename S>
StepStats run_training(TrainerState<S>& state, const world::Dataset& data,
                       const std::function<void(int64_t, const StepStats&)>& on_step = nullptr);

// --- checkpoint container ----------------------------------------------

constexpr int kCheckpointFormatVersion = 1;

template <typename S>
void save_checkpoint(const std::string& path, const TrainerState<S>& state);

// Peeks the stored precision so callers can dispatch on scalar type.
Precision checkpoint_precision(const std::string& path);

template <typename S>
TrainerState<S> load_checkpoint(const std::string& path);

}  // namespace griddrive::train
