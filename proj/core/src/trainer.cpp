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

#include "griddrive/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace griddrive::train {

const char* future_frame_name(FutureFrame f) {
  switch (f) {
    case FutureFrame::NextFrame: return "next_frame";
    case FutureFrame::RandomFrame: return "random_frame";
    case FutureFrame::ActionOnly: return "action_only";
  }
  return "unknown";
}

const char* precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

void TrainConfig::validate() const {
  if (lambda_a < 0.0 || lambda_v < 0.0) throw ConfigError("config: lambda weights must be >= 0");
  if (warmup_steps < 1) throw ConfigError("config: warmup_steps must be >= 1");
  if (total_steps < 0) throw ConfigError("config: total_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("config: ema_decay must be in [0,1)");
  if (layout_mode == seq::LayoutMode::Interleaved &&
      (interleave_k < 2 || interleave_k > 6 || interleave_k % 2 != 0)) {
    throw ConfigError("config: interleave_k must be one of {2, 4, 6}");
  }
  if (resolved_t0_min() < history_len() - 1) {
    throw ConfigError("config: t0_min leaves too little history");
  }
  if (resolved_t0_max() + world::kPlanHorizon > world::kHorizon) {
    throw ConfigError("config: t0_max leaves no room for the plan horizon");
  }
  if (resolved_t0_min() > resolved_t0_max()) throw ConfigError("config: empty t0 range");
}

model::MoTConfig TrainConfig::mot_config(int vocab_size) const {
  model::MoTConfig mc;
  mc.layers = layers;
  mc.d_und = d_und;
  mc.d_gen = d_gen;
  mc.d_act = d_act;
  mc.d_attn = d_attn;
  mc.heads = heads;
  mc.ffn_mult = ffn_mult;
  mc.vocab_size = vocab_size;
  mc.time_bins = time_bins;
  mc.action_module = action_module;
  return mc;
}

seq::DropProbs TrainConfig::drop_probs() const {
  seq::DropProbs p;
  p.text = drop_text;
  p.context = drop_context;
  p.clean_image = drop_clean_image;
  p.clean_action = drop_clean_action;
  return p;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& v) {
  size_t pos = 0;
  const double d = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument(v);
  return d;
}

int parse_int(const std::string& v) {
  size_t pos = 0;
  const long d = std::stol(v, &pos);
  if (pos != v.size()) throw std::invalid_argument(v);
  return static_cast<int>(d);
}

uint64_t parse_u64(const std::string& v) {
  size_t pos = 0;
  const unsigned long long d = std::stoull(v, &pos);
  if (pos != v.size()) throw std::invalid_argument(v);
  return static_cast<uint64_t>(d);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(v);
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

void apply_config_entry(TrainConfig& c, const std::string& key, const std::string& value) {
  try {
    if (key == "lambda_a") c.lambda_a = parse_double(value);
    else if (key == "lambda_v") c.lambda_v = parse_double(value);
    else if (key == "base_lr") c.base_lr = parse_double(value);
    else if (key == "warmup_steps") c.warmup_steps = parse_int(value);
    else if (key == "total_steps") c.total_steps = parse_int(value);
    else if (key == "batch_size") c.batch_size = parse_int(value);
    else if (key == "ema_decay") c.ema_decay = parse_double(value);
    else if (key == "adam_beta1") c.adam_beta1 = parse_double(value);
    else if (key == "adam_beta2") c.adam_beta2 = parse_double(value);
    else if (key == "adam_eps") c.adam_eps = parse_double(value);
    else if (key == "weight_decay") c.weight_decay = parse_double(value);
    else if (key == "layout_mode") {
      if (value == "images_only") c.layout_mode = seq::LayoutMode::ImagesOnly;
      else if (value == "interleaved") c.layout_mode = seq::LayoutMode::Interleaved;
      else throw std::invalid_argument(value);
    } else if (key == "interleave_k") c.interleave_k = parse_int(value);
    else if (key == "future_frame") {
      if (value == "next_frame") c.future_frame = FutureFrame::NextFrame;
      else if (value == "random_frame") c.future_frame = FutureFrame::RandomFrame;
      else if (value == "action_only") c.future_frame = FutureFrame::ActionOnly;
      else throw std::invalid_argument(value);
    } else if (key == "action_module") {
      if (value == "expert") c.action_module = model::ActionModule::Expert;
      else if (value == "vlm") c.action_module = model::ActionModule::VLM;
      else if (value == "diffusion") c.action_module = model::ActionModule::Diffusion;
      else throw std::invalid_argument(value);
    } else if (key == "use_context") c.use_context = parse_bool(value);
    else if (key == "drop_text") c.drop_text = parse_double(value);
    else if (key == "drop_context") c.drop_context = parse_double(value);
    else if (key == "drop_clean_image") c.drop_clean_image = parse_double(value);
    else if (key == "drop_clean_action") c.drop_clean_action = parse_double(value);
    else if (key == "t0_min") c.t0_min = parse_int(value);
    else if (key == "t0_max") c.t0_max = parse_int(value);
    else if (key == "layers") c.layers = parse_int(value);
    else if (key == "d_und") c.d_und = parse_int(value);
    else if (key == "d_gen") c.d_gen = parse_int(value);
    else if (key == "d_act") c.d_act = parse_int(value);
    else if (key == "d_attn") c.d_attn = parse_int(value);
    else if (key == "heads") c.heads = parse_int(value);
    else if (key == "ffn_mult") c.ffn_mult = parse_int(value);
    else if (key == "time_bins") c.time_bins = parse_int(value);
    else if (key == "seed") c.seed = parse_u64(value);
    else if (key == "jobs") c.jobs = parse_int(value);
    else if (key == "precision") {
      if (value == "f32") c.precision = Precision::F32;
      else if (value == "f64") c.precision = Precision::F64;
      else throw std::invalid_argument(value);
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("config: bad value for '" + key + "': '" + value + "'");
  }
}

std::map<std::string, std::string> config_entries(const TrainConfig& c) {
  std::map<std::string, std::string> m;
  m["lambda_a"] = format_double(c.lambda_a);
  m["lambda_v"] = format_double(c.lambda_v);
  m["base_lr"] = format_double(c.base_lr);
  m["warmup_steps"] = std::to_string(c.warmup_steps);
  m["total_steps"] = std::to_string(c.total_steps);
  m["batch_size"] = std::to_string(c.batch_size);
  m["ema_decay"] = format_double(c.ema_decay);
  m["adam_beta1"] = format_double(c.adam_beta1);
  m["adam_beta2"] = format_double(c.adam_beta2);
  m["adam_eps"] = format_double(c.adam_eps);
  m["weight_decay"] = format_double(c.weight_decay);
  m["layout_mode"] =
      c.layout_mode == seq::LayoutMode::ImagesOnly ? "images_only" : "interleaved";
  m["interleave_k"] = std::to_string(c.interleave_k);
  m["future_frame"] = future_frame_name(c.future_frame);
  m["action_module"] = c.action_module == model::ActionModule::Expert
                           ? "expert"
                           : (c.action_module == model::ActionModule::VLM ? "vlm" : "diffusion");
  m["use_context"] = c.use_context ? "true" : "false";
  m["drop_text"] = format_double(c.drop_text);
  m["drop_context"] = format_double(c.drop_context);
  m["drop_clean_image"] = format_double(c.drop_clean_image);
  m["drop_clean_action"] = format_double(c.drop_clean_action);
  m["t0_min"] = std::to_string(c.t0_min);
  m["t0_max"] = std::to_string(c.t0_max);
  m["layers"] = std::to_string(c.layers);
  m["d_und"] = std::to_string(c.d_und);
  m["d_gen"] = std::to_string(c.d_gen);
  m["d_act"] = std::to_string(c.d_act);
  m["d_attn"] = std::to_string(c.d_attn);
  m["heads"] = std::to_string(c.heads);
  m["ffn_mult"] = std::to_string(c.ffn_mult);
  m["time_bins"] = std::to_string(c.time_bins);
  m["seed"] = std::to_string(c.seed);
  m["jobs"] = std::to_string(c.jobs);
  m["precision"] = precision_name(c.precision);
  return m;
}

std::string config_to_text(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) {
    out += k + " = " + v + "\n";
  }
  return out;
}

TrainConfig parse_config_text(const std::string& text, const TrainConfig& base) {
  TrainConfig c = base;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
    }
    try {
      apply_config_entry(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

TrainConfig parse_config_file(const std::string& path, const TrainConfig& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text, base);
}

double lr_at(int64_t step, const TrainConfig& config) {
  if (step < 0) throw InvalidInputError("lr_at: negative step");
  if (step >= config.warmup_steps) return config.base_lr;
  return config.base_lr * static_cast<double>(step) / config.warmup_steps;
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> kNames = {
      "next_frame", "random_frame", "action_only", "act_expert",  "act_vlm",
      "act_diffusion", "interleave2", "interleave4", "interleave6"};
  return kNames;
}

TrainConfig make_variant(const TrainConfig& config, const std::string& name) {
  TrainConfig c = config;
  if (name == "next_frame") {
    c.future_frame = FutureFrame::NextFrame;
  } else if (name == "random_frame") {
    c.future_frame = FutureFrame::RandomFrame;
  } else if (name == "action_only") {
    c.future_frame = FutureFrame::ActionOnly;
    c.lambda_v = 0.0;
  } else if (name == "act_expert") {
    c.action_module = model::ActionModule::Expert;
  } else if (name == "act_vlm") {
    c.action_module = model::ActionModule::VLM;
  } else if (name == "act_diffusion") {
    c.action_module = model::ActionModule::Diffusion;
  } else if (name == "interleave2" || name == "interleave4" || name == "interleave6") {
    c.layout_mode = seq::LayoutMode::Interleaved;
    c.interleave_k = name.back() - '0';
    // One shared window range so the variants' losses are comparable.
    c.t0_min = 5;
    c.t0_max = 8;
  } else {
    throw ConfigError("unknown variant: " + name);
  }
  return c;
}

template <typename S>
void ema_update(model::MoTWeights<S>& ema, const model::MoTWeights<S>& weights, double decay) {
  std::vector<const Matrix<S>*> src;
  weights.for_each_param(
      [&](const std::string&, const Matrix<S>& m, bool) { src.push_back(&m); });
  size_t i = 0;
  const S d = static_cast<S>(decay);
  const S one_minus = static_cast<S>(1.0 - decay);
  ema.for_each_param([&](const std::string&, Matrix<S>& e, bool) {
    const Matrix<S>& w = *src[i++];
    if (!e.same_shape(w)) throw ShapeError("ema_update: parameter shape mismatch");
    for (size_t j = 0; j < e.v.size(); ++j) e.v[j] = d * e.v[j] + one_minus * w.v[j];
  });
}

template <typename S>
void AdamState<S>::allocate(const model::MoTWeights<S>& weights) {
  m.clear();
  v.clear();
  weights.for_each_param([&](const std::string&, const Matrix<S>& p, bool) {
    m.emplace_back(p.rows, p.cols);
    v.emplace_back(p.rows, p.cols);
  });
}

template <typename S>
void adamw_step(model::MoTWeights<S>& weights, model::MoTWeights<S>& grads, AdamState<S>& opt,
                const TrainConfig& config, int64_t step, double lr) {
  std::vector<Matrix<S>*> gptrs;
  std::vector<bool> decays;
  grads.for_each_param([&](const std::string&, Matrix<S>& g, bool decay) {
    gptrs.push_back(&g);
    decays.push_back(decay);
  });
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
  size_t i = 0;
  weights.for_each_param([&](const std::string&, Matrix<S>& w, bool) {
    Matrix<S>& g = *gptrs[i];
    Matrix<S>& mm = opt.m[i];
    Matrix<S>& vv = opt.v[i];
    const bool decay = decays[i];
    ++i;
    for (size_t j = 0; j < w.v.size(); ++j) {
      const double gj = static_cast<double>(g.v[j]);
      const double mj = b1 * static_cast<double>(mm.v[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(vv.v[j]) + (1.0 - b2) * gj * gj;
      mm.v[j] = static_cast<S>(mj);
      vv.v[j] = static_cast<S>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      double update = mhat / (std::sqrt(vhat) + config.adam_eps);
      if (decay) update += config.weight_decay * static_cast<double>(w.v[j]);
      w.v[j] = static_cast<S>(static_cast<double>(w.v[j]) - lr * update);
    }
  });
}

template <typename S>
TrainerState<S> init_trainer(const TrainConfig& config, const world::Dataset& data) {
  config.validate();
  TrainerState<S> state;
  state.config = config;
  state.vocab = codec::Vocabulary::build_default();
  state.stats = codec::compute_action_stats(data.episodes);
  const model::MoTConfig mc = config.mot_config(state.vocab.size());
  state.weights.allocate(mc);
  Rng init_rng = Rng(config.seed).child("init");
  state.weights.init(init_rng);
  state.ema = state.weights;
  state.opt.allocate(state.weights);
  state.grads.allocate(mc);
  state.sample_grads.resize(config.batch_size);
  for (auto& g : state.sample_grads) g.allocate(mc);
  return state;
}

namespace {

template <typename S>
struct SampleLoss {
  double loss_a = 0.0;
  double loss_v = 0.0;
  bool has_v = false;
  uint64_t episode_seed = 0;
};

// Builds and runs one training sample end to end, accumulating gradients.
template <typename S>
SampleLoss<S> run_sample(TrainerState<S>& state, const world::Dataset& data, int64_t step,
                         int index, model::MoTWeights<S>& grads,
                         const model::TransposedWeights<S>& transposed) {
  const TrainConfig& cfg = state.config;
  Rng rng = Rng(cfg.seed).child("train", static_cast<int>(step), index);
  const world::Episode& ep = data.episodes[rng.uniform_index(data.episodes.size())];

  seq::SampleSpec spec;
  const int t0_lo = cfg.resolved_t0_min();
  const int t0_hi = cfg.resolved_t0_max();
  spec.t0 = t0_lo + static_cast<int>(rng.uniform_index(t0_hi - t0_lo + 1));
  spec.mode = cfg.layout_mode;
  spec.interleave_k = cfg.interleave_k;
  spec.use_context = cfg.use_context;
  switch (cfg.future_frame) {
    case FutureFrame::NextFrame:
      spec.task = seq::Task::JointTraining;
      spec.future_offset = world::kPlanHorizon;
      break;
    case FutureFrame::RandomFrame: {
      spec.task = seq::Task::JointTraining;
      const int k = 1 + static_cast<int>(rng.uniform_index(world::kPlanHorizon));
      spec.future_offset = k;
      spec.frame_token = k;
      break;
    }
    case FutureFrame::ActionOnly:
      spec.task = seq::Task::Planning;
      spec.future_offset = world::kPlanHorizon;
      break;
  }

  seq::PackedSample<S> sample = seq::pack_sample<S>(ep, spec, state.vocab, state.stats, &rng);
  sample.layout = seq::cfg_dropout(sample.layout, cfg.drop_probs(), &rng);
  flow::noisify_sample(sample, rng);

  model::MoTCache<S> cache;
  const model::MoTOutput<S> out = mot_forward(sample, state.weights, &cache);

  SampleLoss<S> result;
  result.episode_seed = ep.seed;
  std::vector<Matrix<S>> d_eps(sample.layout.blocks.size());
  const double batch_scale = 1.0 / cfg.batch_size;
  for (size_t bi = 0; bi < sample.layout.blocks.size(); ++bi) {
    const seq::Block& b = sample.layout.blocks[bi];
    if (!b.supervised) continue;
    if (b.kind == seq::BlockKind::ActionNoisy) {
      flow::LossResult<S> lr = flow::action_loss(sample.eps[bi], out.eps_hat[bi]);
      result.loss_a += lr.value;
      const S scale = static_cast<S>(cfg.lambda_a * batch_scale);
      for (S& g : lr.d_eps_hat.v) g *= scale;
      d_eps[bi] = std::move(lr.d_eps_hat);
    } else {
      flow::LossResult<S> lr = flow::image_loss(sample.eps[bi], out.eps_hat[bi]);
      result.loss_v += lr.value;
      result.has_v = true;
      const S scale = static_cast<S>(cfg.lambda_v * batch_scale);
      for (S& g : lr.d_eps_hat.v) g *= scale;
      d_eps[bi] = std::move(lr.d_eps_hat);
    }
  }
  mot_backward(sample, state.weights, cache, d_eps, grads, &transposed);
  return result;
}

}  // namespace

template <typename S>
StepStats train_step(TrainerState<S>& state, const world::Dataset& data) {
  const TrainConfig& cfg = state.config;
  const int64_t step = state.step + 1;
  const int batch = cfg.batch_size;

  std::vector<SampleLoss<S>> losses(batch);
  for (auto& g : state.sample_grads) g.zero();
  model::TransposedWeights<S> transposed;
  transposed.build(state.weights);
  parallel_for(batch, cfg.jobs, [&](int i) {
    losses[i] = run_sample(state, data, step, i, state.sample_grads[i], transposed);
  });

  // Deterministic reduction in sample order, independent of thread count.
  state.grads.zero();
  std::vector<Matrix<S>*> acc;
  state.grads.for_each_param([&](const std::string&, Matrix<S>& m, bool) { acc.push_back(&m); });
  for (int i = 0; i < batch; ++i) {
    std::vector<const Matrix<S>*> src;
    state.sample_grads[i].for_each_param(
        [&](const std::string&, const Matrix<S>& m, bool) { src.push_back(&m); });
    for (size_t p = 0; p < acc.size(); ++p) {
      Matrix<S>& a = *acc[p];
      const Matrix<S>& b = *src[p];
      for (size_t j = 0; j < a.v.size(); ++j) a.v[j] += b.v[j];
    }
  }

  StepStats stats;
  for (const auto& l : losses) {
    stats.loss_a += l.loss_a / batch;
    stats.loss_v += l.loss_v / batch;
  }
  stats.total = cfg.lambda_a * stats.loss_a + cfg.lambda_v * stats.loss_v;
  stats.lr = lr_at(step, cfg);

  if (!std::isfinite(stats.total)) {
    std::string dump = "non-finite loss at step " + std::to_string(step) + "; episode seeds:";
    for (const auto& l : losses) dump += " " + std::to_string(l.episode_seed);
    throw NumericalError(dump);
  }

  adamw_step(state.weights, state.grads, state.opt, cfg, step, stats.lr);
  ema_update(state.ema, state.weights, cfg.ema_decay);
  state.step = step;
  return stats;
}

template <typename S>
StepStats run_training(TrainerState<S>& state, const world::Dataset& data,
                       const std::function<void(int64_t, const StepStats&)>& on_step) {
  StepStats last;
  while (state.step < state.config.total_steps) {
    last = train_step(state, data);
    if (on_step) on_step(state.step, last);
  }
  return last;
}

template void ema_update(model::MoTWeights<float>&, const model::MoTWeights<float>&, double);
template void ema_update(model::MoTWeights<double>&, const model::MoTWeights<double>&, double);
template struct AdamState<float>;
template struct AdamState<double>;
template void adamw_step(model::MoTWeights<float>&, model::MoTWeights<float>&, AdamState<float>&,
                         const TrainConfig&, int64_t, double);
template void adamw_step(model::MoTWeights<double>&, model::MoTWeights<double>&,
                         AdamState<double>&, const TrainConfig&, int64_t, double);
template TrainerState<float> init_trainer(const TrainConfig&, const world::Dataset&);
template TrainerState<double> init_trainer(const TrainConfig&, const world::Dataset&);
template StepStats train_step(TrainerState<float>&, const world::Dataset&);
template StepStats train_step(TrainerState<double>&, const world::Dataset&);
template StepStats run_training(TrainerState<float>&, const world::Dataset&,
                                const std::function<void(int64_t, const StepStats&)>&);
template StepStats run_training(TrainerState<double>&, const world::Dataset&,
                                const std::function<void(int64_t, const StepStats&)>&);

}  // namespace griddrive::train
