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

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "griddrive/dataset.hpp"
#include "griddrive/digest.hpp"
#include "griddrive/evalsim.hpp"
#include "griddrive/flow.hpp"
#include "griddrive/imageio.hpp"
#include "griddrive/seqpack.hpp"
#include "griddrive/trainer.hpp"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace griddrive;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Run manifest: every command emits one, with enough resolved state to
// re-run the command bit-identically (in 64-bit mode).

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  uint64_t seed = 0;
  json config;
  json inputs = json::array();
  json outputs = json::array();
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void add_input(const std::string& path) {
    json entry;
    entry["path"] = path;
    if (fs::is_directory(path)) {
      std::string acc;
      std::vector<std::string> files;
      for (const auto& e : fs::recursive_directory_iterator(path)) {
        if (e.is_regular_file()) files.push_back(e.path().string());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        acc += fs::path(f).filename().string() + ":" + sha1_file_hex(f) + "\n";
      }
      entry["sha1"] = sha1_hex(acc.data(), acc.size());
    } else if (fs::is_regular_file(path)) {
      entry["sha1"] = sha1_file_hex(path);
    }
    inputs.push_back(entry);
  }

  void add_output(const std::string& path) { outputs.push_back(path); }

  void write(const std::string& path) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["seed"] = seed;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["wall_clock_sec"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    j["versions"] = {{"tool", kVersion},
                     {"dataset_format", world::kDatasetFormatVersion},
                     {"checkpoint_format", train::kCheckpointFormatVersion}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write run manifest: " + path);
    out << j.dump(2) << "\n";
  }
};

std::map<std::string, double> parse_class_mix(const std::string& text) {
  if (text.empty() || text == "uniform") return world::uniform_class_mix();
  std::map<std::string, double> mix;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const size_t eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("class mix entry needs name=weight: " + item);
    mix[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
  }
  return mix;
}

train::TrainConfig resolve_config(const std::string& config_path,
                                  const std::vector<std::string>& overrides) {
  train::TrainConfig config;
  if (!config_path.empty()) config = train::parse_config_file(config_path, config);
  for (const std::string& kv : overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
    std::string key = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);
    auto strip = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ')) s.pop_back();
    };
    strip(key);
    strip(value);
    train::apply_config_entry(config, key, value);
  }
  return config;
}

json config_json(const train::TrainConfig& config) {
  json j;
  for (const auto& [k, v] : train::config_entries(config)) j[k] = v;
  return j;
}

// Dispatches a generic callable on the checkpoint's stored precision.
template <typename Fn>
int with_checkpoint(const std::string& path, Fn&& fn) {
  if (train::checkpoint_precision(path) == train::Precision::F32) {
    auto state = train::load_checkpoint<float>(path);
    return fn(state);
  }
  auto state = train::load_checkpoint<double>(path);
  return fn(state);
}

template <typename S>
sim::PlanSampler model_sampler(const train::TrainerState<S>& state, bool use_ema,
                               const flow::GuidanceConfig& g, int jobs) {
  flow::Sampler<S> sampler;
  sampler.weights = use_ema ? &state.ema : &state.weights;
  sampler.vocab = &state.vocab;
  sampler.stats = &state.stats;
  sampler.mode = state.config.layout_mode;
  sampler.interleave_k = state.config.interleave_k;
  sampler.use_context = state.config.use_context;
  sampler.jobs = jobs;
  return [sampler, g](const world::Episode& ep, int t0, Rng rng) {
    return flow::sample_actions(sampler, ep, t0, g, rng);
  };
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  int episodes = 0;
  uint64_t seed = 0;
  std::string out;
  std::string class_mix = "uniform";
  int jobs = 0;
  int shard_size = 1000;
};

int cmd_gen_data(const GenDataArgs& args, const std::vector<std::string>& argv) {
  if (args.episodes < 1) throw ConfigError("--episodes must be >= 1");
  RunManifest manifest;
  manifest.command = "gen-data";
  manifest.argv = argv;
  manifest.seed = args.seed;
  manifest.config = {{"episodes", args.episodes},
                     {"class_mix", args.class_mix},
                     {"shard_size", args.shard_size}};
  world::Dataset ds =
      world::generate_dataset(args.episodes, args.seed, parse_class_mix(args.class_mix), args.jobs);
  world::write_dataset(args.out, ds, args.shard_size);
  manifest.add_output(args.out);
  manifest.write(args.out + ".run.json");
  std::printf("wrote %d episodes to %s\n", args.episodes, args.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string data;
  std::string out;
  std::string resume;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::optional<int> jobs;
  std::string dump_mask_dir;
};

template <typename S>
int run_train(train::TrainerState<S>& state, const world::Dataset& data, const TrainArgs& args,
              RunManifest& manifest, bool resumed) {
  fs::create_directories(args.out);
  const std::string metrics_path = (fs::path(args.out) / "metrics.csv").string();
  std::ofstream metrics;
  if (resumed && fs::exists(metrics_path)) {
    metrics.open(metrics_path, std::ios::app);
  } else {
    metrics.open(metrics_path, std::ios::trunc);
    metrics << "step,loss_A,loss_V,total,lr\n";
  }
  if (!metrics) throw IoError("cannot open metrics log: " + metrics_path);
  metrics.precision(10);

  if (!args.dump_mask_dir.empty()) {
    fs::create_directories(args.dump_mask_dir);
    seq::LayoutSpec ls;
    ls.history_len = state.config.history_len();
    ls.text_tokens = 8;
    ls.mode = state.config.layout_mode;
    ls.interleave_k = state.config.interleave_k;
    ls.use_context = state.config.use_context;
    Rng rng(state.config.seed);
    for (const auto& [task, name] :
         std::vector<std::pair<seq::Task, std::string>>{{seq::Task::Planning, "planning"},
                                                        {seq::Task::Generation, "generation"},
                                                        {seq::Task::JointTraining, "joint"}}) {
      ls.task = task;
      seq::BlockLayout layout = seq::layout_blocks(ls, &rng);
      if (task == seq::Task::JointTraining) layout = seq::duplicate_noisy_clean(layout);
      seq::write_mask_pbm(seq::build_mask(layout), layout.total_tokens(),
                          (fs::path(args.dump_mask_dir) / (name + "_mask.pbm")).string());
    }
  }

  train::StepStats last = train::run_training<S>(
      state, data, [&](int64_t step, const train::StepStats& s) {
        metrics << step << ',' << s.loss_a << ',' << s.loss_v << ',' << s.total << ',' << s.lr
                << '\n';
        if (step % 100 == 0 || step == state.config.total_steps) {
          std::printf("step %6lld  loss_A %.5f  loss_V %.5f  total %.5f  lr %.3g\n",
                      static_cast<long long>(step), s.loss_a, s.loss_v, s.total, s.lr);
          std::fflush(stdout);
        }
      });
  metrics.flush();

  const std::string ckpt_path = (fs::path(args.out) / "checkpoint.bin").string();
  train::save_checkpoint(ckpt_path, state);
  manifest.add_output(ckpt_path);
  manifest.add_output(metrics_path);
  manifest.write((fs::path(args.out) / "run_manifest.json").string());
  std::printf("final: loss_A %.5f loss_V %.5f total %.5f (checkpoint: %s)\n", last.loss_a,
              last.loss_v, last.total, ckpt_path.c_str());
  return 0;
}

int cmd_train(const TrainArgs& args, const std::vector<std::string>& argv) {
  RunManifest manifest;
  manifest.command = "train";
  manifest.argv = argv;
  if (!args.config_path.empty()) manifest.add_input(args.config_path);
  manifest.add_input(args.data);
  const world::Dataset data = world::read_dataset(args.data);

  if (!args.resume.empty()) {
    manifest.add_input(args.resume);
    return with_checkpoint(args.resume, [&](auto& state) {
      for (const std::string& kv : args.overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value");
        train::apply_config_entry(state.config, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (args.jobs) state.config.jobs = *args.jobs;
      state.config.validate();
      manifest.seed = state.config.seed;
      manifest.config = config_json(state.config);
      return run_train(state, data, args, manifest, true);
    });
  }

  train::TrainConfig config = resolve_config(args.config_path, args.overrides);
  if (args.seed) config.seed = *args.seed;
  if (args.jobs) config.jobs = *args.jobs;
  config.validate();
  manifest.seed = config.seed;
  manifest.config = config_json(config);
  if (config.precision == train::Precision::F32) {
    auto state = train::init_trainer<float>(config, data);
    return run_train(state, data, args, manifest, false);
  }
  auto state = train::init_trainer<double>(config, data);
  return run_train(state, data, args, manifest, false);
}

struct InferArgs {
  std::string checkpoint;
  std::string data;
  int index = 0;
  std::string instruction;
  int n = 1;
  int steps = 20;
  double s_img = 1.5;
  double s_txt = 2.0;
  uint64_t seed = 0;
  int t0 = 3;
  std::string emit_image;
  std::string weights = "live";
  int jobs = 0;
};

int cmd_infer(const InferArgs& args, const std::vector<std::string>& argv) {
  RunManifest manifest;
  manifest.command = "infer";
  manifest.argv = argv;
  manifest.seed = args.seed;
  manifest.add_input(args.checkpoint);
  const world::Dataset data = world::read_dataset(args.data);
  if (args.index < 0 || args.index >= static_cast<int>(data.episodes.size())) {
    throw ConfigError("--index out of range");
  }
  world::Episode episode = data.episodes[args.index];
  if (!args.instruction.empty()) {
    world::InstructionClass cls;
    if (!world::class_for_instruction_text(args.instruction, &cls)) {
      throw ConfigError("unknown instruction class text: '" + args.instruction + "'");
    }
    episode.instruction_text = args.instruction;
    episode.instruction_class = cls;
  }

  flow::GuidanceConfig g;
  g.steps = args.steps;
  g.s_img = args.s_img;
  g.s_txt = args.s_txt;
  manifest.config = {{"n", args.n},   {"steps", args.steps},   {"s_img", args.s_img},
                     {"s_txt", args.s_txt}, {"t0", args.t0},   {"weights", args.weights},
                     {"index", args.index}};

  return with_checkpoint(args.checkpoint, [&](auto& state) {
    using S = std::decay_t<decltype(state.weights.tok_embed.v[0])>;
    const bool use_ema = args.weights == "ema";
    const sim::PlanSampler sampler = model_sampler<S>(state, use_ema, g, args.jobs);
    const Rng rng = Rng(args.seed).child("infer");

    const sim::BestOfResult pick = sim::best_of_n(episode, args.t0, sampler, args.n, rng);
    if (args.n > 1) {
      for (size_t i = 0; i < pick.cards.size(); ++i) {
        const sim::ScoreCard& c = pick.cards[i];
        std::printf("candidate %zu: NC=%d DAC=%d EP=%.3f TTC=%d Comf=%d aggregate=%.3f\n", i,
                    c.nc, c.dac, c.ep, c.ttc, c.comf, c.aggregate);
      }
      std::printf("selected candidate %d\n", pick.best_index);
    }
    std::printf("action plan (dx dy dtheta), %d steps:\n", world::kPlanHorizon);
    for (int k = 0; k < pick.best_actions.rows; ++k) {
      std::printf("  % .6f % .6f % .6f\n", pick.best_actions.at(k, 0),
                  pick.best_actions.at(k, 1), pick.best_actions.at(k, 2));
    }

    if (!args.emit_image.empty()) {
      flow::Sampler<S> fs_sampler;
      fs_sampler.weights = use_ema ? &state.ema : &state.weights;
      fs_sampler.vocab = &state.vocab;
      fs_sampler.stats = &state.stats;
      fs_sampler.mode = state.config.layout_mode;
      fs_sampler.interleave_k = state.config.interleave_k;
      fs_sampler.use_context = state.config.use_context;
      fs_sampler.jobs = args.jobs;
      const world::Image img = flow::sample_future_image(
          fs_sampler, episode, args.t0, pick.best_actions, g, rng.child("image"));
      write_ppm(args.emit_image, img);
      manifest.add_output(args.emit_image);
      std::printf("future image written to %s\n", args.emit_image.c_str());
    }
    manifest.write(args.checkpoint + ".infer.run.json");
    return 0;
  });
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string report;
  int best_of = 1;
  bool expert_replay = false;
  std::string overlay_dir;
  int limit = 0;
  uint64_t seed = 0;
  int steps = 20;
  double s_img = 1.5;
  double s_txt = 2.0;
  int t0 = 3;
  std::string weights = "live";
  int jobs = 0;
};

int run_eval_with_sampler(const EvalArgs& args, const std::vector<world::Episode>& episodes,
                          const sim::PlanSampler& sampler, RunManifest& manifest) {
  sim::EvalOptions options;
  options.t0 = args.t0;
  options.best_of = args.best_of;
  options.jobs = args.jobs;
  if (!args.overlay_dir.empty()) options.overlay_dir = args.overlay_dir;
  const Rng rng = Rng(args.seed).child("eval");
  const std::vector<sim::EvalRow> rows = sim::evaluate_episodes(episodes, sampler, options, rng);
  const sim::EvalSummary summary = sim::summarize(rows);

  fs::create_directories(args.report);
  const std::string csv = (fs::path(args.report) / "report.csv").string();
  const std::string sum = (fs::path(args.report) / "summary.json").string();
  sim::write_report_csv(csv, rows);
  sim::write_summary_json(sum, summary);
  manifest.add_output(csv);
  manifest.add_output(sum);
  manifest.write((fs::path(args.report) / "run_manifest.json").string());
  std::printf("follow_rate %.4f  mean_aggregate %.4f  (%zu episodes)\n", summary.follow_rate,
              summary.mean_aggregate, rows.size());
  return 0;
}

int cmd_eval(const EvalArgs& args, const std::vector<std::string>& argv) {
  RunManifest manifest;
  manifest.command = "eval";
  manifest.argv = argv;
  manifest.seed = args.seed;
  manifest.add_input(args.data);
  manifest.config = {{"best_of", args.best_of},
                     {"expert_replay", args.expert_replay},
                     {"steps", args.steps},
                     {"s_img", args.s_img},
                     {"s_txt", args.s_txt},
                     {"t0", args.t0},
                     {"weights", args.weights}};
  world::Dataset data = world::read_dataset(args.data);
  std::vector<world::Episode> episodes = std::move(data.episodes);
  if (args.limit > 0 && args.limit < static_cast<int>(episodes.size())) {
    episodes.resize(args.limit);
  }

  if (args.expert_replay) {
    return run_eval_with_sampler(args, episodes, sim::expert_replay_sampler(), manifest);
  }
  if (args.checkpoint.empty()) throw ConfigError("--checkpoint required unless --expert-replay");
  manifest.add_input(args.checkpoint);
  flow::GuidanceConfig g;
  g.steps = args.steps;
  g.s_img = args.s_img;
  g.s_txt = args.s_txt;
  return with_checkpoint(args.checkpoint, [&](auto& state) {
    using S = std::decay_t<decltype(state.weights.tok_embed.v[0])>;
    const sim::PlanSampler sampler = model_sampler<S>(state, args.weights == "ema", g, args.jobs);
    return run_eval_with_sampler(args, episodes, sampler, manifest);
  });
}

struct AblateArgs {
  std::string variant;
  std::string config_path;
  std::string data;
  std::string eval_data;
  std::string out;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  int eval_limit = 200;
  int jobs = 0;
};

int cmd_ablate(const AblateArgs& args, const std::vector<std::string>& argv) {
  train::TrainConfig config = resolve_config(args.config_path, args.overrides);
  config = train::make_variant(config, args.variant);
  if (args.seed) config.seed = *args.seed;
  if (args.jobs) config.jobs = args.jobs;
  config.validate();

  RunManifest manifest;
  manifest.command = "ablate";
  manifest.argv = argv;
  manifest.seed = config.seed;
  manifest.config = config_json(config);
  manifest.add_input(args.data);

  const world::Dataset data = world::read_dataset(args.data);
  world::Dataset eval_data;
  if (!args.eval_data.empty()) {
    manifest.add_input(args.eval_data);
    eval_data = world::read_dataset(args.eval_data);
  } else {
    eval_data.episodes = data.episodes;
  }
  if (args.eval_limit > 0 && args.eval_limit < static_cast<int>(eval_data.episodes.size())) {
    eval_data.episodes.resize(args.eval_limit);
  }

  const std::string run_dir = (fs::path(args.out) / args.variant).string();
  fs::create_directories(run_dir);

  TrainArgs train_args;
  train_args.out = run_dir;

  train::StepStats final_stats;
  double followed = 0.0, mean_agg = 0.0;
  auto run_one = [&](auto& state) {
    using S = std::decay_t<decltype(state.weights.tok_embed.v[0])>;
    std::ofstream metrics((fs::path(run_dir) / "metrics.csv").string(), std::ios::trunc);
    metrics << "step,loss_A,loss_V,total,lr\n";
    metrics.precision(10);
    final_stats = train::run_training<S>(state, data,
                                         [&](int64_t step, const train::StepStats& s) {
                                           metrics << step << ',' << s.loss_a << ',' << s.loss_v
                                                   << ',' << s.total << ',' << s.lr << '\n';
                                         });
    const std::string ckpt = (fs::path(run_dir) / "checkpoint.bin").string();
    train::save_checkpoint(ckpt, state);
    manifest.add_output(ckpt);

    flow::GuidanceConfig g;
    const sim::PlanSampler sampler = model_sampler<S>(state, false, g, args.jobs);
    sim::EvalOptions options;
    options.jobs = args.jobs;
    // Interleaved layouts need k-1 history steps before the context time.
    options.t0 = std::max(3, config.history_len() - 1);
    const auto rows =
        sim::evaluate_episodes(eval_data.episodes, sampler, options, Rng(config.seed).child("eval"));
    const auto summary = sim::summarize(rows);
    followed = summary.follow_rate;
    mean_agg = summary.mean_aggregate;
    return 0;
  };
  if (config.precision == train::Precision::F32) {
    auto state = train::init_trainer<float>(config, data);
    run_one(state);
  } else {
    auto state = train::init_trainer<double>(config, data);
    run_one(state);
  }

  const std::string summary_path = (fs::path(args.out) / "ablation_summary.csv").string();
  const bool new_file = !fs::exists(summary_path);
  std::ofstream summary(summary_path, std::ios::app);
  if (!summary) throw IoError("cannot write ablation summary: " + summary_path);
  if (new_file) {
    summary << "variant,seed,total_steps,final_loss_A,final_loss_V,final_total,follow_rate,"
               "mean_aggregate,lambda_A,lambda_V,layout_mode,interleave_k,future_frame,"
               "action_module\n";
  }
  summary.precision(8);
  summary << args.variant << ',' << config.seed << ',' << config.total_steps << ','
          << final_stats.loss_a << ',' << final_stats.loss_v << ',' << final_stats.total << ','
          << followed << ',' << mean_agg << ',' << config.lambda_a << ',' << config.lambda_v
          << ',' << (config.layout_mode == seq::LayoutMode::ImagesOnly ? "images_only" : "interleaved")
          << ',' << config.interleave_k << ',' << train::future_frame_name(config.future_frame)
          << ','
          << (config.action_module == model::ActionModule::Expert
                  ? "expert"
                  : (config.action_module == model::ActionModule::VLM ? "vlm" : "diffusion"))
          << '\n';
  manifest.add_output(summary_path);
  manifest.write((fs::path(run_dir) / "run_manifest.json").string());
  std::printf("variant %s: final_total %.5f follow_rate %.4f mean_aggregate %.4f\n",
              args.variant.c_str(), final_stats.total, followed, mean_agg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> raw_argv(argv, argv + argc);
  CLI::App app{"GridDrive: a desk-scale multimodal driving model sandbox"};
  app.set_version_flag("--version",
                       std::string("griddrive ") + kVersion + " (dataset format v" +
                           std::to_string(world::kDatasetFormatVersion) + ", checkpoint format v" +
                           std::to_string(train::kCheckpointFormatVersion) + ")");
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic driving dataset");
  gen->add_option("--episodes", gen_args.episodes, "Number of episodes (>= 1)")->required();
  gen->add_option("--seed", gen_args.seed, "Root seed");
  gen->add_option("--out", gen_args.out, "Output dataset directory")->required();
  gen->add_option("--class-mix", gen_args.class_mix, "uniform or name=weight,... list");
  gen->add_option("--jobs", gen_args.jobs, "Worker cap (0 = hardware)");
  gen->add_option("--shard-size", gen_args.shard_size, "Episodes per shard file");

  TrainArgs train_args;
  CLI::App* tr = app.add_subcommand("train", "Train the model");
  tr->add_option("--config", train_args.config_path, "Flat key = value config file");
  tr->add_option("--data", train_args.data, "Training dataset directory")->required();
  tr->add_option("--out", train_args.out, "Output run directory")->required();
  tr->add_option("--resume", train_args.resume, "Checkpoint to resume from");
  tr->add_option("--set", train_args.overrides, "Config override key=value (repeatable)");
  uint64_t train_seed = 0;
  int train_jobs = 0;
  CLI::Option* tr_seed = tr->add_option("--seed", train_seed, "Seed override");
  CLI::Option* tr_jobs = tr->add_option("--jobs", train_jobs, "Worker cap");
  tr->add_option("--dump-mask-dir", train_args.dump_mask_dir,
                 "Write the layout attention masks as PBM files");

  InferArgs infer_args;
  CLI::App* inf = app.add_subcommand("infer", "Sample an action plan (and future image)");
  inf->add_option("--checkpoint", infer_args.checkpoint, "Checkpoint file")->required();
  inf->add_option("--data", infer_args.data, "Dataset directory with the context episode")
      ->required();
  inf->add_option("--index", infer_args.index, "Episode index");
  inf->add_option("--instruction", infer_args.instruction, "Instruction text override");
  inf->add_option("--n", infer_args.n, "Best-of-N candidates")->check(CLI::PositiveNumber);
  inf->add_option("--steps", infer_args.steps, "Denoising steps");
  inf->add_option("--s-img", infer_args.s_img, "Image guidance scale");
  inf->add_option("--s-txt", infer_args.s_txt, "Text guidance scale");
  inf->add_option("--seed", infer_args.seed, "Sampling seed");
  inf->add_option("--t0", infer_args.t0, "Context time index");
  inf->add_option("--emit-image", infer_args.emit_image, "Write the generated future image (PPM)");
  inf->add_option("--weights", infer_args.weights, "live or ema")
      ->check(CLI::IsMember({"live", "ema"}));
  inf->add_option("--jobs", infer_args.jobs, "Worker cap");

  EvalArgs eval_args;
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a held-out dataset");
  ev->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file");
  ev->add_option("--data", eval_args.data, "Held-out dataset directory")->required();
  ev->add_option("--report", eval_args.report, "Report output directory")->required();
  ev->add_option("--best-of", eval_args.best_of, "Candidates per episode")
      ->check(CLI::PositiveNumber);
  ev->add_flag("--expert-replay", eval_args.expert_replay, "Replay expert actions instead");
  ev->add_option("--overlay-dir", eval_args.overlay_dir, "Write trajectory overlay PNGs");
  ev->add_option("--limit", eval_args.limit, "Evaluate only the first N episodes");
  ev->add_option("--seed", eval_args.seed, "Evaluation seed");
  ev->add_option("--steps", eval_args.steps, "Denoising steps");
  ev->add_option("--s-img", eval_args.s_img, "Image guidance scale");
  ev->add_option("--s-txt", eval_args.s_txt, "Text guidance scale");
  ev->add_option("--t0", eval_args.t0, "Context time index");
  ev->add_option("--weights", eval_args.weights, "live or ema")
      ->check(CLI::IsMember({"live", "ema"}));
  ev->add_option("--jobs", eval_args.jobs, "Worker cap");

  AblateArgs ablate_args;
  CLI::App* ab = app.add_subcommand("ablate", "Train and evaluate a named variant");
  ab->add_option("--variant", ablate_args.variant, "Variant name")->required();
  ab->add_option("--config", ablate_args.config_path, "Base config file");
  ab->add_option("--data", ablate_args.data, "Training dataset")->required();
  ab->add_option("--eval-data", ablate_args.eval_data, "Held-out dataset for the summary row");
  ab->add_option("--out", ablate_args.out, "Ablation output directory")->required();
  ab->add_option("--set", ablate_args.overrides, "Config override key=value (repeatable)");
  uint64_t ablate_seed = 0;
  CLI::Option* ab_seed = ab->add_option("--seed", ablate_seed, "Seed override");
  ab->add_option("--eval-limit", ablate_args.eval_limit, "Episodes used for the summary row");
  ab->add_option("--jobs", ablate_args.jobs, "Worker cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args, raw_argv);
    if (tr->parsed()) {
      if (*tr_seed) train_args.seed = train_seed;
      if (*tr_jobs) train_args.jobs = train_jobs;
      return cmd_train(train_args, raw_argv);
    }
    if (inf->parsed()) return cmd_infer(infer_args, raw_argv);
    if (ev->parsed()) return cmd_eval(eval_args, raw_argv);
    if (ab->parsed()) {
      if (*ab_seed) ablate_args.seed = ablate_seed;
      return cmd_ablate(ablate_args, raw_argv);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const InvalidInputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const LayoutError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 4;
  }
  return 0;
}
