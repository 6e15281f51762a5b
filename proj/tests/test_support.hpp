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

#include <string>
#include <vector>

#include "griddrive/codec.hpp"
#include "griddrive/flow.hpp"
#include "griddrive/mot.hpp"
#include "griddrive/rng.hpp"
#include "griddrive/seqpack.hpp"

namespace gdtest {

using namespace griddrive;

inline model::MoTConfig micro_config(int vocab_size = 6) {
  model::MoTConfig cfg;
  cfg.layers = 2;
  cfg.d_und = 16;
  cfg.d_gen = 16;
  cfg.d_act = 8;
  cfg.d_attn = 16;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  cfg.vocab_size = vocab_size;
  cfg.time_bins = 4;
  return cfg;
}

template <typename S>
Matrix<S> random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  Matrix<S> m(rows, cols);
  for (auto& x : m.v) x = static_cast<S>(rng.normal() * scale);
  return m;
}

// A small hand-built packed sample covering every block kind, including a
// dropped condition block, without touching the episode pipeline.
template <typename S>
seq::PackedSample<S> micro_sample(Rng& rng, const model::MoTConfig& cfg,
                                  bool with_dropped = true) {
  seq::PackedSample<S> sample;
  seq::BlockLayout& layout = sample.layout;
  layout.task = seq::Task::JointTraining;

  auto block = [&](seq::BlockKind kind, int len, bool attached = false) {
    seq::Block b;
    b.kind = kind;
    b.length = len;
    b.attached_to_prev = attached;
    b.supervised = seq::is_noisy(kind);
    if (b.supervised) b.timestep = rng.uniform(0.05, 0.95);
    layout.blocks.push_back(b);
  };
  block(seq::BlockKind::Text, 3);
  block(seq::BlockKind::ImageUnd, 3);
  block(seq::BlockKind::ImageCtx, codec::kCtxTokens, true);
  block(seq::BlockKind::ActionClean, 2);
  block(seq::BlockKind::ActionNoisy, 2);
  block(seq::BlockKind::ImageGenClean, 2);
  block(seq::BlockKind::ImageGenNoisy, 3);
  seq::assign_drop_groups(layout);
  if (with_dropped) layout.blocks[3].dropped = true;  // the clean action block

  const size_t n = layout.blocks.size();
  sample.payload.resize(n);
  sample.text_ids.resize(n);
  sample.x0.resize(n);
  sample.eps.resize(n);
  for (size_t bi = 0; bi < n; ++bi) {
    seq::Block& b = layout.blocks[bi];
    switch (b.kind) {
      case seq::BlockKind::Text:
        for (int k = 0; k < b.length; ++k) {
          sample.text_ids[bi].push_back(static_cast<int>(rng.uniform_index(cfg.vocab_size)));
        }
        break;
      case seq::BlockKind::ImageUnd:
      case seq::BlockKind::ImageGenClean:
        sample.payload[bi] = random_matrix<S>(b.length, codec::kLatentDim, rng, 0.5);
        break;
      case seq::BlockKind::ImageCtx:
        sample.payload[bi] = random_matrix<S>(b.length, codec::kCtxPatchDim, rng, 0.5);
        break;
      case seq::BlockKind::ActionClean:
        sample.payload[bi] = random_matrix<S>(b.length, codec::kActionDim, rng);
        break;
      case seq::BlockKind::ActionNoisy: {
        sample.x0[bi] = random_matrix<S>(b.length, codec::kActionDim, rng);
        sample.eps[bi] = random_matrix<S>(b.length, codec::kActionDim, rng);
        sample.payload[bi] = flow::noisify(sample.x0[bi], b.timestep, sample.eps[bi]);
        break;
      }
      case seq::BlockKind::ImageGenNoisy: {
        sample.x0[bi] = random_matrix<S>(b.length, codec::kLatentDim, rng, 0.5);
        sample.eps[bi] = random_matrix<S>(b.length, codec::kLatentDim, rng);
        sample.payload[bi] = flow::noisify(sample.x0[bi], b.timestep, sample.eps[bi]);
        break;
      }
    }
  }
  sample.rebuild_packed();
  return sample;
}

// Joint lambda-weighted loss of one sample, forward only.
template <typename S>
double sample_loss(const seq::PackedSample<S>& sample, const model::MoTWeights<S>& weights,
                   double lambda_a, double lambda_v) {
  const model::MoTOutput<S> out =
      mot_forward(sample, weights, static_cast<model::MoTCache<S>*>(nullptr));
  double loss = 0.0;
  for (size_t bi = 0; bi < sample.layout.blocks.size(); ++bi) {
    const seq::Block& b = sample.layout.blocks[bi];
    if (!b.supervised) continue;
    if (b.kind == seq::BlockKind::ActionNoisy) {
      loss += lambda_a * flow::action_loss(sample.eps[bi], out.eps_hat[bi]).value;
    } else {
      loss += lambda_v * flow::image_loss(sample.eps[bi], out.eps_hat[bi]).value;
    }
  }
  return loss;
}

// Analytic gradients of the same loss.
template <typename S>
void sample_loss_grads(const seq::PackedSample<S>& sample, const model::MoTWeights<S>& weights,
                       double lambda_a, double lambda_v, model::MoTWeights<S>& grads) {
  model::MoTCache<S> cache;
  const model::MoTOutput<S> out = mot_forward(sample, weights, &cache);
  std::vector<Matrix<S>> d_eps(sample.layout.blocks.size());
  for (size_t bi = 0; bi < sample.layout.blocks.size(); ++bi) {
    const seq::Block& b = sample.layout.blocks[bi];
    if (!b.supervised) continue;
    if (b.kind == seq::BlockKind::ActionNoisy) {
      auto lr = flow::action_loss(sample.eps[bi], out.eps_hat[bi]);
      for (auto& g : lr.d_eps_hat.v) g *= static_cast<S>(lambda_a);
      d_eps[bi] = std::move(lr.d_eps_hat);
    } else {
      auto lr = flow::image_loss(sample.eps[bi], out.eps_hat[bi]);
      for (auto& g : lr.d_eps_hat.v) g *= static_cast<S>(lambda_v);
      d_eps[bi] = std::move(lr.d_eps_hat);
    }
  }
  mot_backward(sample, weights, cache, d_eps, grads);
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t checked = 0;
};

// Central finite differences over every parameter.
inline GradCheckResult finite_difference_check(seq::PackedSample<double>& sample,
                                               model::MoTWeights<double>& weights,
                                               double lambda_a, double lambda_v,
                                               double h = 1e-5) {
  model::MoTWeights<double> grads;
  grads.allocate(weights.config);
  sample_loss_grads(sample, weights, lambda_a, lambda_v, grads);

  GradCheckResult result;
  std::vector<Matrix<double>*> gmats;
  grads.for_each_param([&](const std::string&, Matrix<double>& m, bool) { gmats.push_back(&m); });
  size_t pi = 0;
  weights.for_each_param([&](const std::string& name, Matrix<double>& w, bool) {
    Matrix<double>& g = *gmats[pi++];
    for (size_t j = 0; j < w.v.size(); ++j) {
      const double keep = w.v[j];
      w.v[j] = keep + h;
      const double up = sample_loss(sample, weights, lambda_a, lambda_v);
      w.v[j] = keep - h;
      const double dn = sample_loss(sample, weights, lambda_a, lambda_v);
      w.v[j] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = g.v[j];
      const double denom = std::max(1e-6, std::abs(fd) + std::abs(an));
      const double rel = std::abs(fd - an) / denom;
      ++result.checked;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = name + "[" + std::to_string(j) + "]";
      }
    }
  });
  return result;
}

}  // namespace gdtest
