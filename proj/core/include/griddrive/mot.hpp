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
#include <functional>
#include <string>
#include <vector>

#include "griddrive/codec.hpp"
#include "griddrive/common.hpp"
#include "griddrive/rng.hpp"
#include "griddrive/seqpack.hpp"

namespace griddrive::model {

enum class Expert : uint8_t { Und = 0, Gen = 1, Act = 2 };
constexpr int kNumExperts = 3;

// Which transformer hosts the action tokens. Expert is the dedicated
// narrow module; VLM and Diffusion reroute actions through the
// understanding or generation module with their own linear readouts.
enum class ActionModule : uint8_t { Expert = 0, VLM = 1, Diffusion = 2 };

struct MoTConfig {
  int layers = 4;
  int d_und = 64;
  int d_gen = 64;
  int d_act = 32;
  int d_attn = 64;
  int heads = 4;
  int ffn_mult = 4;
  int vocab_size = 0;
  int time_bins = 256;
  ActionModule action_module = ActionModule::Expert;

  int width(Expert e) const {
    switch (e) {
      case Expert::Und: return d_und;
      case Expert::Gen: return d_gen;
      case Expert::Act: return d_act;
    }
    return 0;
  }
  int head_dim() const { return d_attn / heads; }
  Expert action_host() const {
    switch (action_module) {
      case ActionModule::Expert: return Expert::Act;
      case ActionModule::VLM: return Expert::Und;
      case ActionModule::Diffusion: return Expert::Gen;
    }
    return Expert::Act;
  }
  void validate() const;
};

Expert expert_for(seq::BlockKind kind, const MoTConfig& config);

// Order-preserving split of token indices by expert, with the inverse
// mapping that restores the original order.
struct Routing {
  std::array<std::vector<int>, kNumExperts> tokens;  // global indices per expert
  std::vector<int> expert_of;                        // per token
  std::vector<int> row_of;                           // per token: row inside its expert
};
Routing route(const std::vector<int>& expert_tags);

template <typename S>
struct LayerExpertWeights {
  Matrix<S> attn_norm;  // 1 x w
  Matrix<S> wq, wk, wv;  // w x d_attn
  Matrix<S> wo;          // d_attn x w
  Matrix<S> ffn_norm;    // 1 x w
  Matrix<S> w1;          // w x (ffn_mult*w)
  Matrix<S> w2;          // (ffn_mult*w) x w
};

// All trainable parameters. Every expert owns private attention and FFN
// weights; the only shared computation is the joint attention itself.
template <typename S>
struct MoTWeights {
  MoTConfig config;

  Matrix<S> tok_embed;                 // vocab x d_und
  Matrix<S> img_und_proj, img_und_bias;
  codec::CtxEncoderWeights<S> ctx;     // patch_proj 192 x d_und, bias, mix
  Matrix<S> img_gen_proj, img_gen_bias;
  // Action embeddings and readouts for each possible host expert.
  Matrix<S> act_embed_act, act_embed_act_bias;
  Matrix<S> act_embed_und, act_embed_und_bias;
  Matrix<S> act_embed_gen, act_embed_gen_bias;
  Matrix<S> act_readout_act, act_readout_act_bias;
  Matrix<S> act_readout_und, act_readout_und_bias;
  Matrix<S> act_readout_gen, act_readout_gen_bias;
  Matrix<S> gen_readout, gen_readout_bias;  // d_gen x 48
  Matrix<S> time_embed_und, time_embed_gen, time_embed_act;  // bins x w
  Matrix<S> null_text, null_ctx, null_img_und, null_img_gen_clean, null_act_clean;
  Matrix<S> final_norm_und, final_norm_gen, final_norm_act;
  std::vector<std::array<LayerExpertWeights<S>, kNumExperts>> layers;

  void allocate(const MoTConfig& cfg);
  void init(Rng& rng);
  void zero();

  // Stable-ordered parameter walk used by the optimizer, EMA, checkpoints
  // and gradient checks. `decay` marks 2-D projection matrices.
  void for_each_param(const std::function<void(const std::string&, Matrix<S>&, bool decay)>& fn);
  void for_each_param(
      const std::function<void(const std::string&, const Matrix<S>&, bool decay)>& fn) const;

  size_t num_params() const;
};

// Closed-form parameter count; matches an enumeration of the allocated
// arrays exactly.
size_t param_count(const MoTConfig& config);

// Per-sample activation cache for the hand-written backward pass.
template <typename S>
struct MoTCache {
  Routing routing;
  std::vector<S> rope_cos, rope_sin;  // length L * head_dim/2
  std::array<Matrix<S>, kNumExperts> x0;  // input embeddings per expert
  // Ctx encoder intermediates per block index.
  std::vector<Matrix<S>> ctx_pre_mix;
  struct Layer {
    std::array<Matrix<S>, kNumExperts> x_in, attn_norm_out, x_mid, ffn_norm_out;
    std::array<std::vector<S>, kNumExperts> attn_inv, ffn_inv;  // rms reciprocals
    Matrix<S> q, k, v, attn_ctx;  // L x d_attn, q/k after rope
    // Attention probabilities, row-compacted: head h, row i occupies
    // [h * row_offset[L] + row_offset[i], ... + group_end[i]). Entries
    // masked inside the prefix are exact zeros; columns past the group
    // end are structurally zero and not stored.
    std::vector<S> probs;
    std::array<Matrix<S>, kNumExperts> ffn_u, ffn_sig;
  };
  std::vector<Layer> layers;
  std::array<Matrix<S>, kNumExperts> x_final, final_norm_out;
  std::array<std::vector<S>, kNumExperts> final_inv;
};

// Model outputs: per-block readouts on supervised spans (noise
// predictions), aligned with layout.blocks.
template <typename S>
struct MoTOutput {
  std::vector<Matrix<S>> eps_hat;
};

// Reads one attention probability from the compacted cache.
template <typename S>
S attention_prob(const MoTCache<S>& cache, const seq::Packed& packed, int layer, int head,
                 int row, int col);

template <typename S>
MoTOutput<S> mot_forward(const seq::PackedSample<S>& sample, const MoTWeights<S>& weights,
                         MoTCache<S>* cache);

// Transposed projection weights, shared read-only across a batch so the
// backward pass does not re-transpose per sample.
template <typename S>
struct TransposedWeights {
  struct LayerExpertT {
    Matrix<S> wq, wk, wv, wo, w1, w2;
  };
  std::vector<std::array<LayerExpertT, kNumExperts>> layers;
  void build(const MoTWeights<S>& weights);
};

// Accumulates parameter gradients for d(loss)/d(eps_hat) given in
// `d_eps_hat` (aligned with layout.blocks, empty matrices for
// unsupervised blocks).
template <typename S>
void mot_backward(const seq::PackedSample<S>& sample, const MoTWeights<S>& weights,
                  const MoTCache<S>& cache, const std::vector<Matrix<S>>& d_eps_hat,
                  MoTWeights<S>& grads, const TransposedWeights<S>* transposed = nullptr);

}  // namespace griddrive::model
