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

#include <optional>
#include <string>
#include <vector>

#include "griddrive/codec.hpp"
#include "griddrive/common.hpp"
#include "griddrive/rng.hpp"
#include "griddrive/world.hpp"

namespace griddrive::seq {

enum class BlockKind : uint8_t {
  Text = 0,
  ImageUnd = 1,      // VAE-analog latents of a history image
  ImageCtx = 2,      // learned context tokens, attached to their image
  ActionClean = 3,
  ActionNoisy = 4,
  ImageGenClean = 5,
  ImageGenNoisy = 6,
};

inline bool is_noisy(BlockKind k) {
  return k == BlockKind::ActionNoisy || k == BlockKind::ImageGenNoisy;
}

enum class Task : uint8_t { Planning = 0, Generation = 1, JointTraining = 2 };

enum class LayoutMode : uint8_t { ImagesOnly = 0, Interleaved = 1 };

enum class DropKind : uint8_t { Text = 0, Context = 1, CleanImage = 2, CleanAction = 3 };

struct Block {
  BlockKind kind = BlockKind::Text;
  int length = 0;
  int time_index = 0;          // episode time the block refers to
  bool attached_to_prev = false;  // ctx tokens share their image's position slot
  bool supervised = false;        // true only for *_NOISY
  int drop_group = -1;            // condition blocks only
  DropKind drop_kind = DropKind::Text;
  bool dropped = false;
  double timestep = 0.0;          // diffusion time for noisy blocks
};

struct BlockLayout {
  Task task = Task::Planning;
  LayoutMode mode = LayoutMode::ImagesOnly;
  int interleave_k = 0;  // images in the interleaved prefix; 0 for images-only
  int history_len = 4;
  int horizon = 8;
  std::vector<Block> blocks;

  int total_tokens() const;
  std::vector<int> block_starts() const;
};

struct LayoutSpec {
  int history_len = 4;
  int horizon = 8;
  int text_tokens = 0;  // tokenized instruction length incl. BOS/EOS
  Task task = Task::Planning;
  LayoutMode mode = LayoutMode::ImagesOnly;
  int interleave_k = 4;
  bool use_context = true;
};

// Builds the block order for a task/mode. Joint-training layouts draw a
// diffusion timestep for every noisy block from rng (uniform on
// [0, 0.999]); inference layouts start at t = 1.
BlockLayout layout_blocks(const LayoutSpec& spec, Rng* rng);

// Inserts a clean condition copy directly after every noisy block that
// still conditions later blocks. Joint-training layouts only; idempotent.
BlockLayout duplicate_noisy_clean(const BlockLayout& layout);

// L x L boolean mask, row-major; entry (i, j) = 1 iff token i may attend
// to token j. Blocked lower triangular: full attention inside a non-text
// position group, strictly causal with self inside text, earlier
// non-noisy groups visible, noisy columns hidden from everything below.
std::vector<uint8_t> build_mask(const BlockLayout& layout);

struct Positions {
  std::vector<int> rope;   // shared index per non-text group, consecutive in text
  std::vector<int> intra;  // sinusoidal ids, 0..len-1 inside each group
};
Positions assign_positions(const BlockLayout& layout);

struct DropProbs {
  double text = 0.1;
  double context = 0.1;
  double clean_image = 0.1;
  double clean_action = 0.1;
  double of(DropKind k) const;
};

// Marks whole drop groups as dropped (replaced by a learned null embedding
// downstream); sequence length and mask are unchanged.
BlockLayout cfg_dropout(const BlockLayout& layout, const DropProbs& probs, Rng* rng);

// Per-token views plus the mask, precomputed once per layout.
struct Packed {
  int length = 0;
  std::vector<int> block_of;
  std::vector<int> group_of;
  std::vector<int> group_end;  // exclusive end token of the row's group
  std::vector<int> row_offset;  // prefix sums of group_end, for row-compact buffers
  std::vector<uint8_t> mask;
  Positions pos;
};
Packed build_packed(const BlockLayout& layout);

// Payload-carrying sample: raw per-block features ready for embedding.
template <typename S>
struct PackedSample {
  BlockLayout layout;
  Packed packed;
  std::vector<Matrix<S>> payload;          // per block; see pack_sample
  std::vector<std::vector<int>> text_ids;  // per block, text blocks only
  std::vector<Matrix<S>> x0;               // clean latents for noisy blocks
  std::vector<Matrix<S>> eps;              // injected noise for noisy blocks

  void rebuild_packed() { packed = build_packed(layout); }
};

struct SampleSpec {
  int t0 = 3;             // current time index inside the episode
  Task task = Task::JointTraining;
  LayoutMode mode = LayoutMode::ImagesOnly;
  int interleave_k = 4;
  bool use_context = true;
  int future_offset = 8;  // generation target frame = t0 + future_offset
  int frame_token = -1;   // appends <frame_k> to the instruction when >= 0
};

// Assembles payloads from an episode: image latents, context patches,
// normalized actions, tokenized instruction. Noisy blocks get their clean
// latents staged in `x0`; noise injection is the flow module's job.
template <typename S>
PackedSample<S> pack_sample(const world::Episode& episode, const SampleSpec& spec,
                            const codec::Vocabulary& vocab,
                            const codec::ActionStats& stats, Rng* rng);

// Assigns fresh drop-group ids to every condition block (one group per
// image/action unit, context tokens separate from their image's latents).
void assign_drop_groups(BlockLayout& layout);

// Uniformly random well-formed layouts for fuzzing the mask rules.
BlockLayout random_layout(Rng& rng, int max_blocks, int max_block_len = 6);

// Debug dump as a portable bitmap (P1).
void write_mask_pbm(const std::vector<uint8_t>& mask, int n, const std::string& path);

}  // namespace griddrive::seq
