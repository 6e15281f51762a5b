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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "griddrive/seqpack.hpp"
#include "griddrive/world.hpp"
#include "test_support.hpp"

using namespace griddrive;
using namespace griddrive::seq;

namespace {

// Brute-force visibility oracle, evaluated token by token with its own
// group bookkeeping (independent of build_mask).
std::vector<uint8_t> oracle_mask(const BlockLayout& layout) {
  struct Tok {
    BlockKind kind;
    int group;
    bool noisy;
    int index_in_text;
    int text_block;
  };
  std::vector<Tok> toks;
  int group = -1;
  for (size_t bi = 0; bi < layout.blocks.size(); ++bi) {
    const Block& b = layout.blocks[bi];
    if (!b.attached_to_prev) ++group;
    for (int k = 0; k < b.length; ++k) {
      toks.push_back({b.kind, group, is_noisy(b.kind), k, static_cast<int>(bi)});
    }
  }
  const int n = static_cast<int>(toks.size());
  std::vector<uint8_t> mask(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      bool visible;
      if (toks[j].group > toks[i].group) {
        visible = false;
      } else if (toks[j].group < toks[i].group) {
        visible = !toks[j].noisy;
      } else if (toks[i].kind == BlockKind::Text && toks[j].kind == BlockKind::Text) {
        visible = j <= i;
      } else {
        visible = true;
      }
      mask[static_cast<size_t>(i) * n + j] = visible ? 1 : 0;
    }
  }
  return mask;
}

BlockLayout manual_layout(const std::vector<std::tuple<BlockKind, int, bool>>& spec,
                          Task task = Task::JointTraining) {
  BlockLayout layout;
  layout.task = task;
  for (const auto& [kind, len, attached] : spec) {
    Block b;
    b.kind = kind;
    b.length = len;
    b.attached_to_prev = attached;
    b.supervised = is_noisy(kind);
    b.timestep = b.supervised ? 0.5 : 0.0;
    layout.blocks.push_back(b);
  }
  assign_drop_groups(layout);
  return layout;
}

}  // namespace

TEST_CASE("images-only planning layout follows the block order") {
  LayoutSpec spec;
  spec.text_tokens = 6;
  spec.task = Task::Planning;
  const BlockLayout layout = layout_blocks(spec, nullptr);
  std::vector<BlockKind> kinds;
  for (const Block& b : layout.blocks) kinds.push_back(b.kind);
  const std::vector<BlockKind> want = {
      BlockKind::ImageUnd, BlockKind::ImageCtx, BlockKind::ImageUnd, BlockKind::ImageCtx,
      BlockKind::ImageUnd, BlockKind::ImageCtx, BlockKind::ImageUnd, BlockKind::ImageCtx,
      BlockKind::Text,     BlockKind::ActionNoisy};
  CHECK(kinds == want);
  CHECK(layout.blocks.back().length == 8);
  CHECK(layout.blocks.back().supervised);
  CHECK(layout.blocks.back().timestep == 1.0);
  // Context blocks attach to their image; the images span t-3..t0.
  CHECK(layout.blocks[1].attached_to_prev);
  CHECK(layout.blocks[0].time_index == -3);
  CHECK(layout.blocks[6].time_index == 0);
}

TEST_CASE("generation layout appends the clean action before the noisy image") {
  LayoutSpec spec;
  spec.text_tokens = 5;
  spec.task = Task::Generation;
  const BlockLayout layout = layout_blocks(spec, nullptr);
  const size_t n = layout.blocks.size();
  CHECK(layout.blocks[n - 2].kind == BlockKind::ActionClean);
  CHECK(layout.blocks[n - 2].length == 8);
  CHECK(layout.blocks[n - 1].kind == BlockKind::ImageGenNoisy);
  CHECK(layout.blocks[n - 1].length == codec::kImageTokens);
}

TEST_CASE("interleaved layout alternates images and past actions") {
  LayoutSpec spec;
  spec.text_tokens = 4;
  spec.task = Task::Planning;
  spec.mode = LayoutMode::Interleaved;
  spec.interleave_k = 4;
  spec.history_len = 4;
  spec.use_context = false;
  const BlockLayout layout = layout_blocks(spec, nullptr);
  std::vector<BlockKind> kinds;
  for (const Block& b : layout.blocks) kinds.push_back(b.kind);
  const std::vector<BlockKind> want = {
      BlockKind::ImageUnd, BlockKind::ActionClean, BlockKind::ImageUnd, BlockKind::ActionClean,
      BlockKind::ImageUnd, BlockKind::ActionClean, BlockKind::ImageUnd, BlockKind::Text,
      BlockKind::ActionNoisy};
  CHECK(kinds == want);
  for (size_t i = 1; i < 6; i += 2) CHECK(layout.blocks[i].length == 1);
}

TEST_CASE("use_context=false emits no context blocks anywhere") {
  for (Task task : {Task::Planning, Task::Generation}) {
    LayoutSpec spec;
    spec.text_tokens = 4;
    spec.task = task;
    spec.use_context = false;
    const BlockLayout layout = layout_blocks(spec, nullptr);
    for (const Block& b : layout.blocks) CHECK(b.kind != BlockKind::ImageCtx);
  }
}

TEST_CASE("duplicate_noisy_clean inserts the condition copy and is idempotent") {
  Rng rng(11);
  LayoutSpec spec;
  spec.text_tokens = 4;
  spec.task = Task::JointTraining;
  BlockLayout layout = layout_blocks(spec, &rng);
  const BlockLayout dup = duplicate_noisy_clean(layout);

  // The noisy action gains a clean twin; the final noisy image does not.
  int idx_noisy = -1;
  for (size_t i = 0; i < dup.blocks.size(); ++i) {
    if (dup.blocks[i].kind == BlockKind::ActionNoisy) idx_noisy = static_cast<int>(i);
  }
  REQUIRE(idx_noisy >= 0);
  CHECK(dup.blocks[idx_noisy + 1].kind == BlockKind::ActionClean);
  CHECK(dup.blocks[idx_noisy + 1].length == dup.blocks[idx_noisy].length);
  CHECK(dup.blocks[idx_noisy + 1].time_index == dup.blocks[idx_noisy].time_index);
  CHECK(!dup.blocks[idx_noisy + 1].supervised);
  CHECK(dup.blocks.back().kind == BlockKind::ImageGenNoisy);
  CHECK(dup.blocks.size() == layout.blocks.size() + 1);

  const BlockLayout dup2 = duplicate_noisy_clean(dup);
  CHECK(dup2.blocks.size() == dup.blocks.size());
  for (size_t i = 0; i < dup.blocks.size(); ++i) {
    CHECK(dup2.blocks[i].kind == dup.blocks[i].kind);
    CHECK(dup2.blocks[i].length == dup.blocks[i].length);
  }
}

TEST_CASE("duplicate_noisy_clean rejects inference layouts") {
  LayoutSpec spec;
  spec.text_tokens = 4;
  spec.task = Task::Planning;
  const BlockLayout layout = layout_blocks(spec, nullptr);
  CHECK_THROWS_AS(duplicate_noisy_clean(layout), LayoutError);
}

TEST_CASE("mask: a single text block is lower triangular with diagonal") {
  const BlockLayout layout = manual_layout({{BlockKind::Text, 3, false}});
  const auto mask = build_mask(layout);
  const std::vector<uint8_t> want = {1, 0, 0, 1, 1, 0, 1, 1, 1};
  CHECK(mask == want);
}

TEST_CASE("mask: image block then text block") {
  const BlockLayout layout =
      manual_layout({{BlockKind::ImageUnd, 2, false}, {BlockKind::Text, 2, false}});
  const auto mask = build_mask(layout);
  // Rows 0-1 see both image tokens; text rows see the image plus their
  // causal prefix.
  const std::vector<uint8_t> want = {
      1, 1, 0, 0,
      1, 1, 0, 0,
      1, 1, 1, 0,
      1, 1, 1, 1};
  CHECK(mask == want);
  CHECK(mask == oracle_mask(layout));
}

TEST_CASE("mask: noisy action is hidden, clean twin is the condition") {
  const BlockLayout layout = manual_layout({{BlockKind::ActionNoisy, 2, false},
                                            {BlockKind::ActionClean, 2, false},
                                            {BlockKind::ImageGenNoisy, 4, false}});
  const auto mask = build_mask(layout);
  const int n = 8;
  for (int i = 4; i < n; ++i) {  // image rows
    CHECK(mask[i * n + 0] == 0);
    CHECK(mask[i * n + 1] == 0);
    CHECK(mask[i * n + 2] == 1);
    CHECK(mask[i * n + 3] == 1);
  }
  // Noisy columns are invisible everywhere below their own block.
  for (int i = 2; i < n; ++i) {
    CHECK(mask[i * n + 0] == 0);
    CHECK(mask[i * n + 1] == 0);
  }
  CHECK(mask == oracle_mask(layout));
}

TEST_CASE("mask equals the brute-force oracle on random layouts") {
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const BlockLayout layout = random_layout(rng, 12);
    CHECK(build_mask(layout) == oracle_mask(layout));
  }
}

TEST_CASE("mask properties: leakage freedom and self visibility") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const BlockLayout layout = random_layout(rng, 10);
    const Packed packed = build_packed(layout);
    const int n = packed.length;
    for (int i = 0; i < n; ++i) {
      CHECK(packed.mask[static_cast<size_t>(i) * n + i] == 1);
      for (int j = 0; j < n; ++j) {
        if (!packed.mask[static_cast<size_t>(i) * n + j]) continue;
        const Block& bj = layout.blocks[packed.block_of[j]];
        if (is_noisy(bj.kind)) {
          // Only tokens of the same group may see a noisy column.
          CHECK(packed.group_of[i] == packed.group_of[j]);
        }
      }
    }
  }
}

TEST_CASE("monotone visibility: visible columns stay visible down a non-text block") {
  Rng rng(19);
  for (int trial = 0; trial < 60; ++trial) {
    const BlockLayout layout = random_layout(rng, 10);
    const Packed packed = build_packed(layout);
    const int n = packed.length;
    for (int i = 0; i + 1 < n; ++i) {
      const Block& bi = layout.blocks[packed.block_of[i]];
      const Block& bnext = layout.blocks[packed.block_of[i + 1]];
      const bool same_block = packed.block_of[i] == packed.block_of[i + 1];
      if (!same_block || bi.kind == BlockKind::Text || bnext.kind == BlockKind::Text) continue;
      for (int j = 0; j < n; ++j) {
        if (packed.mask[static_cast<size_t>(i) * n + j]) {
          CHECK(packed.mask[static_cast<size_t>(i + 1) * n + j] == 1);
        }
      }
    }
  }
}

TEST_CASE("positions: text consumes consecutive indices, blocks share one") {
  const BlockLayout layout = manual_layout({{BlockKind::Text, 3, false},
                                            {BlockKind::ImageUnd, 64, false},
                                            {BlockKind::ImageCtx, 16, true},
                                            {BlockKind::ImageUnd, 2, false}});
  const Positions pos = assign_positions(layout);
  CHECK(pos.rope[0] == 1);
  CHECK(pos.rope[1] == 2);
  CHECK(pos.rope[2] == 3);
  for (int t = 3; t < 83; ++t) CHECK(pos.rope[t] == 4);
  for (int t = 0; t < 80; ++t) CHECK(pos.intra[3 + t] == t);
  CHECK(pos.rope[83] == 5);
  CHECK(pos.rope[84] == 5);
  CHECK(pos.intra[83] == 0);
}

TEST_CASE("positions: rope indices are non-decreasing with unit steps per group") {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const BlockLayout layout = random_layout(rng, 12);
    const Positions pos = assign_positions(layout);
    const Packed packed = build_packed(layout);
    for (size_t t = 1; t < pos.rope.size(); ++t) {
      CHECK(pos.rope[t] >= pos.rope[t - 1]);
      const Block& b = layout.blocks[packed.block_of[t]];
      const Block& prev = layout.blocks[packed.block_of[t - 1]];
      if (b.kind == BlockKind::Text && prev.kind == BlockKind::Text &&
          packed.block_of[t] == packed.block_of[t - 1]) {
        CHECK(pos.rope[t] == pos.rope[t - 1] + 1);
      }
    }
  }
}

TEST_CASE("cfg_dropout: zero probabilities change nothing, certainty drops all text") {
  Rng rng(15);
  LayoutSpec spec;
  spec.text_tokens = 5;
  spec.task = Task::JointTraining;
  BlockLayout layout = duplicate_noisy_clean(layout_blocks(spec, &rng));

  DropProbs zero{0, 0, 0, 0};
  const BlockLayout same = cfg_dropout(layout, zero, &rng);
  for (const Block& b : same.blocks) CHECK(!b.dropped);

  DropProbs text_only{1.0, 0, 0, 0};
  const BlockLayout dropped = cfg_dropout(layout, text_only, &rng);
  for (const Block& b : dropped.blocks) {
    if (b.kind == BlockKind::Text) CHECK(b.dropped);
    else CHECK(!b.dropped);
  }
}

TEST_CASE("cfg_dropout: groups drop jointly at roughly the configured rate") {
  Rng rng(16);
  LayoutSpec spec;
  spec.text_tokens = 5;
  spec.task = Task::JointTraining;
  const BlockLayout base = duplicate_noisy_clean(layout_blocks(spec, &rng));
  DropProbs probs;  // 0.1 everywhere
  int group_draws = 0, group_drops = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const BlockLayout out = cfg_dropout(base, probs, &rng);
    for (const Block& b : out.blocks) {
      if (b.drop_group < 0) {
        CHECK(!b.dropped);
        continue;
      }
      ++group_draws;
      group_drops += b.dropped ? 1 : 0;
      // Noisy blocks never drop; supervised spans stay intact.
      CHECK(!b.supervised);
    }
  }
  const double rate = static_cast<double>(group_drops) / group_draws;
  CHECK(rate > 0.07);
  CHECK(rate < 0.13);
}

TEST_CASE("pack_sample assembles payloads from an episode") {
  const world::Episode ep = world::generate_episode(21, world::InstructionClass::TurnLeft);
  const codec::Vocabulary vocab = codec::Vocabulary::build_default();
  codec::ActionStats stats;
  stats.mean = {0.1, 0.0, 0.0};
  stats.stdev = {0.5, 0.1, 0.2};

  SampleSpec spec;
  spec.t0 = 4;
  spec.task = Task::JointTraining;
  Rng rng(17);
  const auto sample = pack_sample<double>(ep, spec, vocab, stats, &rng);

  REQUIRE(sample.layout.blocks.size() == 4 * 2 + 1 + 3);  // images+ctx, text, noisy+clean+img
  const auto starts = sample.layout.block_starts();
  for (size_t bi = 0; bi < sample.layout.blocks.size(); ++bi) {
    const Block& b = sample.layout.blocks[bi];
    switch (b.kind) {
      case BlockKind::Text:
        CHECK(static_cast<int>(sample.text_ids[bi].size()) == b.length);
        break;
      case BlockKind::ImageUnd:
        CHECK(sample.payload[bi].rows == codec::kImageTokens);
        CHECK(sample.payload[bi].cols == codec::kLatentDim);
        break;
      case BlockKind::ImageCtx:
        CHECK(sample.payload[bi].rows == codec::kCtxTokens);
        CHECK(sample.payload[bi].cols == codec::kCtxPatchDim);
        break;
      case BlockKind::ActionNoisy:
        CHECK(sample.x0[bi].rows == world::kPlanHorizon);
        CHECK(sample.eps[bi].size() == 0);  // noise comes from the flow module
        break;
      default:
        break;
    }
  }
  CHECK(sample.packed.length == sample.layout.total_tokens());

  // Frame-index token lands in the instruction block.
  SampleSpec with_frame = spec;
  with_frame.frame_token = 5;
  with_frame.future_offset = 5;
  const auto fsample = pack_sample<double>(ep, with_frame, vocab, stats, &rng);
  bool found = false;
  for (const auto& ids : fsample.text_ids) {
    for (int id : ids) {
      if (id == codec::kFrameIdxBase + 4) found = true;
    }
  }
  CHECK(found);

  SampleSpec bad = spec;
  bad.t0 = 1;
  CHECK_THROWS_AS((pack_sample<double>(ep, bad, vocab, stats, &rng)), LayoutError);
  bad = spec;
  bad.t0 = 12;
  CHECK_THROWS_AS((pack_sample<double>(ep, bad, vocab, stats, &rng)), LayoutError);
}

TEST_CASE("mask dump writes a readable PBM") {
  const BlockLayout layout =
      manual_layout({{BlockKind::ImageUnd, 2, false}, {BlockKind::Text, 2, false}});
  const auto mask = build_mask(layout);
  const std::string path =
      (std::filesystem::temp_directory_path() / "gd_mask_test.pbm").string();
  write_mask_pbm(mask, 4, path);
  std::ifstream in(path);
  std::string magic;
  int w = 0, h = 0;
  in >> magic >> w >> h;
  CHECK(magic == "P1");
  CHECK(w == 4);
  CHECK(h == 4);
  int ones = 0, bit = 0;
  while (in >> bit) ones += bit;
  CHECK(ones == 11);  // 2+2 image rows, 3 and 4 for the causal text rows
}
