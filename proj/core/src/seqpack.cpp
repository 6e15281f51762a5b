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

#include "griddrive/seqpack.hpp"

#include <fstream>

namespace griddrive::seq {

namespace {

constexpr double kMaxTrainTimestep = 0.999;

Block make_block(BlockKind kind, int length, int time_index) {
  Block b;
  b.kind = kind;
  b.length = length;
  b.time_index = time_index;
  b.supervised = is_noisy(kind);
  return b;
}

DropKind drop_kind_for(BlockKind k) {
  switch (k) {
    case BlockKind::Text: return DropKind::Text;
    case BlockKind::ImageCtx: return DropKind::Context;
    case BlockKind::ImageUnd:
    case BlockKind::ImageGenClean: return DropKind::CleanImage;
    case BlockKind::ActionClean: return DropKind::CleanAction;
    default: throw LayoutError("drop_kind_for: noisy blocks have no drop group");
  }
}

}  // namespace

void assign_drop_groups(BlockLayout& layout) {
  int next = 0;
  for (Block& b : layout.blocks) {
    if (is_noisy(b.kind)) {
      b.drop_group = -1;
      continue;
    }
    b.drop_group = next++;
    b.drop_kind = drop_kind_for(b.kind);
  }
}

int BlockLayout::total_tokens() const {
  int n = 0;
  for (const Block& b : blocks) n += b.length;
  return n;
}

std::vector<int> BlockLayout::block_starts() const {
  std::vector<int> starts;
  starts.reserve(blocks.size());
  int off = 0;
  for (const Block& b : blocks) {
    starts.push_back(off);
    off += b.length;
  }
  return starts;
}

BlockLayout layout_blocks(const LayoutSpec& spec, Rng* rng) {
  if (spec.history_len < 1) throw LayoutError("layout_blocks: need at least one history image");
  if (spec.text_tokens < 2) throw LayoutError("layout_blocks: text must include BOS/EOS");
  if (spec.mode == LayoutMode::Interleaved &&
      (spec.interleave_k < 2 || spec.interleave_k != spec.history_len)) {
    throw LayoutError("layout_blocks: interleaved mode requires history_len == k >= 2");
  }

  BlockLayout layout;
  layout.task = spec.task;
  layout.mode = spec.mode;
  layout.interleave_k = spec.mode == LayoutMode::Interleaved ? spec.interleave_k : 0;
  layout.history_len = spec.history_len;
  layout.horizon = spec.horizon;

  const int t0 = 0;  // block time indices are relative to the current step
  auto push_image = [&](int t) {
    layout.blocks.push_back(make_block(BlockKind::ImageUnd, codec::kImageTokens, t));
    if (spec.use_context) {
      Block ctx = make_block(BlockKind::ImageCtx, codec::kCtxTokens, t);
      ctx.attached_to_prev = true;
      layout.blocks.push_back(ctx);
    }
  };

  const int T = spec.history_len;
  if (spec.mode == LayoutMode::ImagesOnly) {
    for (int i = 0; i < T; ++i) push_image(t0 - T + 1 + i);
  } else {
    for (int i = 0; i < T; ++i) {
      const int t = t0 - T + 1 + i;
      push_image(t);
      if (i + 1 < T) layout.blocks.push_back(make_block(BlockKind::ActionClean, 1, t));
    }
  }
  layout.blocks.push_back(make_block(BlockKind::Text, spec.text_tokens, t0));

  switch (spec.task) {
    case Task::Planning:
      layout.blocks.push_back(make_block(BlockKind::ActionNoisy, spec.horizon, t0));
      break;
    case Task::Generation:
      layout.blocks.push_back(make_block(BlockKind::ActionClean, spec.horizon, t0));
      layout.blocks.push_back(make_block(BlockKind::ImageGenNoisy, codec::kImageTokens, t0));
      break;
    case Task::JointTraining:
      layout.blocks.push_back(make_block(BlockKind::ActionNoisy, spec.horizon, t0));
      layout.blocks.push_back(make_block(BlockKind::ImageGenNoisy, codec::kImageTokens, t0));
      break;
  }

  if (spec.task == Task::JointTraining && rng == nullptr) {
    throw LayoutError("layout_blocks: joint training needs an rng");
  }
  for (Block& b : layout.blocks) {
    if (!b.supervised) continue;
    // Training layouts draw a diffusion time, inference starts at t = 1.
    b.timestep = rng != nullptr ? rng->uniform(0.0, kMaxTrainTimestep) : 1.0;
  }
  assign_drop_groups(layout);
  return layout;
}

BlockLayout duplicate_noisy_clean(const BlockLayout& layout) {
  if (layout.task != Task::JointTraining) {
    throw LayoutError("duplicate_noisy_clean: only joint-training layouts are duplicated");
  }
  BlockLayout out = layout;
  out.blocks.clear();
  const auto& blocks = layout.blocks;
  for (size_t i = 0; i < blocks.size(); ++i) {
    out.blocks.push_back(blocks[i]);
    if (!is_noisy(blocks[i].kind)) continue;
    if (i + 1 == blocks.size()) continue;  // conditions nothing downstream
    const BlockKind clean_kind = blocks[i].kind == BlockKind::ActionNoisy
                                     ? BlockKind::ActionClean
                                     : BlockKind::ImageGenClean;
    const Block& next = blocks[i + 1];
    const bool already_dup = next.kind == clean_kind && next.length == blocks[i].length &&
                             next.time_index == blocks[i].time_index;
    if (already_dup) continue;
    Block clean = make_block(clean_kind, blocks[i].length, blocks[i].time_index);
    out.blocks.push_back(clean);
  }
  assign_drop_groups(out);
  return out;
}

namespace {

struct TokenView {
  std::vector<int> block_of;
  std::vector<int> group_of;
  std::vector<int> group_end;
  int length = 0;
};

TokenView token_view(const BlockLayout& layout) {
  TokenView tv;
  int group = -1;
  for (size_t bi = 0; bi < layout.blocks.size(); ++bi) {
    const Block& b = layout.blocks[bi];
    if (b.attached_to_prev) {
      if (bi == 0) throw LayoutError("attached block has no predecessor");
    } else {
      ++group;
    }
    for (int k = 0; k < b.length; ++k) {
      tv.block_of.push_back(static_cast<int>(bi));
      tv.group_of.push_back(group);
    }
  }
  tv.length = static_cast<int>(tv.block_of.size());
  tv.group_end.resize(tv.length);
  int end = tv.length;
  for (int i = tv.length - 1; i >= 0; --i) {
    if (i + 1 < tv.length && tv.group_of[i + 1] != tv.group_of[i]) end = i + 1;
    tv.group_end[i] = end;
  }
  return tv;
}

}  // namespace

std::vector<uint8_t> build_mask(const BlockLayout& layout) {
  const TokenView tv = token_view(layout);
  const int n = tv.length;
  std::vector<uint8_t> mask(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    const Block& bi = layout.blocks[tv.block_of[i]];
    uint8_t* row = mask.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const Block& bj = layout.blocks[tv.block_of[j]];
      bool visible = false;
      if (tv.group_of[j] < tv.group_of[i]) {
        visible = !is_noisy(bj.kind);
      } else if (tv.group_of[j] == tv.group_of[i]) {
        if (bi.kind == BlockKind::Text && bj.kind == BlockKind::Text) {
          visible = j <= i;
        } else {
          visible = true;
        }
      }
      row[j] = visible ? 1 : 0;
    }
  }
  return mask;
}

Positions assign_positions(const BlockLayout& layout) {
  Positions pos;
  int p = 0;
  int intra = 0;
  for (size_t bi = 0; bi < layout.blocks.size(); ++bi) {
    const Block& b = layout.blocks[bi];
    if (b.kind == BlockKind::Text) {
      for (int k = 0; k < b.length; ++k) {
        pos.rope.push_back(++p);
        pos.intra.push_back(k);
      }
      continue;
    }
    if (!b.attached_to_prev) {
      ++p;
      intra = 0;
    }
    for (int k = 0; k < b.length; ++k) {
      pos.rope.push_back(p);
      pos.intra.push_back(intra++);
    }
  }
  return pos;
}

double DropProbs::of(DropKind k) const {
  switch (k) {
    case DropKind::Text: return text;
    case DropKind::Context: return context;
    case DropKind::CleanImage: return clean_image;
    case DropKind::CleanAction: return clean_action;
  }
  return 0.0;
}

BlockLayout cfg_dropout(const BlockLayout& layout, const DropProbs& probs, Rng* rng) {
  BlockLayout out = layout;
  int max_group = -1;
  for (const Block& b : out.blocks) max_group = std::max(max_group, b.drop_group);
  std::vector<uint8_t> drop(max_group + 1, 0);
  std::vector<uint8_t> decided(max_group + 1, 0);
  for (const Block& b : out.blocks) {
    if (b.drop_group < 0 || decided[b.drop_group]) continue;
    decided[b.drop_group] = 1;
    const double p = probs.of(b.drop_kind);
    drop[b.drop_group] = (p > 0.0 && rng->uniform() < p) ? 1 : 0;
  }
  for (Block& b : out.blocks) {
    if (b.drop_group >= 0 && drop[b.drop_group]) b.dropped = true;
  }
  return out;
}

Packed build_packed(const BlockLayout& layout) {
  Packed packed;
  const TokenView tv = token_view(layout);
  packed.length = tv.length;
  packed.block_of = tv.block_of;
  packed.group_of = tv.group_of;
  packed.group_end = tv.group_end;
  packed.row_offset.resize(tv.length + 1);
  packed.row_offset[0] = 0;
  for (int i = 0; i < tv.length; ++i) {
    packed.row_offset[i + 1] = packed.row_offset[i] + tv.group_end[i];
  }
  packed.mask = build_mask(layout);
  packed.pos = assign_positions(layout);
  return packed;
}

template <typename S>
PackedSample<S> pack_sample(const world::Episode& episode, const SampleSpec& spec,
                            const codec::Vocabulary& vocab,
                            const codec::ActionStats& stats, Rng* rng) {
  const int T = spec.mode == LayoutMode::Interleaved ? spec.interleave_k : 4;
  const int horizon = world::kPlanHorizon;
  if (spec.t0 < T - 1) throw LayoutError("pack_sample: not enough history before t0");
  if (spec.t0 + spec.future_offset > world::kHorizon) {
    throw LayoutError("pack_sample: future frame beyond the episode horizon");
  }

  std::string text = episode.instruction_text;
  if (spec.frame_token >= 1 && spec.frame_token <= codec::kNumFrameTokens) {
    text += " <frame_" + std::to_string(spec.frame_token) + ">";
  }
  const std::vector<int> ids = codec::tokenize(text, vocab);

  LayoutSpec ls;
  ls.history_len = T;
  ls.horizon = horizon;
  ls.text_tokens = static_cast<int>(ids.size());
  ls.task = spec.task;
  ls.mode = spec.mode;
  ls.interleave_k = spec.interleave_k;
  ls.use_context = spec.use_context;

  PackedSample<S> sample;
  sample.layout = layout_blocks(ls, rng);
  if (spec.task == Task::JointTraining) {
    sample.layout = duplicate_noisy_clean(sample.layout);
  }

  const size_t nblocks = sample.layout.blocks.size();
  sample.payload.resize(nblocks);
  sample.text_ids.resize(nblocks);
  sample.x0.resize(nblocks);
  sample.eps.resize(nblocks);

  auto image_at = [&](int t) { return world::to_image(episode.frames[t]); };
  auto latents_at = [&](int t) { return codec::image_to_latents(image_at(t)); };
  auto normalized_plan = [&]() {
    MatD plan(horizon, codec::kActionDim);
    for (int k = 0; k < horizon; ++k) {
      plan.at(k, 0) = episode.actions[spec.t0 + k].dx;
      plan.at(k, 1) = episode.actions[spec.t0 + k].dy;
      plan.at(k, 2) = episode.actions[spec.t0 + k].dtheta;
    }
    return codec::normalize_actions(plan, stats);
  };
  auto to_s = [](const MatD& m) {
    Matrix<S> out(m.rows, m.cols);
    for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = static_cast<S>(m.v[i]);
    return out;
  };

  for (size_t bi = 0; bi < nblocks; ++bi) {
    const Block& b = sample.layout.blocks[bi];
    const int t = spec.t0 + b.time_index;
    switch (b.kind) {
      case BlockKind::Text:
        sample.text_ids[bi] = ids;
        break;
      case BlockKind::ImageUnd:
        sample.payload[bi] = to_s(latents_at(t));
        break;
      case BlockKind::ImageCtx:
        sample.payload[bi] = to_s(codec::ctx_patches(image_at(t)));
        break;
      case BlockKind::ActionClean: {
        if (b.length == 1) {
          // Single history action.
          MatD one(1, codec::kActionDim);
          one.at(0, 0) = episode.actions[t].dx;
          one.at(0, 1) = episode.actions[t].dy;
          one.at(0, 2) = episode.actions[t].dtheta;
          sample.payload[bi] = to_s(codec::normalize_actions(one, stats));
        } else {
          sample.payload[bi] = to_s(normalized_plan());
        }
        break;
      }
      case BlockKind::ActionNoisy:
        sample.x0[bi] = to_s(normalized_plan());
        sample.payload[bi] = sample.x0[bi];  // noisified by the flow module
        break;
      case BlockKind::ImageGenClean:
      case BlockKind::ImageGenNoisy: {
        const MatD target = codec::image_to_latents(image_at(spec.t0 + spec.future_offset));
        if (b.kind == BlockKind::ImageGenNoisy) {
          sample.x0[bi] = to_s(target);
          sample.payload[bi] = sample.x0[bi];
        } else {
          sample.payload[bi] = to_s(target);
        }
        break;
      }
    }
  }
  sample.rebuild_packed();
  return sample;
}

template PackedSample<float> pack_sample(const world::Episode&, const SampleSpec&,
                                         const codec::Vocabulary&, const codec::ActionStats&,
                                         Rng*);
template PackedSample<double> pack_sample(const world::Episode&, const SampleSpec&,
                                          const codec::Vocabulary&, const codec::ActionStats&,
                                          Rng*);

BlockLayout random_layout(Rng& rng, int max_blocks, int max_block_len) {
  BlockLayout layout;
  layout.task = Task::JointTraining;
  const int n = 1 + static_cast<int>(rng.uniform_index(max_blocks));
  for (int i = 0; i < n; ++i) {
    const int pick = static_cast<int>(rng.uniform_index(6));
    const int len = 1 + static_cast<int>(rng.uniform_index(max_block_len));
    BlockKind kind;
    switch (pick) {
      case 0: kind = BlockKind::Text; break;
      case 1: kind = BlockKind::ImageUnd; break;
      case 2: kind = BlockKind::ActionClean; break;
      case 3: kind = BlockKind::ActionNoisy; break;
      case 4: kind = BlockKind::ImageGenClean; break;
      default: kind = BlockKind::ImageGenNoisy; break;
    }
    Block b = make_block(kind, len, i);
    if (b.supervised) b.timestep = rng.uniform(0.0, kMaxTrainTimestep);
    layout.blocks.push_back(b);
    // Sometimes attach a context block to an image block.
    if (kind == BlockKind::ImageUnd && rng.uniform() < 0.4) {
      Block ctx = make_block(BlockKind::ImageCtx, 1 + static_cast<int>(rng.uniform_index(max_block_len)), i);
      ctx.attached_to_prev = true;
      layout.blocks.push_back(ctx);
    }
  }
  assign_drop_groups(layout);
  return layout;
}

void write_mask_pbm(const std::vector<uint8_t>& mask, int n, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write mask pbm: " + path);
  out << "P1\n" << n << " " << n << "\n";
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      out << (mask[static_cast<size_t>(i) * n + j] ? 1 : 0);
      out << (j + 1 == n ? '\n' : ' ');
    }
  }
}

}  // namespace griddrive::seq
