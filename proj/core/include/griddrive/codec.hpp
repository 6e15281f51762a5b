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
#include <map>
#include <string>
#include <vector>

#include "griddrive/common.hpp"
#include "griddrive/world.hpp"

namespace griddrive::codec {

// --- text -----------------------------------------------------------------

constexpr int kBosId = 0;
constexpr int kEosId = 1;
constexpr int kUnkId = 2;
constexpr int kFrameIdxBase = 3;  // <frame_1> .. <frame_8>
constexpr int kNumFrameTokens = 8;

// Closed word-level vocabulary over the instruction-template lexicon plus
// the specials {BOS, EOS, UNK, <frame_k>}. Ordering is stable and is
// persisted with checkpoints.
class Vocabulary {
 public:
  // Built from the full template corpus.
  static Vocabulary build_default();
  static Vocabulary from_words(const std::vector<std::string>& non_special_words);

  int size() const { return static_cast<int>(id_to_word_.size()); }
  int id(const std::string& word) const;  // kUnkId if unknown
  const std::string& word(int id) const;
  const std::vector<std::string>& words() const { return id_to_word_; }
  // Non-special words in id order, for serialization.
  std::vector<std::string> payload_words() const;

 private:
  std::vector<std::string> id_to_word_;
  std::map<std::string, int> word_to_id_;
};

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

// --- images -----------------------------------------------------------------

// 32x32x3 image <-> 64 tokens x 48 dims via non-overlapping 4x4 patches.
// Values are carried through unchanged so the round trip is bit-exact.
constexpr int kPatch = 4;
constexpr int kImageTokens = 64;
constexpr int kLatentDim = 48;

MatD image_to_latents(const world::Image& image);
world::Image latents_to_image(const MatD& latents);

// 8x8 patches feeding the learned context encoder: 16 rows of 192.
constexpr int kCtxPatch = 8;
constexpr int kCtxTokens = 16;
constexpr int kCtxPatchDim = kCtxPatch * kCtxPatch * 3;

MatD ctx_patches(const world::Image& image);

// Context-encoder weights live with the model but the operation itself is
// a plain function of (image, weights): patch embedding plus one token
// mixing layer.
template <typename S>
struct CtxEncoderWeights {
  Matrix<S> patch_proj;  // kCtxPatchDim x d
  Matrix<S> bias;        // 1 x d
  Matrix<S> mix;         // kCtxTokens x kCtxTokens
};

template <typename S>
Matrix<S> context_encode(const world::Image& image, const CtxEncoderWeights<S>& w);

// --- actions -----------------------------------------------------------------

constexpr int kActionDim = 3;

// Per-dimension z-score statistics over the training split.
struct ActionStats {
  std::array<double, kActionDim> mean{};
  std::array<double, kActionDim> stdev{};
};

ActionStats compute_action_stats(const std::vector<world::Episode>& episodes);

MatD normalize_actions(const MatD& actions, const ActionStats& stats);
MatD denormalize_actions(const MatD& normed, const ActionStats& stats);

std::vector<world::Action> to_relative(const std::vector<world::EgoState>& poses);
std::vector<world::EgoState> fold(const world::EgoState& start,
                                  const std::vector<world::Action>& actions);

MatD actions_to_mat(const std::vector<world::Action>& actions);
std::vector<world::Action> mat_to_actions(const MatD& m);

}  // namespace griddrive::codec
