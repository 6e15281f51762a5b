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

#include "griddrive/codec.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace griddrive::codec {

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

std::string frame_token(int k) { return "<frame_" + std::to_string(k) + ">"; }

}  // namespace

Vocabulary Vocabulary::build_default() {
  std::set<std::string> words;
  for (const std::string& t : world::instruction_templates()) {
    for (const std::string& w : split_words(t)) words.insert(w);
  }
  return from_words(std::vector<std::string>(words.begin(), words.end()));
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& non_special_words) {
  Vocabulary v;
  v.id_to_word_ = {"<bos>", "<eos>", "<unk>"};
  for (int k = 1; k <= kNumFrameTokens; ++k) v.id_to_word_.push_back(frame_token(k));
  for (const std::string& w : non_special_words) v.id_to_word_.push_back(w);
  for (size_t i = 0; i < v.id_to_word_.size(); ++i) {
    if (!v.word_to_id_.emplace(v.id_to_word_[i], static_cast<int>(i)).second) {
      throw ConfigError("vocabulary: duplicate word " + v.id_to_word_[i]);
    }
  }
  return v;
}

int Vocabulary::id(const std::string& word) const {
  const auto it = word_to_id_.find(word);
  return it == word_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw InvalidInputError("vocabulary: id out of range");
  return id_to_word_[id];
}

std::vector<std::string> Vocabulary::payload_words() const {
  return std::vector<std::string>(id_to_word_.begin() + kFrameIdxBase + kNumFrameTokens,
                                  id_to_word_.end());
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.push_back(kBosId);
  for (const std::string& w : split_words(text)) ids.push_back(vocab.id(w));
  ids.push_back(kEosId);
  return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == kBosId || id == kEosId) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.word(id);
  }
  return out;
}

MatD image_to_latents(const world::Image& image) {
  if (image.height != 32 || image.width != 32 || image.channels != 3) {
    throw InvalidInputError("image_to_latents: expected 32x32x3");
  }
  const int per_side = image.height / kPatch;  // 8
  MatD latents(kImageTokens, kLatentDim);
  for (int pi = 0; pi < per_side; ++pi) {
    for (int pj = 0; pj < per_side; ++pj) {
      double* row = latents.row(pi * per_side + pj);
      int d = 0;
      for (int r = 0; r < kPatch; ++r) {
        for (int c = 0; c < kPatch; ++c) {
          for (int ch = 0; ch < 3; ++ch) {
            row[d++] = image.at(pi * kPatch + r, pj * kPatch + c, ch);
          }
        }
      }
    }
  }
  return latents;
}

world::Image latents_to_image(const MatD& latents) {
  if (latents.rows != kImageTokens || latents.cols != kLatentDim) {
    throw ShapeError("latents_to_image: expected 64x48");
  }
  world::Image image;
  const int per_side = image.height / kPatch;
  for (int pi = 0; pi < per_side; ++pi) {
    for (int pj = 0; pj < per_side; ++pj) {
      const double* row = latents.row(pi * per_side + pj);
      int d = 0;
      for (int r = 0; r < kPatch; ++r) {
        for (int c = 0; c < kPatch; ++c) {
          for (int ch = 0; ch < 3; ++ch) {
            image.at(pi * kPatch + r, pj * kPatch + c, ch) = row[d++];
          }
        }
      }
    }
  }
  return image;
}

MatD ctx_patches(const world::Image& image) {
  if (image.height != 32 || image.width != 32 || image.channels != 3) {
    throw InvalidInputError("ctx_patches: expected 32x32x3");
  }
  const int per_side = image.height / kCtxPatch;  // 4
  MatD patches(kCtxTokens, kCtxPatchDim);
  for (int pi = 0; pi < per_side; ++pi) {
    for (int pj = 0; pj < per_side; ++pj) {
      double* row = patches.row(pi * per_side + pj);
      int d = 0;
      for (int r = 0; r < kCtxPatch; ++r) {
        for (int c = 0; c < kCtxPatch; ++c) {
          for (int ch = 0; ch < 3; ++ch) {
            row[d++] = image.at(pi * kCtxPatch + r, pj * kCtxPatch + c, ch);
          }
        }
      }
    }
  }
  return patches;
}

template <typename S>
Matrix<S> context_encode(const world::Image& image, const CtxEncoderWeights<S>& w) {
  const MatD patches = ctx_patches(image);
  const int d = w.patch_proj.cols;
  Matrix<S> embedded(kCtxTokens, d);
  for (int t = 0; t < kCtxTokens; ++t) {
    S* out = embedded.row(t);
    for (int j = 0; j < d; ++j) out[j] = w.bias.v[j];
    const double* in = patches.row(t);
    for (int p = 0; p < kCtxPatchDim; ++p) {
      const S s = static_cast<S>(in[p]);
      const S* wrow = w.patch_proj.row(p);
      for (int j = 0; j < d; ++j) out[j] += s * wrow[j];
    }
  }
  // One token-mixing layer: X += Mix * X.
  Matrix<S> mixed = embedded;
  matmul_acc(w.mix, embedded, mixed);
  return mixed;
}

template Matrix<float> context_encode(const world::Image&, const CtxEncoderWeights<float>&);
template Matrix<double> context_encode(const world::Image&, const CtxEncoderWeights<double>&);

ActionStats compute_action_stats(const std::vector<world::Episode>& episodes) {
  ActionStats stats;
  std::array<double, kActionDim> sum{};
  std::array<double, kActionDim> sum_sq{};
  size_t n = 0;
  for (const world::Episode& ep : episodes) {
    for (const world::Action& a : ep.actions) {
      const double vals[3] = {a.dx, a.dy, a.dtheta};
      for (int d = 0; d < kActionDim; ++d) {
        sum[d] += vals[d];
        sum_sq[d] += vals[d] * vals[d];
      }
      ++n;
    }
  }
  if (n == 0) throw ConfigError("compute_action_stats: no actions");
  for (int d = 0; d < kActionDim; ++d) {
    stats.mean[d] = sum[d] / static_cast<double>(n);
    const double var = sum_sq[d] / static_cast<double>(n) - stats.mean[d] * stats.mean[d];
    stats.stdev[d] = std::sqrt(std::max(var, 0.0));
    if (stats.stdev[d] <= 0.0) {
      throw ConfigError("compute_action_stats: zero stddev in dimension " + std::to_string(d));
    }
  }
  return stats;
}

MatD normalize_actions(const MatD& actions, const ActionStats& stats) {
  if (actions.cols != kActionDim) throw ShapeError("normalize_actions: expected Nx3");
  MatD out(actions.rows, actions.cols);
  for (int r = 0; r < actions.rows; ++r) {
    for (int d = 0; d < kActionDim; ++d) {
      out.at(r, d) = (actions.at(r, d) - stats.mean[d]) / stats.stdev[d];
    }
  }
  return out;
}

MatD denormalize_actions(const MatD& normed, const ActionStats& stats) {
  if (normed.cols != kActionDim) throw ShapeError("denormalize_actions: expected Nx3");
  MatD out(normed.rows, normed.cols);
  for (int r = 0; r < normed.rows; ++r) {
    for (int d = 0; d < kActionDim; ++d) {
      out.at(r, d) = normed.at(r, d) * stats.stdev[d] + stats.mean[d];
    }
  }
  return out;
}

std::vector<world::Action> to_relative(const std::vector<world::EgoState>& poses) {
  if (poses.size() < 2) throw InvalidInputError("to_relative: need at least 2 poses");
  std::vector<world::Action> actions;
  actions.reserve(poses.size() - 1);
  for (size_t k = 0; k + 1 < poses.size(); ++k) {
    const double c = std::cos(poses[k].theta);
    const double s = std::sin(poses[k].theta);
    const double wx = poses[k + 1].x - poses[k].x;
    const double wy = poses[k + 1].y - poses[k].y;
    world::Action a;
    a.dx = c * wx + s * wy;
    a.dy = -s * wx + c * wy;
    a.dtheta = wrap_angle(poses[k + 1].theta - poses[k].theta);
    actions.push_back(a);
  }
  return actions;
}

std::vector<world::EgoState> fold(const world::EgoState& start,
                                  const std::vector<world::Action>& actions) {
  std::vector<world::EgoState> poses;
  poses.reserve(actions.size() + 1);
  poses.push_back(start);
  for (const world::Action& a : actions) poses.push_back(world::step(poses.back(), a));
  return poses;
}

MatD actions_to_mat(const std::vector<world::Action>& actions) {
  MatD m(static_cast<int>(actions.size()), kActionDim);
  for (size_t i = 0; i < actions.size(); ++i) {
    m.at(static_cast<int>(i), 0) = actions[i].dx;
    m.at(static_cast<int>(i), 1) = actions[i].dy;
    m.at(static_cast<int>(i), 2) = actions[i].dtheta;
  }
  return m;
}

std::vector<world::Action> mat_to_actions(const MatD& m) {
  if (m.cols != kActionDim) throw ShapeError("mat_to_actions: expected Nx3");
  std::vector<world::Action> out(m.rows);
  for (int i = 0; i < m.rows; ++i) {
    out[i] = {m.at(i, 0), m.at(i, 1), m.at(i, 2)};
  }
  return out;
}

}  // namespace griddrive::codec
