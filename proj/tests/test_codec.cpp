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
#include <cmath>

#include "doctest.h"
#include "griddrive/codec.hpp"
#include "griddrive/dataset.hpp"
#include "test_support.hpp"

using namespace griddrive;
using namespace griddrive::codec;

TEST_CASE("tokenize: empty text is BOS/EOS") {
  const Vocabulary vocab = Vocabulary::build_default();
  const std::vector<int> ids = tokenize("", vocab);
  CHECK(ids == std::vector<int>{kBosId, kEosId});
}

TEST_CASE("tokenize round trips every instruction template") {
  const Vocabulary vocab = Vocabulary::build_default();
  for (const std::string& t : world::instruction_templates()) {
    CHECK(detokenize(tokenize(t, vocab), vocab) == t);
  }
}

TEST_CASE("tokenize: frame-index specials are single tokens") {
  const Vocabulary vocab = Vocabulary::build_default();
  const auto ids = tokenize("turn left <frame_3>", vocab);
  CHECK(std::find(ids.begin(), ids.end(), kFrameIdxBase + 2) != ids.end());
  CHECK(detokenize(ids, vocab) == "turn left <frame_3>");
}

TEST_CASE("tokenize: unknown words become UNK") {
  const Vocabulary vocab = Vocabulary::build_default();
  const auto ids = tokenize("warp nine please", vocab);
  CHECK(std::count(ids.begin(), ids.end(), kUnkId) >= 2);
}

TEST_CASE("vocabulary ordering survives serialization by payload words") {
  const Vocabulary vocab = Vocabulary::build_default();
  const Vocabulary again = Vocabulary::from_words(vocab.payload_words());
  REQUIRE(vocab.size() == again.size());
  for (int i = 0; i < vocab.size(); ++i) CHECK(vocab.word(i) == again.word(i));
}

TEST_CASE("patchify: constant image gives constant tokens") {
  world::Image img;
  for (auto& p : img.px) p = 0.625;
  const MatD lat = image_to_latents(img);
  CHECK(lat.rows == kImageTokens);
  CHECK(lat.cols == kLatentDim);
  for (double v : lat.v) CHECK(v == 0.625);
}

TEST_CASE("patchify round trip is bit-exact on arbitrary images") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    world::Image img;
    for (auto& p : img.px) p = rng.uniform();
    const world::Image back = latents_to_image(image_to_latents(img));
    for (size_t i = 0; i < img.px.size(); ++i) CHECK(img.px[i] == back.px[i]);
  }
}

TEST_CASE("patchify rejects wrong shapes") {
  MatD bad(10, 10);
  CHECK_THROWS_AS(latents_to_image(bad), ShapeError);
}

TEST_CASE("ctx patches have the expected geometry") {
  world::Image img;
  img.at(0, 0, 0) = 1.0;   // patch (0,0)
  img.at(8, 0, 1) = 1.0;   // patch (1,0)
  const MatD patches = ctx_patches(img);
  CHECK(patches.rows == kCtxTokens);
  CHECK(patches.cols == kCtxPatchDim);
  CHECK(patches.at(0, 0) == 1.0);
  CHECK(patches.at(4, 1) == 1.0);
}

TEST_CASE("context_encode is deterministic and shaped 16 x d") {
  Rng rng(6);
  CtxEncoderWeights<double> w;
  w.patch_proj = gdtest::random_matrix<double>(kCtxPatchDim, 24, rng, 0.1);
  w.bias = gdtest::random_matrix<double>(1, 24, rng, 0.1);
  w.mix = gdtest::random_matrix<double>(kCtxTokens, kCtxTokens, rng, 0.1);
  world::Image img;
  for (auto& p : img.px) p = rng.uniform();
  const auto a = context_encode(img, w);
  const auto b = context_encode(img, w);
  CHECK(a.rows == 16);
  CHECK(a.cols == 24);
  for (size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == b.v[i]);
}

TEST_CASE("to_relative: identity frame and lateral step") {
  std::vector<world::EgoState> poses = {{0, 0, 0, 0}, {1, 0, 0, 2}};
  auto acts = to_relative(poses);
  REQUIRE(acts.size() == 1);
  CHECK(acts[0].dx == doctest::Approx(1.0));
  CHECK(acts[0].dy == doctest::Approx(0.0));
  CHECK(acts[0].dtheta == doctest::Approx(0.0));

  poses = {{0, 0, 0, 0}, {0, 1, kPi / 2, 2}};
  acts = to_relative(poses);
  CHECK(acts[0].dx == doctest::Approx(0.0));
  CHECK(acts[0].dy == doctest::Approx(1.0));
  CHECK(acts[0].dtheta == doctest::Approx(kPi / 2));

  CHECK_THROWS_AS(to_relative({world::EgoState{}}), InvalidInputError);
}

TEST_CASE("fold inverts to_relative to 1e-9 on random trajectories") {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<world::EgoState> poses;
    world::EgoState p{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3), 0};
    poses.push_back(p);
    for (int k = 0; k < 16; ++k) {
      world::Action a{rng.uniform(-1, 1.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.6, 0.6)};
      p = world::step(p, a);
      poses.push_back(p);
    }
    const auto acts = to_relative(poses);
    const auto back = fold(poses[0], acts);
    REQUIRE(back.size() == poses.size());
    for (size_t i = 0; i < poses.size(); ++i) {
      CHECK(std::abs(back[i].x - poses[i].x) <= 1e-9);
      CHECK(std::abs(back[i].y - poses[i].y) <= 1e-9);
      CHECK(std::abs(wrap_angle(back[i].theta - poses[i].theta)) <= 1e-9);
    }
  }
}

TEST_CASE("normalization: identity stats and exact round trip") {
  ActionStats unit;
  unit.mean = {0, 0, 0};
  unit.stdev = {1, 1, 1};
  Rng rng(8);
  MatD a = gdtest::random_matrix<double>(8, 3, rng);
  const MatD normed = normalize_actions(a, unit);
  for (size_t i = 0; i < a.v.size(); ++i) CHECK(normed.v[i] == a.v[i]);

  ActionStats stats;
  stats.mean = {0.4, -0.1, 0.02};
  stats.stdev = {0.5, 0.04, 0.2};
  const MatD round = denormalize_actions(normalize_actions(a, stats), stats);
  for (size_t i = 0; i < a.v.size(); ++i) CHECK(std::abs(round.v[i] - a.v[i]) <= 1e-9);
}

TEST_CASE("action stats from the train split normalize it to zero mean unit spread") {
  const world::Dataset ds = world::generate_dataset(100, 3, world::uniform_class_mix());
  const ActionStats stats = compute_action_stats(ds.episodes);
  double sum[3] = {}, sq[3] = {};
  size_t n = 0;
  for (const auto& ep : ds.episodes) {
    MatD acts = actions_to_mat(ep.actions);
    const MatD normed = normalize_actions(acts, stats);
    for (int r = 0; r < normed.rows; ++r) {
      for (int d = 0; d < 3; ++d) {
        sum[d] += normed.at(r, d);
        sq[d] += normed.at(r, d) * normed.at(r, d);
      }
    }
    n += normed.rows;
  }
  for (int d = 0; d < 3; ++d) {
    const double mean = sum[d] / n;
    const double stdev = std::sqrt(sq[d] / n - mean * mean);
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(stdev - 1.0) < 0.05);
  }
}

TEST_CASE("degenerate action distributions are a configuration error") {
  world::Episode ep;
  ep.actions.assign(16, world::Action{1.0, 0.0, 0.0});
  CHECK_THROWS_AS(compute_action_stats({ep}), ConfigError);
}

TEST_CASE("action embedding is affine: bias at zero, superposition elsewhere") {
  Rng rng(9);
  model::MoTConfig cfg = gdtest::micro_config();
  cfg.layers = 0;
  model::MoTWeights<double> w;
  w.allocate(cfg);
  w.init(rng);

  auto embed = [&](const MatD& actions) {
    seq::PackedSample<double> sample;
    seq::Block b;
    b.kind = seq::BlockKind::ActionClean;
    b.length = actions.rows;
    sample.layout.task = seq::Task::Planning;
    sample.layout.blocks.push_back(b);
    seq::assign_drop_groups(sample.layout);
    sample.payload.resize(1);
    sample.text_ids.resize(1);
    sample.x0.resize(1);
    sample.eps.resize(1);
    sample.payload[0] = actions;
    sample.rebuild_packed();
    model::MoTCache<double> cache;
    mot_forward(sample, w, &cache);
    return cache.x0[static_cast<int>(model::Expert::Act)];
  };

  const MatD zero(4, 3);
  const MatD base = embed(zero);  // bias plus positional terms only
  MatD a = gdtest::random_matrix<double>(4, 3, rng);
  MatD a2(4, 3);
  for (size_t i = 0; i < a.v.size(); ++i) a2.v[i] = 2.5 * a.v[i];
  const MatD ea = embed(a);
  const MatD ea2 = embed(a2);
  for (size_t i = 0; i < ea.v.size(); ++i) {
    CHECK(ea2.v[i] - base.v[i] == doctest::Approx(2.5 * (ea.v[i] - base.v[i])).epsilon(1e-9));
  }
  // Zero input reproduces the bias plus the sinusoidal position term.
  for (int r = 0; r < base.rows; ++r) {
    for (int c = 0; c < base.cols; ++c) {
      // Subtracting the sinusoidal term leaves exactly the bias.
      double pe = 0.0;
      const int dim = base.cols;
      const int j = c;
      const double freq = std::pow(10000.0, -static_cast<double>(j - (j % 2)) / dim);
      pe = (j % 2 == 0) ? 0.2 * std::sin(r * freq) : 0.2 * std::cos(r * freq);
      CHECK(base.at(r, c) == doctest::Approx(w.act_embed_act_bias.v[c] + pe).epsilon(1e-9));
    }
  }
}
