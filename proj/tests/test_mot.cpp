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
#include "test_support.hpp"

using namespace griddrive;
using namespace gdtest;

TEST_CASE("route splits by expert and preserves order") {
  std::vector<int> tags = {0, 2, 0, 1};
  const model::Routing r = model::route(tags);
  CHECK(r.tokens[0] == std::vector<int>{0, 2});
  CHECK(r.tokens[2] == std::vector<int>{1});
  CHECK(r.tokens[1] == std::vector<int>{3});
  // Reassembly restores the identity permutation.
  std::vector<int> restored(tags.size(), -1);
  for (int e = 0; e < model::kNumExperts; ++e) {
    for (size_t row = 0; row < r.tokens[e].size(); ++row) {
      restored[r.tokens[e][row]] = e;
    }
  }
  CHECK(restored == tags);
  for (size_t t = 0; t < tags.size(); ++t) {
    CHECK(r.tokens[tags[t]][r.row_of[t]] == static_cast<int>(t));
  }
  CHECK_THROWS_AS(model::route({0, 7}), InvalidInputError);
}

TEST_CASE("expert_for maps block kinds, following the action host") {
  model::MoTConfig cfg = micro_config();
  CHECK(model::expert_for(seq::BlockKind::Text, cfg) == model::Expert::Und);
  CHECK(model::expert_for(seq::BlockKind::ImageUnd, cfg) == model::Expert::Und);
  CHECK(model::expert_for(seq::BlockKind::ImageCtx, cfg) == model::Expert::Und);
  CHECK(model::expert_for(seq::BlockKind::ImageGenNoisy, cfg) == model::Expert::Gen);
  CHECK(model::expert_for(seq::BlockKind::ActionNoisy, cfg) == model::Expert::Act);
  cfg.action_module = model::ActionModule::VLM;
  CHECK(model::expert_for(seq::BlockKind::ActionNoisy, cfg) == model::Expert::Und);
  cfg.action_module = model::ActionModule::Diffusion;
  CHECK(model::expert_for(seq::BlockKind::ActionClean, cfg) == model::Expert::Gen);
}

TEST_CASE("param_count matches the enumerated allocation") {
  for (model::ActionModule am :
       {model::ActionModule::Expert, model::ActionModule::VLM, model::ActionModule::Diffusion}) {
    model::MoTConfig cfg = micro_config(11);
    cfg.action_module = am;
    model::MoTWeights<double> w;
    w.allocate(cfg);
    CHECK(model::param_count(cfg) == w.num_params());
  }
}

TEST_CASE("param_count: zero layers leaves embeddings and readouts only") {
  model::MoTConfig cfg = micro_config();
  model::MoTConfig flat = cfg;
  flat.layers = 0;
  const size_t with_layers = model::param_count(cfg);
  const size_t without = model::param_count(flat);
  CHECK(without < with_layers);
  // Doubling depth doubles the per-layer term exactly.
  model::MoTConfig deep = cfg;
  deep.layers = 2 * cfg.layers;
  CHECK(model::param_count(deep) - with_layers == with_layers - without);
}

TEST_CASE("desk-scale default config stays under one million parameters") {
  model::MoTConfig cfg;  // desk defaults
  cfg.vocab_size = 64;
  CHECK(model::param_count(cfg) < 1000000);
}

TEST_CASE("forward is deterministic in 64-bit mode") {
  Rng rng(31);
  const model::MoTConfig cfg = micro_config();
  model::MoTWeights<double> w;
  w.allocate(cfg);
  w.init(rng);
  seq::PackedSample<double> sample = micro_sample<double>(rng, cfg);
  const auto out1 = mot_forward(sample, w, static_cast<model::MoTCache<double>*>(nullptr));
  const auto out2 = mot_forward(sample, w, static_cast<model::MoTCache<double>*>(nullptr));
  for (size_t bi = 0; bi < out1.eps_hat.size(); ++bi) {
    REQUIRE(out1.eps_hat[bi].size() == out2.eps_hat[bi].size());
    for (size_t i = 0; i < out1.eps_hat[bi].v.size(); ++i) {
      CHECK(out1.eps_hat[bi].v[i] == out2.eps_hat[bi].v[i]);
    }
  }
}

TEST_CASE("readout shapes: actions enter at d_act and exit at 3 dims") {
  Rng rng(32);
  const model::MoTConfig cfg = micro_config();
  model::MoTWeights<double> w;
  w.allocate(cfg);
  w.init(rng);
  seq::PackedSample<double> sample = micro_sample<double>(rng, cfg);
  const auto out = mot_forward(sample, w, static_cast<model::MoTCache<double>*>(nullptr));
  for (size_t bi = 0; bi < sample.layout.blocks.size(); ++bi) {
    const seq::Block& b = sample.layout.blocks[bi];
    if (b.kind == seq::BlockKind::ActionNoisy) {
      CHECK(out.eps_hat[bi].rows == b.length);
      CHECK(out.eps_hat[bi].cols == codec::kActionDim);
    } else if (b.kind == seq::BlockKind::ImageGenNoisy) {
      CHECK(out.eps_hat[bi].rows == b.length);
      CHECK(out.eps_hat[bi].cols == codec::kLatentDim);
    } else {
      CHECK(out.eps_hat[bi].size() == 0);
    }
  }
}

TEST_CASE("attention probabilities are exactly zero wherever the mask is false") {
  Rng rng(33);
  const model::MoTConfig cfg = micro_config();
  model::MoTWeights<double> w;
  w.allocate(cfg);
  w.init(rng);
  seq::PackedSample<double> sample = micro_sample<double>(rng, cfg);
  model::MoTCache<double> cache;
  mot_forward(sample, w, &cache);
  const int L = sample.packed.length;
  for (int l = 0; l < cfg.layers; ++l) {
    for (int h = 0; h < cfg.heads; ++h) {
      for (int i = 0; i < L; ++i) {
        double row_sum = 0.0;
        for (int j = 0; j < L; ++j) {
          const double p = model::attention_prob(cache, sample.packed, l, h, i, j);
          if (!sample.packed.mask[static_cast<size_t>(i) * L + j]) {
            CHECK(p == 0.0);
          }
          row_sum += p;
        }
        CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("perturbing a masked-out token leaves outputs bit-identical") {
  Rng rng(34);
  const model::MoTConfig cfg = micro_config();
  model::MoTWeights<double> w;
  w.allocate(cfg);
  w.init(rng);

  for (int trial = 0; trial < 8; ++trial) {
    seq::PackedSample<double> sample = micro_sample<double>(rng, cfg, false);
    // The action-noisy block is hidden from everything after it; perturb it
    // and check the downstream image readout is untouched.
    size_t act_bi = 0, img_bi = 0;
    for (size_t bi = 0; bi < sample.layout.blocks.size(); ++bi) {
      if (sample.layout.blocks[bi].kind == seq::BlockKind::ActionNoisy) act_bi = bi;
      if (sample.layout.blocks[bi].kind == seq::BlockKind::ImageGenNoisy) img_bi = bi;
    }
    const auto base = mot_forward(sample, w, static_cast<model::MoTCache<double>*>(nullptr));
    sample.payload[act_bi].at(0, 0) += rng.uniform(0.5, 2.0);
    const auto pert = mot_forward(sample, w, static_cast<model::MoTCache<double>*>(nullptr));
    for (size_t i = 0; i < base.eps_hat[img_bi].v.size(); ++i) {
      CHECK(base.eps_hat[img_bi].v[i] == pert.eps_hat[img_bi].v[i]);
    }
    // The perturbed block's own readout must change.
    bool changed = false;
    for (size_t i = 0; i < base.eps_hat[act_bi].v.size(); ++i) {
      if (base.eps_hat[act_bi].v[i] != pert.eps_hat[act_bi].v[i]) changed = true;
    }
    CHECK(changed);
  }
}

TEST_CASE("expert isolation: zeroing generation weights leaves understanding outputs") {
  Rng rng(35);
  const model::MoTConfig cfg = micro_config();
  model::MoTWeights<double> w;
  w.allocate(cfg);
  w.init(rng);

  // A layout whose und tokens never see a gen token: gen block comes last.
  seq::PackedSample<double> sample = micro_sample<double>(rng, cfg, false);
  model::MoTCache<double> cache;
  mot_forward(sample, w, &cache);
  const auto und_hidden = cache.final_norm_out[static_cast<int>(model::Expert::Und)];

  model::MoTWeights<double> zeroed = w;
  for (auto& layer : zeroed.layers) {
    auto& gen = layer[static_cast<int>(model::Expert::Gen)];
    gen.wq.zero();
    gen.wk.zero();
    gen.wv.zero();
    gen.wo.zero();
    gen.w1.zero();
    gen.w2.zero();
  }
  zeroed.img_gen_proj.zero();
  zeroed.gen_readout.zero();
  model::MoTCache<double> cache2;
  mot_forward(sample, zeroed, &cache2);
  const auto& und_hidden2 = cache2.final_norm_out[static_cast<int>(model::Expert::Und)];
  REQUIRE(und_hidden.size() == und_hidden2.size());
  for (size_t i = 0; i < und_hidden.v.size(); ++i) {
    CHECK(und_hidden.v[i] == und_hidden2.v[i]);
  }
}

namespace {

// Standalone pre-norm causal transformer over the understanding expert's
// weights, written independently of the production forward pass.
Matrix<double> reference_text_transformer(const std::vector<int>& ids,
                                          const model::MoTWeights<double>& w) {
  const model::MoTConfig& cfg = w.config;
  const int L = static_cast<int>(ids.size());
  const int d = cfg.d_und;
  const int hd = cfg.head_dim();
  Matrix<double> x(L, d);
  for (int t = 0; t < L; ++t) {
    for (int j = 0; j < d; ++j) x.at(t, j) = w.tok_embed.at(ids[t], j);
  }
  auto rms = [&](const Matrix<double>& in, const Matrix<double>& scale) {
    Matrix<double> out(in.rows, in.cols);
    for (int r = 0; r < in.rows; ++r) {
      double ms = 0;
      for (int j = 0; j < in.cols; ++j) ms += in.at(r, j) * in.at(r, j);
      const double inv = 1.0 / std::sqrt(ms / in.cols + 1e-6);
      for (int j = 0; j < in.cols; ++j) out.at(r, j) = in.at(r, j) * inv * scale.v[j];
    }
    return out;
  };
  auto matmul = [](const Matrix<double>& a, const Matrix<double>& b) {
    Matrix<double> c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
      for (int k = 0; k < a.cols; ++k) {
        for (int j = 0; j < b.cols; ++j) c.at(i, j) += a.at(i, k) * b.at(k, j);
      }
    }
    return c;
  };
  auto rope = [&](Matrix<double>& m) {
    for (int t = 0; t < m.rows; ++t) {
      const int pos = t + 1;  // text consumes consecutive indices from 1
      for (int h = 0; h < cfg.heads; ++h) {
        for (int p = 0; p < hd / 2; ++p) {
          const double freq = std::pow(10000.0, -2.0 * p / hd);
          const double c = std::cos(pos * freq), s = std::sin(pos * freq);
          double& a = m.at(t, h * hd + 2 * p);
          double& b = m.at(t, h * hd + 2 * p + 1);
          const double a0 = a, b0 = b;
          a = a0 * c - b0 * s;
          b = a0 * s + b0 * c;
        }
      }
    }
  };
  const int und = static_cast<int>(model::Expert::Und);
  for (int l = 0; l < cfg.layers; ++l) {
    const auto& le = w.layers[l][und];
    Matrix<double> n1 = rms(x, le.attn_norm);
    Matrix<double> q = matmul(n1, le.wq), k = matmul(n1, le.wk), v = matmul(n1, le.wv);
    rope(q);
    rope(k);
    Matrix<double> ctx(L, cfg.d_attn);
    for (int h = 0; h < cfg.heads; ++h) {
      for (int i = 0; i < L; ++i) {
        std::vector<double> scores(i + 1);
        double mx = -1e30;
        for (int j = 0; j <= i; ++j) {
          double s = 0;
          for (int p = 0; p < hd; ++p) s += q.at(i, h * hd + p) * k.at(j, h * hd + p);
          scores[j] = s / std::sqrt(double(hd));
          mx = std::max(mx, scores[j]);
        }
        double denom = 0;
        for (int j = 0; j <= i; ++j) denom += std::exp(scores[j] - mx);
        for (int j = 0; j <= i; ++j) {
          const double p = std::exp(scores[j] - mx) / denom;
          for (int m = 0; m < hd; ++m) ctx.at(i, h * hd + m) += p * v.at(j, h * hd + m);
        }
      }
    }
    Matrix<double> attn_out = matmul(ctx, le.wo);
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += attn_out.v[i];
    Matrix<double> n2 = rms(x, le.ffn_norm);
    Matrix<double> u = matmul(n2, le.w1);
    for (auto& uv : u.v) uv = uv / (1.0 + std::exp(-uv)) * 1.0;
    Matrix<double> y = matmul(u, le.w2);
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += y.v[i];
  }
  return rms(x, w.final_norm_und);
}

}  // namespace

TEST_CASE("text-only sequence equals a standalone causal transformer") {
  Rng rng(36);
  const model::MoTConfig cfg = micro_config(9);
  model::MoTWeights<double> w;
  w.allocate(cfg);
  w.init(rng);

  seq::PackedSample<double> sample;
  seq::Block b;
  b.kind = seq::BlockKind::Text;
  b.length = 5;
  sample.layout.task = seq::Task::Planning;
  sample.layout.blocks.push_back(b);
  seq::assign_drop_groups(sample.layout);
  sample.payload.resize(1);
  sample.text_ids.resize(1);
  sample.x0.resize(1);
  sample.eps.resize(1);
  for (int k = 0; k < 5; ++k) {
    sample.text_ids[0].push_back(static_cast<int>(rng.uniform_index(cfg.vocab_size)));
  }
  sample.rebuild_packed();

  model::MoTCache<double> cache;
  mot_forward(sample, w, &cache);
  const Matrix<double>& got = cache.final_norm_out[static_cast<int>(model::Expert::Und)];
  const Matrix<double> want = reference_text_transformer(sample.text_ids[0], w);
  REQUIRE(got.rows == want.rows);
  for (size_t i = 0; i < got.v.size(); ++i) {
    CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradients match finite differences on the micro model") {
  // Fast micro variant of the full acceptance criterion: one seed, mixed
  // block kinds, all parameters.
  Rng rng(37);
  const model::MoTConfig cfg = micro_config();
  model::MoTWeights<double> w;
  w.allocate(cfg);
  w.init(rng);
  seq::PackedSample<double> sample = micro_sample<double>(rng, cfg);
  auto result = finite_difference_check(sample, w, 1.0, 1.0);
  INFO("worst parameter: ", result.worst_param);
  CHECK(result.max_rel_err < 1e-4);
  CHECK(result.checked == w.num_params());
}

TEST_CASE("gradients flow for rerouted action modules") {
  for (model::ActionModule am : {model::ActionModule::VLM, model::ActionModule::Diffusion}) {
    Rng rng(38 + static_cast<int>(am));
    model::MoTConfig cfg = micro_config();
    cfg.action_module = am;
    model::MoTWeights<double> w;
    w.allocate(cfg);
    w.init(rng);
    seq::PackedSample<double> sample = micro_sample<double>(rng, cfg);
    auto result = finite_difference_check(sample, w, 1.0, 0.5);
    INFO("worst parameter: ", result.worst_param);
    CHECK(result.max_rel_err < 1e-4);
  }
}
