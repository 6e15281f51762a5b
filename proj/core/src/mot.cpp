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

#include "griddrive/mot.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace griddrive::model {

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kRopeBase = 10000.0;
constexpr double kIntraPeScale = 0.2;

// exp for the hot attention/FFN paths. The float instantiation is a
// branchless base-2 polynomial (relative error ~2e-7) that the compiler
// vectorizes; the double instantiation keeps libm semantics so the 64-bit
// test mode stays oracle-grade.
inline float fast_exp(float x) {
  x = std::min(87.0f, std::max(-87.0f, x));
  const float t = x * 1.44269504088896341f;
  const float fi = std::floor(t);
  const float f = t - fi;
  // 2^f on [0, 1), degree-5 minimax-style fit.
  float p = 1.8775767e-3f;
  p = p * f + 8.9893397e-3f;
  p = p * f + 5.5826318e-2f;
  p = p * f + 2.4015361e-1f;
  p = p * f + 6.9315308e-1f;
  p = p * f + 9.9999994e-1f;
  const int32_t i = static_cast<int32_t>(fi);
  int32_t bits;
  std::memcpy(&bits, &p, 4);
  bits += i << 23;
  float out;
  std::memcpy(&out, &bits, 4);
  return out;
}

inline float hot_exp(float x) { return fast_exp(x); }
inline double hot_exp(double x) { return std::exp(x); }

template <typename S>
void rmsnorm_rows(const Matrix<S>& x, const Matrix<S>& scale, Matrix<S>& out,
                  std::vector<S>& inv) {
  const int n = x.cols;
  inv.resize(x.rows);
  for (int r = 0; r < x.rows; ++r) {
    const S* xin = x.row(r);
    S ms = S(0);
    for (int j = 0; j < n; ++j) ms += xin[j] * xin[j];
    const S rinv = S(1) / std::sqrt(ms / S(n) + S(kNormEps));
    inv[r] = rinv;
    S* o = out.row(r);
    for (int j = 0; j < n; ++j) o[j] = xin[j] * rinv * scale.v[j];
  }
}

template <typename S>
void rmsnorm_rows_backward(const Matrix<S>& x, const Matrix<S>& scale,
                           const std::vector<S>& inv, const Matrix<S>& dout,
                           Matrix<S>& dx_acc, Matrix<S>& dscale_acc) {
  const int n = x.cols;
  for (int r = 0; r < x.rows; ++r) {
    const S* xin = x.row(r);
    const S* do_ = dout.row(r);
    S* dx = dx_acc.row(r);
    const S rinv = inv[r];
    S s1 = S(0);
    for (int j = 0; j < n; ++j) s1 += do_[j] * scale.v[j] * xin[j];
    const S coef = rinv * rinv * rinv * s1 / S(n);
    for (int j = 0; j < n; ++j) {
      dx[j] += do_[j] * scale.v[j] * rinv - xin[j] * coef;
      dscale_acc.v[j] += do_[j] * xin[j] * rinv;
    }
  }
}

template <typename S>
Matrix<S> transposed(const Matrix<S>& m) {
  Matrix<S> t(m.cols, m.rows);
  for (int r = 0; r < m.rows; ++r) {
    const S* row = m.row(r);
    for (int c = 0; c < m.cols; ++c) t.at(c, r) = row[c];
  }
  return t;
}

template <typename S>
void add_bias_rows(Matrix<S>& m, const Matrix<S>& bias) {
  for (int r = 0; r < m.rows; ++r) {
    S* row = m.row(r);
    for (int j = 0; j < m.cols; ++j) row[j] += bias.v[j];
  }
}

int time_bin(double t, int bins) {
  int b = static_cast<int>(t * bins);
  if (b < 0) b = 0;
  if (b >= bins) b = bins - 1;
  return b;
}

}  // namespace

void MoTConfig::validate() const {
  if (layers < 0) throw ConfigError("mot: layers must be >= 0");
  if (heads < 1 || d_attn % heads != 0) throw ConfigError("mot: d_attn must divide into heads");
  if (d_und < heads || d_gen < heads || d_act < heads) {
    throw ConfigError("mot: expert widths must be >= head count");
  }
  if (vocab_size < 3) throw ConfigError("mot: vocabulary too small");
  if (time_bins < 1) throw ConfigError("mot: time_bins must be >= 1");
  if (ffn_mult < 1) throw ConfigError("mot: ffn_mult must be >= 1");
}

Expert expert_for(seq::BlockKind kind, const MoTConfig& config) {
  switch (kind) {
    case seq::BlockKind::Text:
    case seq::BlockKind::ImageUnd:
    case seq::BlockKind::ImageCtx:
      return Expert::Und;
    case seq::BlockKind::ImageGenClean:
    case seq::BlockKind::ImageGenNoisy:
      return Expert::Gen;
    case seq::BlockKind::ActionClean:
    case seq::BlockKind::ActionNoisy:
      return config.action_host();
  }
  throw InvalidInputError("expert_for: unknown block kind");
}

Routing route(const std::vector<int>& expert_tags) {
  Routing r;
  r.expert_of = expert_tags;
  r.row_of.resize(expert_tags.size());
  for (size_t t = 0; t < expert_tags.size(); ++t) {
    const int e = expert_tags[t];
    if (e < 0 || e >= kNumExperts) throw InvalidInputError("route: unknown expert tag");
    r.row_of[t] = static_cast<int>(r.tokens[e].size());
    r.tokens[e].push_back(static_cast<int>(t));
  }
  return r;
}

template <typename S>
void MoTWeights<S>::allocate(const MoTConfig& cfg) {
  cfg.validate();
  config = cfg;
  const int du = cfg.d_und, dg = cfg.d_gen, da = cfg.d_act, dat = cfg.d_attn;

  tok_embed = Matrix<S>(cfg.vocab_size, du);
  img_und_proj = Matrix<S>(codec::kLatentDim, du);
  img_und_bias = Matrix<S>(1, du);
  ctx.patch_proj = Matrix<S>(codec::kCtxPatchDim, du);
  ctx.bias = Matrix<S>(1, du);
  ctx.mix = Matrix<S>(codec::kCtxTokens, codec::kCtxTokens);
  img_gen_proj = Matrix<S>(codec::kLatentDim, dg);
  img_gen_bias = Matrix<S>(1, dg);
  act_embed_act = Matrix<S>(codec::kActionDim, da);
  act_embed_act_bias = Matrix<S>(1, da);
  act_embed_und = Matrix<S>(codec::kActionDim, du);
  act_embed_und_bias = Matrix<S>(1, du);
  act_embed_gen = Matrix<S>(codec::kActionDim, dg);
  act_embed_gen_bias = Matrix<S>(1, dg);
  act_readout_act = Matrix<S>(da, codec::kActionDim);
  act_readout_act_bias = Matrix<S>(1, codec::kActionDim);
  act_readout_und = Matrix<S>(du, codec::kActionDim);
  act_readout_und_bias = Matrix<S>(1, codec::kActionDim);
  act_readout_gen = Matrix<S>(dg, codec::kActionDim);
  act_readout_gen_bias = Matrix<S>(1, codec::kActionDim);
  gen_readout = Matrix<S>(dg, codec::kLatentDim);
  gen_readout_bias = Matrix<S>(1, codec::kLatentDim);
  time_embed_und = Matrix<S>(cfg.time_bins, du);
  time_embed_gen = Matrix<S>(cfg.time_bins, dg);
  time_embed_act = Matrix<S>(cfg.time_bins, da);
  null_text = Matrix<S>(1, du);
  null_ctx = Matrix<S>(1, du);
  null_img_und = Matrix<S>(1, du);
  null_img_gen_clean = Matrix<S>(1, dg);
  null_act_clean = Matrix<S>(1, cfg.width(cfg.action_host()));
  final_norm_und = Matrix<S>(1, du);
  final_norm_gen = Matrix<S>(1, dg);
  final_norm_act = Matrix<S>(1, da);

  layers.resize(cfg.layers);
  for (auto& layer : layers) {
    for (int e = 0; e < kNumExperts; ++e) {
      const int w = cfg.width(static_cast<Expert>(e));
      auto& le = layer[e];
      le.attn_norm = Matrix<S>(1, w);
      le.wq = Matrix<S>(w, dat);
      le.wk = Matrix<S>(w, dat);
      le.wv = Matrix<S>(w, dat);
      le.wo = Matrix<S>(dat, w);
      le.ffn_norm = Matrix<S>(1, w);
      le.w1 = Matrix<S>(w, cfg.ffn_mult * w);
      le.w2 = Matrix<S>(cfg.ffn_mult * w, w);
    }
  }
}

namespace {

template <typename WeightsT, typename Fn>
void visit_params(WeightsT& w, Fn&& fn) {
  fn("tok_embed", w.tok_embed, true);
  fn("img_und_proj", w.img_und_proj, true);
  fn("img_und_bias", w.img_und_bias, false);
  fn("ctx_patch_proj", w.ctx.patch_proj, true);
  fn("ctx_bias", w.ctx.bias, false);
  fn("ctx_mix", w.ctx.mix, true);
  fn("img_gen_proj", w.img_gen_proj, true);
  fn("img_gen_bias", w.img_gen_bias, false);
  fn("act_embed_act", w.act_embed_act, true);
  fn("act_embed_act_bias", w.act_embed_act_bias, false);
  fn("act_embed_und", w.act_embed_und, true);
  fn("act_embed_und_bias", w.act_embed_und_bias, false);
  fn("act_embed_gen", w.act_embed_gen, true);
  fn("act_embed_gen_bias", w.act_embed_gen_bias, false);
  fn("act_readout_act", w.act_readout_act, true);
  fn("act_readout_act_bias", w.act_readout_act_bias, false);
  fn("act_readout_und", w.act_readout_und, true);
  fn("act_readout_und_bias", w.act_readout_und_bias, false);
  fn("act_readout_gen", w.act_readout_gen, true);
  fn("act_readout_gen_bias", w.act_readout_gen_bias, false);
  fn("gen_readout", w.gen_readout, true);
  fn("gen_readout_bias", w.gen_readout_bias, false);
  fn("time_embed_und", w.time_embed_und, false);
  fn("time_embed_gen", w.time_embed_gen, false);
  fn("time_embed_act", w.time_embed_act, false);
  fn("null_text", w.null_text, false);
  fn("null_ctx", w.null_ctx, false);
  fn("null_img_und", w.null_img_und, false);
  fn("null_img_gen_clean", w.null_img_gen_clean, false);
  fn("null_act_clean", w.null_act_clean, false);
  fn("final_norm_und", w.final_norm_und, false);
  fn("final_norm_gen", w.final_norm_gen, false);
  fn("final_norm_act", w.final_norm_act, false);
  static const char* kExpertNames[kNumExperts] = {"und", "gen", "act"};
  for (size_t l = 0; l < w.layers.size(); ++l) {
    for (int e = 0; e < kNumExperts; ++e) {
      auto& le = w.layers[l][e];
      const std::string prefix = "layer" + std::to_string(l) + "/" + kExpertNames[e] + "/";
      fn(prefix + "attn_norm", le.attn_norm, false);
      fn(prefix + "wq", le.wq, true);
      fn(prefix + "wk", le.wk, true);
      fn(prefix + "wv", le.wv, true);
      fn(prefix + "wo", le.wo, true);
      fn(prefix + "ffn_norm", le.ffn_norm, false);
      fn(prefix + "w1", le.w1, true);
      fn(prefix + "w2", le.w2, true);
    }
  }
}

}  // namespace

template <typename S>
void MoTWeights<S>::for_each_param(
    const std::function<void(const std::string&, Matrix<S>&, bool)>& fn) {
  visit_params(*this, fn);
}

template <typename S>
void MoTWeights<S>::for_each_param(
    const std::function<void(const std::string&, const Matrix<S>&, bool)>& fn) const {
  visit_params(*this, fn);
}

template <typename S>
void MoTWeights<S>::init(Rng& rng) {
  const double residual_scale = 1.0 / std::sqrt(2.0 * std::max(1, config.layers));
  for_each_param([&](const std::string& name, Matrix<S>& m, bool) {
    const bool is_norm = name.find("norm") != std::string::npos;
    const bool is_bias = name.find("bias") != std::string::npos;
    const bool is_small = name.rfind("null_", 0) == 0 || name.rfind("time_embed", 0) == 0 ||
                          name == "tok_embed" || name == "ctx_mix";
    if (is_norm) {
      std::fill(m.v.begin(), m.v.end(), S(1));
      return;
    }
    if (is_bias) {
      m.zero();
      return;
    }
    double std_dev;
    if (is_small) {
      std_dev = 0.02;
    } else {
      std_dev = 1.0 / std::sqrt(static_cast<double>(m.rows));
      const bool is_residual_out = name.size() >= 2 && (name.substr(name.size() - 2) == "wo" ||
                                                        name.substr(name.size() - 2) == "w2");
      if (is_residual_out) std_dev *= residual_scale;
    }
    for (S& x : m.v) x = static_cast<S>(rng.normal() * std_dev);
  });
}

template <typename S>
void MoTWeights<S>::zero() {
  for_each_param([](const std::string&, Matrix<S>& m, bool) { m.zero(); });
}

template <typename S>
size_t MoTWeights<S>::num_params() const {
  size_t n = 0;
  for_each_param([&](const std::string&, const Matrix<S>& m, bool) { n += m.size(); });
  return n;
}

size_t param_count(const MoTConfig& cfg) {
  cfg.validate();
  const size_t du = cfg.d_und, dg = cfg.d_gen, da = cfg.d_act, dat = cfg.d_attn;
  const size_t lat = codec::kLatentDim, adim = codec::kActionDim;
  size_t n = 0;
  n += static_cast<size_t>(cfg.vocab_size) * du;           // tok_embed
  n += lat * du + du;                                      // img_und
  n += codec::kCtxPatchDim * du + du;                      // ctx patch proj + bias
  n += static_cast<size_t>(codec::kCtxTokens) * codec::kCtxTokens;  // ctx mix
  n += lat * dg + dg;                                      // img_gen
  n += adim * da + da + adim * du + du + adim * dg + dg;   // act embeds
  n += da * adim + adim + du * adim + adim + dg * adim + adim;  // act readouts
  n += dg * lat + lat;                                     // gen readout
  n += static_cast<size_t>(cfg.time_bins) * (du + dg + da);
  n += 3 * du + dg + cfg.width(cfg.action_host());         // null embeddings
  n += du + dg + da;                                       // final norms
  const size_t widths[3] = {du, dg, da};
  for (size_t w : widths) {
    // attn_norm + QKV + out + ffn_norm + FFN, per layer
    n += static_cast<size_t>(cfg.layers) *
         (w + 3 * w * dat + dat * w + w + 2 * cfg.ffn_mult * w * w);
  }
  return n;
}

namespace {

// Sinusoidal embedding of an integer position, written into out[0..dim).
template <typename S>
void sinusoidal(int pos, int dim, S scale, S* out) {
  for (int j = 0; j < dim; j += 2) {
    const double freq = std::pow(kRopeBase, -static_cast<double>(j) / dim);
    const double a = pos * freq;
    out[j] += static_cast<S>(scale * std::sin(a));
    if (j + 1 < dim) out[j + 1] += static_cast<S>(scale * std::cos(a));
  }
}

// Pointers into the weight (or gradient) struct for one block kind.
// Instantiated with both const and mutable weight references.
template <typename W>
auto embed_refs(W& w, seq::BlockKind kind) {
  struct Refs {
    decltype(&w.img_und_proj) proj = nullptr;
    decltype(&w.img_und_proj) bias = nullptr;
    decltype(&w.img_und_proj) time_table = nullptr;
    decltype(&w.img_und_proj) null_vec = nullptr;
  } r;
  const Expert host = w.config.action_host();
  switch (kind) {
    case seq::BlockKind::ImageUnd:
      r.proj = &w.img_und_proj;
      r.bias = &w.img_und_bias;
      r.null_vec = &w.null_img_und;
      break;
    case seq::BlockKind::ImageGenClean:
    case seq::BlockKind::ImageGenNoisy:
      r.proj = &w.img_gen_proj;
      r.bias = &w.img_gen_bias;
      r.time_table = &w.time_embed_gen;
      r.null_vec = &w.null_img_gen_clean;
      break;
    case seq::BlockKind::ActionClean:
    case seq::BlockKind::ActionNoisy:
      if (host == Expert::Act) {
        r.proj = &w.act_embed_act;
        r.bias = &w.act_embed_act_bias;
        r.time_table = &w.time_embed_act;
      } else if (host == Expert::Und) {
        r.proj = &w.act_embed_und;
        r.bias = &w.act_embed_und_bias;
        r.time_table = &w.time_embed_und;
      } else {
        r.proj = &w.act_embed_gen;
        r.bias = &w.act_embed_gen_bias;
        r.time_table = &w.time_embed_gen;
      }
      r.null_vec = &w.null_act_clean;
      break;
    default:
      break;
  }
  return r;
}

}  // namespace

template <typename S>
MoTOutput<S> mot_forward(const seq::PackedSample<S>& sample, const MoTWeights<S>& weights,
                         MoTCache<S>* cache) {
  const MoTConfig& cfg = weights.config;
  const seq::Packed& packed = sample.packed;
  const auto& blocks = sample.layout.blocks;
  const std::vector<int> starts = sample.layout.block_starts();
  const int L = packed.length;
  if (static_cast<int>(packed.mask.size()) != L * L) {
    throw ShapeError("mot_forward: mask/sequence length mismatch");
  }

  // Route tokens to experts.
  std::vector<int> tags(L);
  for (int t = 0; t < L; ++t) {
    tags[t] = static_cast<int>(expert_for(blocks[packed.block_of[t]].kind, cfg));
  }
  MoTCache<S> local;
  MoTCache<S>& cc = cache ? *cache : local;
  cc.routing = route(tags);

  // Rope tables, shared by all layers.
  const int hd = cfg.head_dim();
  cc.rope_cos.assign(static_cast<size_t>(L) * (hd / 2), S(0));
  cc.rope_sin.assign(static_cast<size_t>(L) * (hd / 2), S(0));
  for (int t = 0; t < L; ++t) {
    const int pos = packed.pos.rope[t];
    for (int m = 0; m < hd / 2; ++m) {
      const double freq = std::pow(kRopeBase, -2.0 * m / hd);
      cc.rope_cos[static_cast<size_t>(t) * (hd / 2) + m] = static_cast<S>(std::cos(pos * freq));
      cc.rope_sin[static_cast<size_t>(t) * (hd / 2) + m] = static_cast<S>(std::sin(pos * freq));
    }
  }

  // --- embedding stage ---
  for (int e = 0; e < kNumExperts; ++e) {
    cc.x0[e] = Matrix<S>(static_cast<int>(cc.routing.tokens[e].size()),
                         cfg.width(static_cast<Expert>(e)));
  }
  cc.ctx_pre_mix.assign(blocks.size(), Matrix<S>());

  for (size_t bi = 0; bi < blocks.size(); ++bi) {
    const seq::Block& b = blocks[bi];
    const int e = static_cast<int>(expert_for(b.kind, cfg));
    const int w = cfg.width(static_cast<Expert>(e));
    const int row0 = cc.routing.row_of[starts[bi]];
    Matrix<S>& x0 = cc.x0[e];

    if (b.kind == seq::BlockKind::Text) {
      for (int k = 0; k < b.length; ++k) {
        S* out = x0.row(row0 + k);
        const S* src = b.dropped ? weights.null_text.row(0)
                                 : weights.tok_embed.row(sample.text_ids[bi][k]);
        for (int j = 0; j < w; ++j) out[j] = src[j];
      }
      continue;
    }

    if (b.kind == seq::BlockKind::ImageCtx) {
      if (b.dropped) {
        for (int k = 0; k < b.length; ++k) {
          S* out = x0.row(row0 + k);
          for (int j = 0; j < w; ++j) out[j] = weights.null_ctx.v[j];
        }
      } else {
        // Patch embedding, cached before the mixing layer.
        Matrix<S> pre(b.length, w);
        for (int k = 0; k < b.length; ++k) {
          S* out = pre.row(k);
          for (int j = 0; j < w; ++j) out[j] = weights.ctx.bias.v[j];
        }
        matmul_acc(sample.payload[bi], weights.ctx.patch_proj, pre);
        cc.ctx_pre_mix[bi] = pre;
        Matrix<S> mixed = pre;
        matmul_acc(weights.ctx.mix, pre, mixed);
        for (int k = 0; k < b.length; ++k) {
          S* out = x0.row(row0 + k);
          const S* src = mixed.row(k);
          for (int j = 0; j < w; ++j) out[j] = src[j];
        }
      }
    } else {
      const auto refs = embed_refs(weights, b.kind);
      if (b.dropped) {
        for (int k = 0; k < b.length; ++k) {
          S* out = x0.row(row0 + k);
          for (int j = 0; j < w; ++j) out[j] = refs.null_vec->v[j];
        }
      } else {
        Matrix<S> rows(b.length, w);
        add_bias_rows(rows, *refs.bias);
        matmul_acc(sample.payload[bi], *refs.proj, rows);
        for (int k = 0; k < b.length; ++k) {
          S* out = x0.row(row0 + k);
          const S* src = rows.row(k);
          for (int j = 0; j < w; ++j) out[j] = src[j];
        }
      }
      if (b.supervised && refs.time_table != nullptr) {
        const S* trow = refs.time_table->row(time_bin(b.timestep, cfg.time_bins));
        for (int k = 0; k < b.length; ++k) {
          S* out = x0.row(row0 + k);
          for (int j = 0; j < w; ++j) out[j] += trow[j];
        }
      }
    }

    // Intra-block sinusoidal position, non-text blocks only.
    for (int k = 0; k < b.length; ++k) {
      sinusoidal(packed.pos.intra[starts[bi] + k], w, S(kIntraPeScale), x0.row(row0 + k));
    }
  }

  // --- transformer layers ---
  const S attn_scale = S(1) / std::sqrt(static_cast<S>(hd));
  cc.layers.resize(cfg.layers);
  std::array<Matrix<S>, kNumExperts> x = cc.x0;

  const int prob_stride = packed.row_offset[L];
  for (int l = 0; l < cfg.layers; ++l) {
    auto& lc = cc.layers[l];
    lc.q = Matrix<S>(L, cfg.d_attn);
    lc.k = Matrix<S>(L, cfg.d_attn);
    lc.v = Matrix<S>(L, cfg.d_attn);
    lc.attn_ctx = Matrix<S>(L, cfg.d_attn);
    lc.probs.resize(static_cast<size_t>(cfg.heads) * prob_stride);

    for (int e = 0; e < kNumExperts; ++e) {
      const auto& le = weights.layers[l][e];
      const int n_e = x[e].rows;
      lc.x_in[e] = x[e];
      lc.attn_norm_out[e] = Matrix<S>(n_e, x[e].cols);
      rmsnorm_rows(lc.x_in[e], le.attn_norm, lc.attn_norm_out[e], lc.attn_inv[e]);
      Matrix<S> q(n_e, cfg.d_attn), k(n_e, cfg.d_attn), v(n_e, cfg.d_attn);
      matmul_acc(lc.attn_norm_out[e], le.wq, q);
      matmul_acc(lc.attn_norm_out[e], le.wk, k);
      matmul_acc(lc.attn_norm_out[e], le.wv, v);
      for (int r = 0; r < n_e; ++r) {
        const int t = cc.routing.tokens[e][r];
        std::copy(q.row(r), q.row(r) + cfg.d_attn, lc.q.row(t));
        std::copy(k.row(r), k.row(r) + cfg.d_attn, lc.k.row(t));
        std::copy(v.row(r), v.row(r) + cfg.d_attn, lc.v.row(t));
      }
    }

    // Rotary position on q and k.
    for (int t = 0; t < L; ++t) {
      S* qr = lc.q.row(t);
      S* kr = lc.k.row(t);
      const S* cs = cc.rope_cos.data() + static_cast<size_t>(t) * (hd / 2);
      const S* sn = cc.rope_sin.data() + static_cast<size_t>(t) * (hd / 2);
      for (int h = 0; h < cfg.heads; ++h) {
        S* qh = qr + h * hd;
        S* kh = kr + h * hd;
        for (int m = 0; m < hd / 2; ++m) {
          const S c = cs[m], s = sn[m];
          const S q0 = qh[2 * m], q1 = qh[2 * m + 1];
          qh[2 * m] = q0 * c - q1 * s;
          qh[2 * m + 1] = q0 * s + q1 * c;
          const S k0 = kh[2 * m], k1 = kh[2 * m + 1];
          kh[2 * m] = k0 * c - k1 * s;
          kh[2 * m + 1] = k0 * s + k1 * c;
        }
      }
    }

    // Joint global attention over the re-assembled sequence.
    lc.attn_ctx.zero();
    std::vector<S> kt(static_cast<size_t>(hd) * L);
    std::vector<S> srow(L);
    for (int h = 0; h < cfg.heads; ++h) {
      S* probs_h = lc.probs.data() + static_cast<size_t>(h) * prob_stride;
      // Transposed head slice of K for a contiguous inner loop.
      for (int t = 0; t < L; ++t) {
        const S* kr = lc.k.row(t) + h * hd;
        for (int m = 0; m < hd; ++m) kt[static_cast<size_t>(m) * L + t] = kr[m];
      }
      for (int i = 0; i < L; ++i) {
        const int end = packed.group_end[i];
        const uint8_t* mrow = packed.mask.data() + static_cast<size_t>(i) * L;
        const S* qi = lc.q.row(i) + h * hd;
        std::fill(srow.begin(), srow.begin() + end, S(0));
        for (int m = 0; m < hd; ++m) {
          const S qv = qi[m];
          const S* krow = kt.data() + static_cast<size_t>(m) * L;
          for (int j = 0; j < end; ++j) srow[j] += qv * krow[j];
        }
        S maxv = -std::numeric_limits<S>::infinity();
        for (int j = 0; j < end; ++j) {
          if (mrow[j] && srow[j] * attn_scale > maxv) maxv = srow[j] * attn_scale;
        }
        S* prow = probs_h + packed.row_offset[i];
        for (int j = 0; j < end; ++j) {
          prow[j] = hot_exp(srow[j] * attn_scale - maxv);
        }
        // Masked entries stay exactly zero.
        for (int j = 0; j < end; ++j) prow[j] = mrow[j] ? prow[j] : S(0);
        S denom = S(0);
        for (int j = 0; j < end; ++j) denom += prow[j];
        const S dinv = S(1) / denom;
        S* ctx = lc.attn_ctx.row(i) + h * hd;
        for (int j = 0; j < end; ++j) {
          const S p = prow[j] * dinv;
          prow[j] = p;
          if (p == S(0)) continue;
          const S* vj = lc.v.row(j) + h * hd;
          for (int m = 0; m < hd; ++m) ctx[m] += p * vj[m];
        }
      }
    }

    // Per-expert output projection + FFN, residual throughout.
    for (int e = 0; e < kNumExperts; ++e) {
      const auto& le = weights.layers[l][e];
      const int n_e = x[e].rows;
      const int w = x[e].cols;
      Matrix<S> ctx_rows(n_e, cfg.d_attn);
      for (int r = 0; r < n_e; ++r) {
        const int t = cc.routing.tokens[e][r];
        std::copy(lc.attn_ctx.row(t), lc.attn_ctx.row(t) + cfg.d_attn, ctx_rows.row(r));
      }
      Matrix<S> attn_out(n_e, w);
      matmul_acc(ctx_rows, le.wo, attn_out);
      lc.x_mid[e] = lc.x_in[e];
      for (size_t i = 0; i < lc.x_mid[e].v.size(); ++i) lc.x_mid[e].v[i] += attn_out.v[i];

      lc.ffn_norm_out[e] = Matrix<S>(n_e, w);
      rmsnorm_rows(lc.x_mid[e], le.ffn_norm, lc.ffn_norm_out[e], lc.ffn_inv[e]);
      const int f = cfg.ffn_mult * w;
      lc.ffn_u[e] = Matrix<S>(n_e, f);
      matmul_acc(lc.ffn_norm_out[e], le.w1, lc.ffn_u[e]);
      lc.ffn_sig[e] = Matrix<S>(n_e, f);
      Matrix<S> act(n_e, f);
      for (size_t i = 0; i < lc.ffn_u[e].v.size(); ++i) {
        const S u = lc.ffn_u[e].v[i];
        const S sig = S(1) / (S(1) + hot_exp(-u));
        lc.ffn_sig[e].v[i] = sig;
        act.v[i] = u * sig;
      }
      Matrix<S> ffn_out(n_e, w);
      matmul_acc(act, le.w2, ffn_out);
      x[e] = lc.x_mid[e];
      for (size_t i = 0; i < x[e].v.size(); ++i) x[e].v[i] += ffn_out.v[i];
    }
  }

  // Final norms and readout heads on supervised spans.
  const Matrix<S>* final_norms[kNumExperts] = {&weights.final_norm_und, &weights.final_norm_gen,
                                               &weights.final_norm_act};
  for (int e = 0; e < kNumExperts; ++e) {
    cc.x_final[e] = x[e];
    cc.final_norm_out[e] = Matrix<S>(x[e].rows, x[e].cols);
    rmsnorm_rows(cc.x_final[e], *final_norms[e], cc.final_norm_out[e], cc.final_inv[e]);
  }

  MoTOutput<S> out;
  out.eps_hat.assign(blocks.size(), Matrix<S>());
  const Expert host = cfg.action_host();
  for (size_t bi = 0; bi < blocks.size(); ++bi) {
    const seq::Block& b = blocks[bi];
    if (!b.supervised) continue;
    const int e = static_cast<int>(expert_for(b.kind, cfg));
    const int row0 = cc.routing.row_of[starts[bi]];
    const Matrix<S>* ro = nullptr;
    const Matrix<S>* rb = nullptr;
    if (b.kind == seq::BlockKind::ActionNoisy) {
      if (host == Expert::Act) (ro = &weights.act_readout_act), (rb = &weights.act_readout_act_bias);
      else if (host == Expert::Und) (ro = &weights.act_readout_und), (rb = &weights.act_readout_und_bias);
      else (ro = &weights.act_readout_gen), (rb = &weights.act_readout_gen_bias);
    } else {
      ro = &weights.gen_readout;
      rb = &weights.gen_readout_bias;
    }
    Matrix<S> span(b.length, cc.final_norm_out[e].cols);
    for (int k = 0; k < b.length; ++k) {
      std::copy(cc.final_norm_out[e].row(row0 + k),
                cc.final_norm_out[e].row(row0 + k) + span.cols, span.row(k));
    }
    Matrix<S> eps(b.length, ro->cols);
    add_bias_rows(eps, *rb);
    matmul_acc(span, *ro, eps);
    out.eps_hat[bi] = std::move(eps);
  }
  return out;
}

template <typename S>
S attention_prob(const MoTCache<S>& cache, const seq::Packed& packed, int layer, int head,
                 int row, int col) {
  if (col >= packed.group_end[row]) return S(0);
  const int stride = packed.row_offset[packed.length];
  return cache.layers[layer].probs[static_cast<size_t>(head) * stride +
                                   packed.row_offset[row] + col];
}

template <typename S>
void TransposedWeights<S>::build(const MoTWeights<S>& weights) {
  layers.resize(weights.layers.size());
  for (size_t l = 0; l < weights.layers.size(); ++l) {
    for (int e = 0; e < kNumExperts; ++e) {
      const auto& le = weights.layers[l][e];
      auto& t = layers[l][e];
      t.wq = transposed(le.wq);
      t.wk = transposed(le.wk);
      t.wv = transposed(le.wv);
      t.wo = transposed(le.wo);
      t.w1 = transposed(le.w1);
      t.w2 = transposed(le.w2);
    }
  }
}

template <typename S>
void mot_backward(const seq::PackedSample<S>& sample, const MoTWeights<S>& weights,
                  const MoTCache<S>& cc, const std::vector<Matrix<S>>& d_eps_hat,
                  MoTWeights<S>& grads, const TransposedWeights<S>* transposed_weights) {
  TransposedWeights<S> local_transposed;
  if (transposed_weights == nullptr) {
    local_transposed.build(weights);
    transposed_weights = &local_transposed;
  }
  const MoTConfig& cfg = weights.config;
  const seq::Packed& packed = sample.packed;
  const auto& blocks = sample.layout.blocks;
  const std::vector<int> starts = sample.layout.block_starts();
  const int L = packed.length;
  const int hd = cfg.head_dim();
  const Expert host = cfg.action_host();

  // d(final normalized hidden) per expert.
  std::array<Matrix<S>, kNumExperts> d_final_norm;
  for (int e = 0; e < kNumExperts; ++e) {
    d_final_norm[e] = Matrix<S>(cc.x_final[e].rows, cc.x_final[e].cols);
  }

  // Readout backward.
  for (size_t bi = 0; bi < blocks.size(); ++bi) {
    const seq::Block& b = blocks[bi];
    if (!b.supervised || bi >= d_eps_hat.size() || d_eps_hat[bi].size() == 0) continue;
    const int e = static_cast<int>(expert_for(b.kind, cfg));
    const int row0 = cc.routing.row_of[starts[bi]];
    const Matrix<S>* ro;
    Matrix<S>* dro;
    Matrix<S>* drb;
    if (b.kind == seq::BlockKind::ActionNoisy) {
      if (host == Expert::Act) (ro = &weights.act_readout_act), (dro = &grads.act_readout_act), (drb = &grads.act_readout_act_bias);
      else if (host == Expert::Und) (ro = &weights.act_readout_und), (dro = &grads.act_readout_und), (drb = &grads.act_readout_und_bias);
      else (ro = &weights.act_readout_gen), (dro = &grads.act_readout_gen), (drb = &grads.act_readout_gen_bias);
    } else {
      ro = &weights.gen_readout;
      dro = &grads.gen_readout;
      drb = &grads.gen_readout_bias;
    }
    const Matrix<S>& deps = d_eps_hat[bi];
    if (deps.rows != b.length || deps.cols != ro->cols) {
      throw ShapeError("mot_backward: d_eps_hat shape mismatch");
    }
    Matrix<S> span(b.length, weights.config.width(static_cast<Expert>(e)));
    for (int k = 0; k < b.length; ++k) {
      std::copy(cc.final_norm_out[e].row(row0 + k), cc.final_norm_out[e].row(row0 + k) + span.cols,
                span.row(k));
    }
    matmul_at_b_acc(span, deps, *dro);
    for (int k = 0; k < b.length; ++k) {
      const S* dr = deps.row(k);
      for (int j = 0; j < deps.cols; ++j) drb->v[j] += dr[j];
    }
    Matrix<S> rot = transposed(*ro);
    Matrix<S> dspan(b.length, span.cols);
    matmul_acc(deps, rot, dspan);
    for (int k = 0; k < b.length; ++k) {
      S* dst = d_final_norm[e].row(row0 + k);
      const S* src = dspan.row(k);
      for (int j = 0; j < span.cols; ++j) dst[j] += src[j];
    }
  }

  // Final rms backward.
  const Matrix<S>* final_norms[kNumExperts] = {&weights.final_norm_und, &weights.final_norm_gen,
                                               &weights.final_norm_act};
  Matrix<S>* d_final_norms[kNumExperts] = {&grads.final_norm_und, &grads.final_norm_gen,
                                           &grads.final_norm_act};
  std::array<Matrix<S>, kNumExperts> dx;
  for (int e = 0; e < kNumExperts; ++e) {
    dx[e] = Matrix<S>(cc.x_final[e].rows, cc.x_final[e].cols);
    rmsnorm_rows_backward(cc.x_final[e], *final_norms[e], cc.final_inv[e], d_final_norm[e], dx[e],
                          *d_final_norms[e]);
  }

  const S attn_scale = S(1) / std::sqrt(static_cast<S>(hd));

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const auto& lc = cc.layers[l];

    // FFN backward.
    for (int e = 0; e < kNumExperts; ++e) {
      const auto& le = weights.layers[l][e];
      const auto& lt = transposed_weights->layers[l][e];
      auto& ge = grads.layers[l][e];
      const int n_e = dx[e].rows;
      const int w = dx[e].cols;
      const int f = cfg.ffn_mult * w;
      // act = u * sig; recompute for the W2 input.
      Matrix<S> act(n_e, f);
      for (size_t i = 0; i < act.v.size(); ++i) act.v[i] = lc.ffn_u[e].v[i] * lc.ffn_sig[e].v[i];
      matmul_at_b_acc(act, dx[e], ge.w2);
      Matrix<S> ds(n_e, f);
      matmul_acc(dx[e], lt.w2, ds);
      Matrix<S> du(n_e, f);
      for (size_t i = 0; i < du.v.size(); ++i) {
        const S u = lc.ffn_u[e].v[i];
        const S sig = lc.ffn_sig[e].v[i];
        du.v[i] = ds.v[i] * (sig + u * sig * (S(1) - sig));
      }
      matmul_at_b_acc(lc.ffn_norm_out[e], du, ge.w1);
      Matrix<S> dnorm(n_e, w);
      matmul_acc(du, lt.w1, dnorm);
      // Residual: dx flows through unchanged plus the norm path.
      rmsnorm_rows_backward(lc.x_mid[e], le.ffn_norm, lc.ffn_inv[e], dnorm, dx[e], ge.ffn_norm);
    }

    // Attention output projection backward.
    Matrix<S> d_attn_ctx(L, cfg.d_attn);
    for (int e = 0; e < kNumExperts; ++e) {
      const auto& lt = transposed_weights->layers[l][e];
      auto& ge = grads.layers[l][e];
      const int n_e = dx[e].rows;
      Matrix<S> ctx_rows(n_e, cfg.d_attn);
      for (int r = 0; r < n_e; ++r) {
        const int t = cc.routing.tokens[e][r];
        std::copy(lc.attn_ctx.row(t), lc.attn_ctx.row(t) + cfg.d_attn, ctx_rows.row(r));
      }
      matmul_at_b_acc(ctx_rows, dx[e], ge.wo);
      Matrix<S> dctx(n_e, cfg.d_attn);
      matmul_acc(dx[e], lt.wo, dctx);
      for (int r = 0; r < n_e; ++r) {
        const int t = cc.routing.tokens[e][r];
        std::copy(dctx.row(r), dctx.row(r) + cfg.d_attn, d_attn_ctx.row(t));
      }
    }

    // Attention backward.
    const int prob_stride = packed.row_offset[L];
    Matrix<S> dq(L, cfg.d_attn), dk(L, cfg.d_attn), dv(L, cfg.d_attn);
    std::vector<S> vt(static_cast<size_t>(hd) * L);
    std::vector<S> dprow(L), dsrow(L);
    for (int h = 0; h < cfg.heads; ++h) {
      const S* probs_h = lc.probs.data() + static_cast<size_t>(h) * prob_stride;
      for (int t = 0; t < L; ++t) {
        const S* vr = lc.v.row(t) + h * hd;
        for (int m = 0; m < hd; ++m) vt[static_cast<size_t>(m) * L + t] = vr[m];
      }
      for (int i = 0; i < L; ++i) {
        const int end = packed.group_end[i];
        const S* dctx_i = d_attn_ctx.row(i) + h * hd;
        // dP = dctx . V^T
        std::fill(dprow.begin(), dprow.begin() + end, S(0));
        for (int m = 0; m < hd; ++m) {
          const S dv_m = dctx_i[m];
          const S* vrow = vt.data() + static_cast<size_t>(m) * L;
          for (int j = 0; j < end; ++j) dprow[j] += dv_m * vrow[j];
        }
        const S* prow = probs_h + packed.row_offset[i];
        // dV += P^T dctx; masked entries hold exact zeros.
        for (int j = 0; j < end; ++j) {
          const S p = prow[j];
          if (p == S(0)) continue;
          S* dvj = dv.row(j) + h * hd;
          for (int m = 0; m < hd; ++m) dvj[m] += p * dctx_i[m];
        }
        // Softmax jacobian.
        S dot = S(0);
        for (int j = 0; j < end; ++j) dot += dprow[j] * prow[j];
        for (int j = 0; j < end; ++j) {
          dsrow[j] = prow[j] * (dprow[j] - dot) * attn_scale;
        }
        // dQ_i += dS K, dK_j += dS_ij Q_i
        const S* qi = lc.q.row(i) + h * hd;
        S* dqi = dq.row(i) + h * hd;
        for (int j = 0; j < end; ++j) {
          const S dsv = dsrow[j];
          if (dsv == S(0)) continue;
          const S* kj = lc.k.row(j) + h * hd;
          S* dkj = dk.row(j) + h * hd;
          for (int m = 0; m < hd; ++m) {
            dqi[m] += dsv * kj[m];
            dkj[m] += dsv * qi[m];
          }
        }
      }
    }

    // Rotary backward: rotate gradients by the negative angle.
    for (int t = 0; t < L; ++t) {
      S* qr = dq.row(t);
      S* kr = dk.row(t);
      const S* cs = cc.rope_cos.data() + static_cast<size_t>(t) * (hd / 2);
      const S* sn = cc.rope_sin.data() + static_cast<size_t>(t) * (hd / 2);
      for (int h = 0; h < cfg.heads; ++h) {
        S* qh = qr + h * hd;
        S* kh = kr + h * hd;
        for (int m = 0; m < hd / 2; ++m) {
          const S c = cs[m], s = sn[m];
          const S q0 = qh[2 * m], q1 = qh[2 * m + 1];
          qh[2 * m] = q0 * c + q1 * s;
          qh[2 * m + 1] = -q0 * s + q1 * c;
          const S k0 = kh[2 * m], k1 = kh[2 * m + 1];
          kh[2 * m] = k0 * c + k1 * s;
          kh[2 * m + 1] = -k0 * s + k1 * c;
        }
      }
    }

    // QKV projections backward, per expert.
    for (int e = 0; e < kNumExperts; ++e) {
      const auto& le = weights.layers[l][e];
      const auto& lt = transposed_weights->layers[l][e];
      auto& ge = grads.layers[l][e];
      const int n_e = dx[e].rows;
      const int w = dx[e].cols;
      Matrix<S> dq_e(n_e, cfg.d_attn), dk_e(n_e, cfg.d_attn), dv_e(n_e, cfg.d_attn);
      for (int r = 0; r < n_e; ++r) {
        const int t = cc.routing.tokens[e][r];
        std::copy(dq.row(t), dq.row(t) + cfg.d_attn, dq_e.row(r));
        std::copy(dk.row(t), dk.row(t) + cfg.d_attn, dk_e.row(r));
        std::copy(dv.row(t), dv.row(t) + cfg.d_attn, dv_e.row(r));
      }
      matmul_at_b_acc(lc.attn_norm_out[e], dq_e, ge.wq);
      matmul_at_b_acc(lc.attn_norm_out[e], dk_e, ge.wk);
      matmul_at_b_acc(lc.attn_norm_out[e], dv_e, ge.wv);
      Matrix<S> dnorm(n_e, w);
      matmul_acc(dq_e, lt.wq, dnorm);
      matmul_acc(dk_e, lt.wk, dnorm);
      matmul_acc(dv_e, lt.wv, dnorm);
      rmsnorm_rows_backward(lc.x_in[e], le.attn_norm, lc.attn_inv[e], dnorm, dx[e], ge.attn_norm);
    }
  }

  // --- embedding backward ---
  for (size_t bi = 0; bi < blocks.size(); ++bi) {
    const seq::Block& b = blocks[bi];
    const int e = static_cast<int>(expert_for(b.kind, cfg));
    const int w = cfg.width(static_cast<Expert>(e));
    const int row0 = cc.routing.row_of[starts[bi]];
    Matrix<S> drows(b.length, w);
    for (int k = 0; k < b.length; ++k) {
      std::copy(dx[e].row(row0 + k), dx[e].row(row0 + k) + w, drows.row(k));
    }
    // The sinusoidal embedding has no parameters.

    if (b.kind == seq::BlockKind::Text) {
      if (b.dropped) {
        for (int k = 0; k < b.length; ++k) {
          const S* dr = drows.row(k);
          for (int j = 0; j < w; ++j) grads.null_text.v[j] += dr[j];
        }
      } else {
        for (int k = 0; k < b.length; ++k) {
          const S* dr = drows.row(k);
          S* trow = grads.tok_embed.row(sample.text_ids[bi][k]);
          for (int j = 0; j < w; ++j) trow[j] += dr[j];
        }
      }
      continue;
    }

    if (b.kind == seq::BlockKind::ImageCtx) {
      if (b.dropped) {
        for (int k = 0; k < b.length; ++k) {
          const S* dr = drows.row(k);
          for (int j = 0; j < w; ++j) grads.null_ctx.v[j] += dr[j];
        }
      } else {
        const Matrix<S>& pre = cc.ctx_pre_mix[bi];
        matmul_a_bt_acc(drows, pre, grads.ctx.mix);
        Matrix<S> dpre = drows;
        matmul_at_b_acc(weights.ctx.mix, drows, dpre);
        matmul_at_b_acc(sample.payload[bi], dpre, grads.ctx.patch_proj);
        for (int k = 0; k < b.length; ++k) {
          const S* dr = dpre.row(k);
          for (int j = 0; j < w; ++j) grads.ctx.bias.v[j] += dr[j];
        }
      }
      continue;
    }

    const auto grefs = embed_refs(grads, b.kind);
    if (b.supervised && grefs.time_table != nullptr) {
      S* trow = grefs.time_table->row(time_bin(b.timestep, cfg.time_bins));
      for (int k = 0; k < b.length; ++k) {
        const S* dr = drows.row(k);
        for (int j = 0; j < w; ++j) trow[j] += dr[j];
      }
    }
    if (b.dropped) {
      S* nv = grefs.null_vec->v.data();
      for (int k = 0; k < b.length; ++k) {
        const S* dr = drows.row(k);
        for (int j = 0; j < w; ++j) nv[j] += dr[j];
      }
    } else {
      matmul_at_b_acc(sample.payload[bi], drows, *grefs.proj);
      S* bias = grefs.bias->v.data();
      for (int k = 0; k < b.length; ++k) {
        const S* dr = drows.row(k);
        for (int j = 0; j < w; ++j) bias[j] += dr[j];
      }
    }
  }
}

template struct MoTWeights<float>;
template struct MoTWeights<double>;
template struct TransposedWeights<float>;
template struct TransposedWeights<double>;
template float attention_prob(const MoTCache<float>&, const seq::Packed&, int, int, int, int);
template double attention_prob(const MoTCache<double>&, const seq::Packed&, int, int, int, int);
template MoTOutput<float> mot_forward(const seq::PackedSample<float>&, const MoTWeights<float>&,
                                      MoTCache<float>*);
template MoTOutput<double> mot_forward(const seq::PackedSample<double>&, const MoTWeights<double>&,
                                       MoTCache<double>*);
template void mot_backward(const seq::PackedSample<float>&, const MoTWeights<float>&,
                           const MoTCache<float>&, const std::vector<Matrix<float>>&,
                           MoTWeights<float>&, const TransposedWeights<float>*);
template void mot_backward(const seq::PackedSample<double>&, const MoTWeights<double>&,
                           const MoTCache<double>&, const std::vector<Matrix<double>>&,
                           MoTWeights<double>&, const TransposedWeights<double>*);

}  // namespace griddrive::model
