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

#include "griddrive/flow.hpp"

#include <algorithm>
#include <cmath>

namespace griddrive::flow {

namespace {

constexpr double kOnePlusEps = 1.0 + 1e-12;
constexpr double kTerminalGuard = 1e-6;

template <typename S>
Matrix<S> gaussian(int rows, int cols, Rng& rng) {
  Matrix<S> m(rows, cols);
  for (S& x : m.v) x = static_cast<S>(rng.normal());
  return m;
}

}  // namespace

template <typename S>
Matrix<S> noisify(const Matrix<S>& x0, double t, const Matrix<S>& eps) {
  if (!(t >= 0.0 && t <= kOnePlusEps)) {
    throw InvalidInputError("noisify: timestep outside [0, 1]");
  }
  if (!x0.same_shape(eps)) throw ShapeError("noisify: x0/eps shape mismatch");
  Matrix<S> xt(x0.rows, x0.cols);
  const S st = static_cast<S>(t);
  const S s1 = static_cast<S>(1.0 - t);
  for (size_t i = 0; i < xt.v.size(); ++i) xt.v[i] = s1 * x0.v[i] + st * eps.v[i];
  return xt;
}

template <typename S>
void noisify_sample(seq::PackedSample<S>& sample, Rng& rng) {
  for (size_t bi = 0; bi < sample.layout.blocks.size(); ++bi) {
    const seq::Block& b = sample.layout.blocks[bi];
    if (!b.supervised) continue;
    const Matrix<S>& x0 = sample.x0[bi];
    if (x0.size() == 0) throw LayoutError("noisify_sample: supervised block lacks clean latents");
    sample.eps[bi] = gaussian<S>(x0.rows, x0.cols, rng);
    sample.payload[bi] = noisify(x0, b.timestep, sample.eps[bi]);
  }
}

namespace {

template <typename S>
LossResult<S> mse_loss(const Matrix<S>& eps, const Matrix<S>& eps_hat) {
  if (!eps.same_shape(eps_hat)) throw ShapeError("loss: eps/eps_hat shape mismatch");
  LossResult<S> out;
  out.d_eps_hat = Matrix<S>(eps.rows, eps.cols);
  const double inv_n = 1.0 / static_cast<double>(eps.size());
  double acc = 0.0;
  for (size_t i = 0; i < eps.v.size(); ++i) {
    const double d = static_cast<double>(eps_hat.v[i]) - static_cast<double>(eps.v[i]);
    acc += d * d;
    out.d_eps_hat.v[i] = static_cast<S>(2.0 * d * inv_n);
  }
  out.value = acc * inv_n;
  return out;
}

}  // namespace

template <typename S>
LossResult<S> action_loss(const Matrix<S>& eps, const Matrix<S>& eps_hat) {
  if (eps.cols != codec::kActionDim) throw ShapeError("action_loss: expected Nx3 span");
  return mse_loss(eps, eps_hat);
}

template <typename S>
LossResult<S> image_loss(const Matrix<S>& eps, const Matrix<S>& eps_hat) {
  if (eps.cols != codec::kLatentDim) throw ShapeError("image_loss: expected Nx48 span");
  return mse_loss(eps, eps_hat);
}

BranchNeed needed_branches(const GuidanceConfig& g) {
  BranchNeed need;
  if (g.s_img == 1.0 && g.s_txt == 1.0) {
    need.full_branch = true;
    return need;
  }
  if (g.s_img == 0.0 && g.s_txt == 0.0) {
    need.null_branch = true;
    return need;
  }
  need.null_branch = g.s_img != 1.0;
  need.img_branch = g.s_img != 0.0 || g.s_txt != 0.0;
  need.full_branch = g.s_txt != 0.0;
  return need;
}

template <typename S>
Matrix<S> cfg_combine(const Matrix<S>& eps_null, const Matrix<S>& eps_img,
                      const Matrix<S>& eps_full, const GuidanceConfig& g) {
  if (g.s_img == 1.0 && g.s_txt == 1.0) return eps_full;
  if (g.s_img == 0.0 && g.s_txt == 0.0) return eps_null;
  const Matrix<S>* shape_ref = eps_full.size() ? &eps_full : (eps_img.size() ? &eps_img : &eps_null);
  Matrix<S> out(shape_ref->rows, shape_ref->cols);
  auto check = [&](const Matrix<S>& m, const char* name) {
    if (!m.same_shape(*shape_ref)) {
      throw ShapeError(std::string("cfg_combine: branch shape mismatch: ") + name);
    }
  };
  const S si = static_cast<S>(g.s_img);
  const S st = static_cast<S>(g.s_txt);
  const bool use_null = g.s_img != 1.0;
  const bool use_img = g.s_img != 0.0 || g.s_txt != 0.0;
  const bool use_full = g.s_txt != 0.0;
  if (use_null) check(eps_null, "null");
  if (use_img) check(eps_img, "img");
  if (use_full) check(eps_full, "full");
  for (size_t i = 0; i < out.v.size(); ++i) {
    const S base = use_null ? eps_null.v[i] : S(0);
    S v = base + si * (eps_img.v[i] - base);
    if (use_full) v += st * (eps_full.v[i] - eps_img.v[i]);
    out.v[i] = v;
  }
  return out;
}

template <typename S>
Matrix<S> denoise(const std::function<Matrix<S>(const Matrix<S>&, double)>& eps_fn,
                  Matrix<S> x1, int steps) {
  if (steps < 1) throw InvalidInputError("denoise: steps must be >= 1");
  Matrix<S> x = std::move(x1);
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = 1.0 - k * dt;
    const Matrix<S> eps_hat = eps_fn(x, t);
    if (!eps_hat.same_shape(x)) throw ShapeError("denoise: prediction shape mismatch");
    const double one_minus_t = 1.0 - t;
    for (size_t i = 0; i < x.v.size(); ++i) {
      const double e = static_cast<double>(eps_hat.v[i]);
      const double xv = static_cast<double>(x.v[i]);
      const double num = xv - t * e;
      const double x0 = one_minus_t < kTerminalGuard ? num : num / one_minus_t;
      x.v[i] = static_cast<S>(xv - dt * (e - x0));
    }
  }
  return x;
}

namespace {

enum Branch { kFull = 0, kImg = 1, kNull = 2 };

template <typename S>
void apply_branch_drops(seq::PackedSample<S>& sample, Branch branch) {
  for (seq::Block& b : sample.layout.blocks) {
    if (b.drop_group < 0) continue;
    switch (branch) {
      case kFull:
        b.dropped = false;
        break;
      case kImg:
        b.dropped = b.kind == seq::BlockKind::Text;
        break;
      case kNull:
        b.dropped = true;
        break;
    }
  }
}

// The shared denoise loop over one noisy block of a packed layout with up
// to three guidance branches.
template <typename S>
Matrix<S> guided_denoise(std::array<seq::PackedSample<S>, 3>& branches,
                         const std::array<bool, 3>& active, size_t noisy_block,
                         const model::MoTWeights<S>& weights, const GuidanceConfig& g,
                         int jobs, Rng& rng) {
  const Matrix<S>& x0_shape = branches[kFull].x0[noisy_block];
  Matrix<S> x = gaussian<S>(x0_shape.rows, x0_shape.cols, rng);

  auto eps_fn = [&](const Matrix<S>& xt, double t) {
    std::array<Matrix<S>, 3> eps;
    std::vector<int> todo;
    for (int br = 0; br < 3; ++br) {
      if (active[br]) todo.push_back(br);
    }
    parallel_for(static_cast<int>(todo.size()), jobs, [&](int idx) {
      const int br = todo[idx];
      seq::PackedSample<S>& sample = branches[br];
      sample.payload[noisy_block] = xt;
      sample.layout.blocks[noisy_block].timestep = t;
      model::MoTOutput<S> out =
          mot_forward(sample, weights, static_cast<model::MoTCache<S>*>(nullptr));
      eps[br] = std::move(out.eps_hat[noisy_block]);
    });
    return cfg_combine(eps[kNull], eps[kImg], eps[kFull], g);
  };
  return denoise<S>(eps_fn, std::move(x), g.steps);
}

template <typename S>
size_t find_noisy_block(const seq::PackedSample<S>& sample, seq::BlockKind kind) {
  for (size_t bi = 0; bi < sample.layout.blocks.size(); ++bi) {
    if (sample.layout.blocks[bi].kind == kind) return bi;
  }
  throw LayoutError("sampler: layout is missing its noisy block");
}

}  // namespace

template <typename S>
MatD sample_actions(const Sampler<S>& sampler, const world::Episode& episode, int t0,
                    const GuidanceConfig& g, Rng rng) {
  if (sampler.stats == nullptr || sampler.weights == nullptr || sampler.vocab == nullptr) {
    throw ConfigError("sample_actions: sampler is missing weights, vocab, or action stats");
  }
  seq::SampleSpec spec;
  spec.t0 = t0;
  spec.task = seq::Task::Planning;
  spec.mode = sampler.mode;
  spec.interleave_k = sampler.interleave_k;
  spec.use_context = sampler.use_context;

  const BranchNeed need = needed_branches(g);
  std::array<bool, 3> active = {need.full_branch, need.img_branch, need.null_branch};
  std::array<seq::PackedSample<S>, 3> branches;
  branches[kFull] = seq::pack_sample<S>(episode, spec, *sampler.vocab, *sampler.stats, nullptr);
  branches[kImg] = branches[kFull];
  branches[kNull] = branches[kFull];
  apply_branch_drops(branches[kFull], kFull);
  apply_branch_drops(branches[kImg], kImg);
  apply_branch_drops(branches[kNull], kNull);

  const size_t noisy = find_noisy_block(branches[kFull], seq::BlockKind::ActionNoisy);
  Rng noise_rng = rng.child("actions");
  Matrix<S> xs = guided_denoise(branches, active, noisy, *sampler.weights, g, sampler.jobs,
                                noise_rng);
  MatD x(xs.rows, xs.cols);
  for (size_t i = 0; i < xs.v.size(); ++i) x.v[i] = static_cast<double>(xs.v[i]);
  return codec::denormalize_actions(x, *sampler.stats);
}

template <typename S>
Matrix<S> sample_future_latents(const Sampler<S>& sampler, const world::Episode& episode,
                                int t0, const MatD& denormalized_plan,
                                const GuidanceConfig& g, Rng rng) {
  if (sampler.stats == nullptr || sampler.weights == nullptr || sampler.vocab == nullptr) {
    throw ConfigError("sample_future_image: sampler is missing weights, vocab, or action stats");
  }
  if (denormalized_plan.rows != world::kPlanHorizon ||
      denormalized_plan.cols != codec::kActionDim) {
    throw LayoutError("sample_future_image: clean action plan has the wrong shape");
  }
  seq::SampleSpec spec;
  spec.t0 = t0;
  spec.task = seq::Task::Generation;
  spec.mode = sampler.mode;
  spec.interleave_k = sampler.interleave_k;
  spec.use_context = sampler.use_context;

  std::array<seq::PackedSample<S>, 3> branches;
  branches[kFull] = seq::pack_sample<S>(episode, spec, *sampler.vocab, *sampler.stats, nullptr);

  // Install the externally denoised plan as the clean condition.
  const MatD normed = codec::normalize_actions(denormalized_plan, *sampler.stats);
  for (size_t bi = 0; bi < branches[kFull].layout.blocks.size(); ++bi) {
    const seq::Block& b = branches[kFull].layout.blocks[bi];
    if (b.kind == seq::BlockKind::ActionClean && b.length == world::kPlanHorizon) {
      Matrix<S>& payload = branches[kFull].payload[bi];
      for (size_t i = 0; i < payload.v.size(); ++i) {
        payload.v[i] = static_cast<S>(normed.v[i]);
      }
    }
  }
  branches[kImg] = branches[kFull];
  branches[kNull] = branches[kFull];
  apply_branch_drops(branches[kFull], kFull);
  apply_branch_drops(branches[kImg], kImg);
  apply_branch_drops(branches[kNull], kNull);

  const BranchNeed need = needed_branches(g);
  std::array<bool, 3> active = {need.full_branch, need.img_branch, need.null_branch};
  const size_t noisy = find_noisy_block(branches[kFull], seq::BlockKind::ImageGenNoisy);
  Rng noise_rng = rng.child("future-image");
  return guided_denoise(branches, active, noisy, *sampler.weights, g, sampler.jobs, noise_rng);
}

template <typename S>
world::Image sample_future_image(const Sampler<S>& sampler, const world::Episode& episode,
                                 int t0, const MatD& denormalized_plan,
                                 const GuidanceConfig& g, Rng rng) {
  const Matrix<S> latents =
      sample_future_latents(sampler, episode, t0, denormalized_plan, g, rng);
  MatD lat(latents.rows, latents.cols);
  for (size_t i = 0; i < latents.v.size(); ++i) {
    lat.v[i] = std::clamp(static_cast<double>(latents.v[i]), 0.0, 1.0);
  }
  return codec::latents_to_image(lat);
}

// Explicit instantiations.
template Matrix<float> noisify(const Matrix<float>&, double, const Matrix<float>&);
template Matrix<double> noisify(const Matrix<double>&, double, const Matrix<double>&);
template void noisify_sample(seq::PackedSample<float>&, Rng&);
template void noisify_sample(seq::PackedSample<double>&, Rng&);
template LossResult<float> action_loss(const Matrix<float>&, const Matrix<float>&);
template LossResult<double> action_loss(const Matrix<double>&, const Matrix<double>&);
template LossResult<float> image_loss(const Matrix<float>&, const Matrix<float>&);
template LossResult<double> image_loss(const Matrix<double>&, const Matrix<double>&);
template Matrix<float> cfg_combine(const Matrix<float>&, const Matrix<float>&,
                                   const Matrix<float>&, const GuidanceConfig&);
template Matrix<double> cfg_combine(const Matrix<double>&, const Matrix<double>&,
                                    const Matrix<double>&, const GuidanceConfig&);
template Matrix<float> denoise(const std::function<Matrix<float>(const Matrix<float>&, double)>&,
                               Matrix<float>, int);
template Matrix<double> denoise(
    const std::function<Matrix<double>(const Matrix<double>&, double)>&, Matrix<double>, int);
template MatD sample_actions(const Sampler<float>&, const world::Episode&, int,
                             const GuidanceConfig&, Rng);
template MatD sample_actions(const Sampler<double>&, const world::Episode&, int,
                             const GuidanceConfig&, Rng);
template Matrix<float> sample_future_latents(const Sampler<float>&, const world::Episode&, int,
                                             const MatD&, const GuidanceConfig&, Rng);
template Matrix<double> sample_future_latents(const Sampler<double>&, const world::Episode&, int,
                                              const MatD&, const GuidanceConfig&, Rng);
template world::Image sample_future_image(const Sampler<float>&, const world::Episode&, int,
                                          const MatD&, const GuidanceConfig&, Rng);
template world::Image sample_future_image(const Sampler<double>&, const world::Episode&, int,
                                          const MatD&, const GuidanceConfig&, Rng);

}  // namespace griddrive::flow
