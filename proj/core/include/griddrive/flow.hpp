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

#include <functional>

#include "griddrive/codec.hpp"
#include "griddrive/common.hpp"
#include "griddrive/mot.hpp"
#include "griddrive/rng.hpp"
#include "griddrive/seqpack.hpp"
#include "griddrive/world.hpp"

namespace griddrive::flow {

// Linear interpolation path x_t = (1-t) x0 + t eps.
template <typename S>
Matrix<S> noisify(const Matrix<S>& x0, double t, const Matrix<S>& eps);

// Draws eps for every supervised block of a packed sample and replaces the
// staged clean payload with the noised latents. Timesteps come from the
// layout.
template <typename S>
void noisify_sample(seq::PackedSample<S>& sample, Rng& rng);

// MSE in the noise target, averaged over span elements, with the gradient
// wrt the prediction.
template <typename S>
struct LossResult {
  double value = 0.0;
  Matrix<S> d_eps_hat;
};

template <typename S>
LossResult<S> action_loss(const Matrix<S>& eps, const Matrix<S>& eps_hat);
template <typename S>
LossResult<S> image_loss(const Matrix<S>& eps, const Matrix<S>& eps_hat);

struct GuidanceConfig {
  double s_img = 1.5;
  double s_txt = 2.0;
  int steps = 20;
};

// Nested two-branch guidance:
//   eps = eps_null + s_img (eps_img - eps_null) + s_txt (eps_full - eps_img)
// The (1,1) and (0,0) boundaries return the conditioned / unconditioned
// branch exactly. Branches whose coefficient vanishes may be empty.
template <typename S>
Matrix<S> cfg_combine(const Matrix<S>& eps_null, const Matrix<S>& eps_img,
                      const Matrix<S>& eps_full, const GuidanceConfig& g);

struct BranchNeed {
  bool null_branch = false;
  bool img_branch = false;
  bool full_branch = false;
};
BranchNeed needed_branches(const GuidanceConfig& g);

// Euler sampler on the implied velocity. eps_fn maps (x_t, t) to the noise
// prediction; with the exact-oracle predictor the sampler recovers x0 for
// any step count.
template <typename S>
Matrix<S> denoise(const std::function<Matrix<S>(const Matrix<S>&, double)>& eps_fn,
                  Matrix<S> x1, int steps);

// Bundles everything the inference path needs.
template <typename S>
struct Sampler {
  const model::MoTWeights<S>* weights = nullptr;
  const codec::Vocabulary* vocab = nullptr;
  const codec::ActionStats* stats = nullptr;
  seq::LayoutMode mode = seq::LayoutMode::ImagesOnly;
  int interleave_k = 4;
  bool use_context = true;
  int jobs = 1;
};

// Denoises the action plan for the planning context at t0 and returns the
// denormalized kPlanHorizon x 3 action matrix.
template <typename S>
MatD sample_actions(const Sampler<S>& sampler, const world::Episode& episode, int t0,
                    const GuidanceConfig& g, Rng rng);

// Denoises the future image conditioned on an already denoised action
// plan (sequential inference). Returns the decoded image clamped to
// [0, 1].
template <typename S>
world::Image sample_future_image(const Sampler<S>& sampler, const world::Episode& episode,
                                 int t0, const MatD& denormalized_plan,
                                 const GuidanceConfig& g, Rng rng);

// Raw generated latents, for sensitivity probes.
template <typename S>
Matrix<S> sample_future_latents(const Sampler<S>& sampler, const world::Episode& episode,
                                int t0, const MatD& denormalized_plan,
                                const GuidanceConfig& g, Rng rng);

}  // namespace griddrive::flow
