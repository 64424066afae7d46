// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/config.hpp"
#include "core/rng.hpp"
#include "diffusion/schedule.hpp"
#include "nn/layers.hpp"

#include <vector>

namespace timar {

/// Residual modulation block: x + gate * MLP(Modulate(LN(x), shift, scale)),
/// with (shift, scale, gate) an affine function of the condition.
template <typename T>
struct ModulationBlock {
  nn::Linear<T> ada;  // d_m -> 3 d_m; gate columns start at zero
  nn::Linear<T> fc1, fc2;
};

/// Per-frame x0-predicting denoiser conditioned on a fused feature row, its
/// frame index (through P2) and the timestep.
template <typename T>
struct Denoiser {
  nn::Linear<T> in;
  nn::Linear<T> cond;
  nn::Parameter<T>* p2 = nullptr;  // [N_max * K_frames, d_m]
  nn::Linear<T> t1, t2;
  std::vector<ModulationBlock<T>> blocks;
  nn::Linear<T> final_ada;  // d_m -> 2 d_m
  nn::Linear<T> out;        // d_m -> 56, zero at initialisation

  static Denoiser create(nn::ParamStore<T>& store, const ModelConfig& config,
                         std::uint64_t seed);

  int width() const { return in.out(); }
  int frame_capacity() const { return static_cast<int>(p2->value.rows()); }

  /// x_tau [M, 56], condition rows [M, d_e] -> x0 prediction [M, 56].
  nn::Var operator()(nn::Graph<T>& g, nn::Var x_tau, const std::vector<int>& taus,
                     nn::Var cond_rows, const std::vector<int>& frames) const;

  /// Value-level prediction without gradient tracking.
  Mat<T> predict(const Mat<T>& x_tau, const std::vector<int>& taus, const Mat<T>& cond_rows,
                 const std::vector<int>& frames) const;
};

/// Sinusoidal timestep embedding, one row per entry of `taus`.
template <typename T>
Mat<T> timestep_embedding(const std::vector<int>& taus, int dim);

template <typename T>
struct DiffusionLoss {
  nn::Var total;
  nn::Var exp;
  nn::Var jaw;
  nn::Var pose;
};

/// Per position: tau ~ U{1..steps}, noise, denoise, squared error. The error
/// is split over the expression, jaw and pose dims, each averaged over
/// positions, and the three terms are summed. With `repeats` > 1 every
/// position is noised that many times independently.
template <typename T>
DiffusionLoss<T> diffusion_loss(nn::Graph<T>& g, const Denoiser<T>& denoiser,
                                const NoiseSchedule& schedule, const Mat<T>& x0,
                                nn::Var cond_rows, const std::vector<int>& frames,
                                RandomStream& rng, int repeats = 1);

/// u + omega * (c - u).
template <typename T>
Mat<T> guide(const Mat<T>& cond_pred, const Mat<T>& uncond_pred, double omega);

/// Respaced ancestral sampling with classifier-free guidance in x0 space.
/// Row i draws its noise from rng.fork("row/<i>"). `uncond_rows` may be
/// null only when omega == 1, in which case the unconditional branch is
/// skipped.
template <typename T>
Mat<T> sample(const Denoiser<T>& denoiser, const NoiseSchedule& schedule,
              const Mat<T>& cond_rows, const std::vector<int>& frames, double omega,
              const Mat<T>* uncond_rows, int steps_out, const RandomStream& rng);

}  // namespace timar
