// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nn/params.hpp"

namespace timar::nn {

struct AdamWSettings {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay applied to every parameter. `step` is
/// the 1-based update count used for bias correction.
template <typename T>
void adamw_update(ParamStore<T>& store, const AdamWSettings& s, double lr, long step);

/// Linear warmup from lr/warmup to lr over `warmup` updates, then constant.
double warmup_lr(double lr, int warmup, long step);

}  // namespace timar::nn
