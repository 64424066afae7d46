// SPDX-License-Identifier: Apache-2.0
#include "nn/optim.hpp"

#include <algorithm>
#include <cmath>

namespace timar::nn {

template <typename T>
void adamw_update(ParamStore<T>& store, const AdamWSettings& s, double lr, long step) {
  const T b1 = static_cast<T>(s.beta1);
  const T b2 = static_cast<T>(s.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(s.beta1, static_cast<double>(step))));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(s.beta2, static_cast<double>(step))));
  const T eps = static_cast<T>(s.eps);
  const T rate = static_cast<T>(lr);
  const T decay = static_cast<T>(lr * s.weight_decay);
  for (auto& p : store.all()) {
    if (p.grad.size() == 0) continue;
    if (p.m.size() == 0) p.m = Mat<T>::Zero(p.value.rows(), p.value.cols());
    if (p.v.size() == 0) p.v = Mat<T>::Zero(p.value.rows(), p.value.cols());
    p.m = b1 * p.m + (T(1) - b1) * p.grad;
    p.v = b2 * p.v + (T(1) - b2) * p.grad.cwiseAbs2();
    const auto update = (p.m * c1).array() / ((p.v * c2).array().sqrt() + eps);
    p.value.array() -= rate * update + decay * p.value.array();
  }
}

double warmup_lr(double lr, int warmup, long step) {
  if (warmup <= 0) return lr;
  return lr * std::min(1.0, static_cast<double>(step) / warmup);
}

template void adamw_update<float>(ParamStore<float>&, const AdamWSettings&, double, long);
template void adamw_update<double>(ParamStore<double>&, const AdamWSettings&, double, long);

}  // namespace timar::nn
