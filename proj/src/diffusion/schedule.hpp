// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/rng.hpp"
#include "core/types.hpp"

#include <vector>

namespace timar {

/// Cosine forward-noise schedule (s = 0.008) over `steps` train steps.
/// Index 0 is the clean signal: alpha_bar[0] == 1, beta[0] == 0.
class NoiseSchedule {
 public:
  static constexpr double kOffset = 0.008;
  static constexpr double kMaxBeta = 0.999;

  explicit NoiseSchedule(int steps);

  int steps() const { return steps_; }
  double alpha_bar(int tau) const { return alpha_bar_.at(static_cast<std::size_t>(tau)); }
  double beta(int tau) const { return beta_.at(static_cast<std::size_t>(tau)); }

  /// Evenly strided sub-schedule of `count` train timesteps, ascending:
  /// t_j = round((j + 1) * steps / count).
  std::vector<int> respaced(int count) const;

 private:
  int steps_;
  std::vector<double> alpha_bar_;
  std::vector<double> beta_;
};

/// One reverse step of the respaced chain, from train step `tau` down to
/// `prev` (0 at the end of the chain).
struct PosteriorCoefficients {
  double coef_x0;
  double coef_xt;
  double variance;
};
PosteriorCoefficients posterior(const NoiseSchedule& s, int tau, int prev);

/// x_tau = sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps, eps ~ N(0, I) drawn
/// from rng in row-major element order.
template <typename T>
Mat<T> forward_noise(const NoiseSchedule& s, const Mat<T>& x0, int tau, RandomStream& rng);

}  // namespace timar
