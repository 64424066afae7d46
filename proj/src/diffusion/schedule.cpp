// SPDX-License-Identifier: Apache-2.0
#include "diffusion/schedule.hpp"

#include "core/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace timar {

NoiseSchedule::NoiseSchedule(int steps) : steps_(steps) {
  if (steps < 1) throw ValidationError("noise schedule needs at least one step");
  auto f = [&](int tau) {
    const double x = (static_cast<double>(tau) / steps + kOffset) / (1.0 + kOffset);
    const double c = std::cos(x * std::numbers::pi / 2.0);
    return c * c;
  };
  alpha_bar_.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  beta_.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  for (int tau = 1; tau <= steps; ++tau) {
    const double b = std::min(1.0 - f(tau) / f(tau - 1), kMaxBeta);
    beta_[static_cast<std::size_t>(tau)] = b;
    alpha_bar_[static_cast<std::size_t>(tau)] = alpha_bar_[static_cast<std::size_t>(tau) - 1] * (1.0 - b);
  }
}

std::vector<int> NoiseSchedule::respaced(int count) const {
  if (count < 1 || count > steps_) {
    throw ValidationError("sampling steps must lie in [1, " + std::to_string(steps_) + "]");
  }
  std::vector<int> out(static_cast<std::size_t>(count));
  const long long n = steps_;
  for (long long j = 0; j < count; ++j) {
    out[static_cast<std::size_t>(j)] = static_cast<int>((2 * (j + 1) * n + count) / (2 * count));
  }
  return out;
}

PosteriorCoefficients posterior(const NoiseSchedule& s, int tau, int prev) {
  const double ab = s.alpha_bar(tau);
  const double ab_prev = s.alpha_bar(prev);
  const double beta = 1.0 - ab / ab_prev;
  const double alpha = 1.0 - beta;
  return {std::sqrt(ab_prev) * beta / (1.0 - ab), std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab),
          beta * (1.0 - ab_prev) / (1.0 - ab)};
}

template <typename T>
Mat<T> forward_noise(const NoiseSchedule& s, const Mat<T>& x0, int tau, RandomStream& rng) {
  if (tau < 1 || tau > s.steps()) {
    throw ValidationError("timestep " + std::to_string(tau) + " outside [1, " +
                          std::to_string(s.steps()) + "]");
  }
  const T a = static_cast<T>(std::sqrt(s.alpha_bar(tau)));
  const T b = static_cast<T>(std::sqrt(1.0 - s.alpha_bar(tau)));
  Mat<T> out(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    out.data()[i] = a * x0.data()[i] + b * static_cast<T>(rng.normal());
  }
  return out;
}

template Mat<float> forward_noise(const NoiseSchedule&, const Mat<float>&, int, RandomStream&);
template Mat<double> forward_noise(const NoiseSchedule&, const Mat<double>&, int, RandomStream&);

}  // namespace timar
