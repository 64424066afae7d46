// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/config.hpp"
#include "core/rng.hpp"
#include "core/types.hpp"
#include "nn/graph.hpp"
#include "nn/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace timar::test {

/// Small rates and widths so a whole model builds in milliseconds:
/// K_frames = 5, 800 audio samples and 19 raw feature rows per turn.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d_t = 8;
  c.d_e = 8;
  c.encoder_layers = 2;
  c.encoder_heads = 2;
  c.d_m = 8;
  c.K_blocks = 2;
  c.f_s = 800;
  c.f_h = 5;
  c.f_w = 20;
  c.d_raw = 6;
  c.N_max = 4;
  c.diff_train_steps = 50;
  c.diff_sample_steps = 10;
  c.batch_size = 2;
  c.warmup = 2;
  c.lr = 1e-3;
  return c;
}

template <typename T = double>
Mat<T> random_matrix(Eigen::Index rows, Eigen::Index cols, RandomStream& rng,
                     double scale = 1.0) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(scale * rng.normal());
  return m;
}

inline Waveform random_wave(int samples, double rate, RandomStream& rng) {
  Waveform w;
  w.rate = rate;
  w.samples.resize(static_cast<std::size_t>(samples));
  for (auto& s : w.samples) s = static_cast<float>(0.3 * rng.normal());
  return w;
}

/// Non-decreasing turn ids starting at 0 with unit steps between runs.
inline std::vector<int> random_turn_ids(int length, RandomStream& rng) {
  std::vector<int> ids(static_cast<std::size_t>(length));
  int t = 0;
  for (int i = 0; i < length; ++i) {
    if (i > 0 && rng.uniform() < 0.2) ++t;
    ids[static_cast<std::size_t>(i)] = t;
  }
  return ids;
}

/// Overwrites every parameter with N(0, scale^2) so that zero-initialised
/// gates and heads do not hide gradient paths.
template <typename T>
void randomize(nn::ParamStore<T>& store, std::uint64_t seed, double scale = 0.3) {
  RandomStream rng = seeded_rng(seed, "test/randomize");
  for (auto& p : store.all()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      p.value.data()[i] = static_cast<T>(scale * rng.normal());
    }
  }
}

struct GradCheck {
  double worst = 0;
  std::string where;
};

/// Central differences against reverse mode for every parameter of the store
/// (at most `per_param` entries each). The error per parameter is
/// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor). The floor
/// covers parameters whose exact gradient is zero, such as attention key
/// biases, where both sides are pure rounding noise.
inline GradCheck check_param_grads(nn::ParamStore<double>& store,
                                   const std::function<double(bool)>& loss, int per_param = 24,
                                   double h = 1e-6, double floor = 1e-5) {
  store.zero_grad();
  loss(true);
  GradCheck out;
  RandomStream pick = seeded_rng(7, "test/gradcheck");
  for (auto& p : store.all()) {
    const Eigen::Index n = p.value.size();
    std::vector<Eigen::Index> idx;
    if (n <= per_param) {
      for (Eigen::Index i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (int i = 0; i < per_param; ++i) idx.push_back(static_cast<Eigen::Index>(pick.below(n)));
    }
    const MatD analytic = p.grad.size() == 0 ? MatD::Zero(p.value.rows(), p.value.cols()) : p.grad;
    double diff = 0, na = 0, nn_ = 0;
    for (auto i : idx) {
      const double keep = p.value.data()[i];
      p.value.data()[i] = keep + h;
      const double up = loss(false);
      p.value.data()[i] = keep - h;
      const double down = loss(false);
      p.value.data()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn_ += numeric * numeric;
    }
    const double err = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn_), floor});
    if (err > out.worst) {
      out.worst = err;
      out.where = p.name;
    }
  }
  return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("timar_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace timar::test
