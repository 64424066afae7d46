// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/config.hpp"
#include "core/types.hpp"

namespace timar {

/// Floor added before every log in the acoustic features.
inline constexpr double kFeatureLogFloor = 1e-6;

/// Deterministic filter-bank front end producing c*f_w - 1 rows of d_raw
/// features per chunk: column 0 is log short-time energy, columns 1.. are
/// log band energies of a Hann-windowed DFT evaluated at d_raw - 1 band
/// centres spaced linearly up to f_s / 2. Windows are 25 ms with a hop of
/// f_s / f_w samples; the trailing partial window is dropped.
class FilterBankExtractor {
 public:
  explicit FilterBankExtractor(const ModelConfig& config);

  MatD operator()(const Waveform& chunk) const;

  int window() const { return window_; }
  int hop() const { return hop_; }
  /// Centre frequency in Hz of band column `column` (1-based among columns).
  double band_center(int column) const;

 private:
  int f_s_;
  int window_;
  int hop_;
  int rows_;
  int chunk_samples_;
  int bands_;
  Eigen::VectorXd taper_;
  double taper_power_;
  MatD cos_basis_;  // [window, bands]
  MatD sin_basis_;
};

/// Raw features of one c-second chunk, [c*f_w - 1, d_raw].
MatD extract_features(const Waveform& chunk, const ModelConfig& config);

/// Endpoint-preserving linear resampling along rows: output row j samples
/// input position j * (rows - 1) / (out_rows - 1).
MatD interp_to_framerate(const MatD& raw, int out_rows);

}  // namespace timar
