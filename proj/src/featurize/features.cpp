// SPDX-License-Identifier: Apache-2.0
#include "featurize/features.hpp"

#include "core/error.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <tuple>

namespace timar {

FilterBankExtractor::FilterBankExtractor(const ModelConfig& config)
    : f_s_(config.f_s),
      window_(static_cast<int>(std::lround(0.025 * config.f_s))),
      hop_(config.f_s / config.f_w),
      rows_(config.raw_rows()),
      chunk_samples_(config.chunk_samples()),
      bands_(config.d_raw - 1) {
  if (rows_ < 1 || (rows_ - 1) * hop_ + window_ > chunk_samples_) {
    throw ValidationError("feature framing does not fit the chunk length");
  }
  taper_.resize(window_);
  for (int n = 0; n < window_; ++n) {
    taper_[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / window_);
  }
  taper_power_ = taper_.squaredNorm();
  cos_basis_.resize(window_, bands_);
  sin_basis_.resize(window_, bands_);
  for (int b = 0; b < bands_; ++b) {
    const double freq = band_center(b + 1);
    for (int n = 0; n < window_; ++n) {
      const double phase = 2.0 * std::numbers::pi * freq * n / f_s_;
      cos_basis_(n, b) = std::cos(phase);
      sin_basis_(n, b) = std::sin(phase);
    }
  }
}

double FilterBankExtractor::band_center(int column) const {
  const double width = 0.5 * f_s_ / bands_;
  return (column - 1 + 0.5) * width;
}

MatD FilterBankExtractor::operator()(const Waveform& chunk) const {
  if (std::lround(chunk.rate) != f_s_) {
    throw ValidationError("waveform rate " + std::to_string(chunk.rate) +
                          " Hz does not match f_s " + std::to_string(f_s_));
  }
  if (static_cast<int>(chunk.samples.size()) != chunk_samples_) {
    throw ValidationError("chunk has " + std::to_string(chunk.samples.size()) +
                          " samples, expected " + std::to_string(chunk_samples_));
  }
  MatD frames(rows_, window_);
  Eigen::VectorXd energy(rows_);
  for (int r = 0; r < rows_; ++r) {
    double e = 0.0;
    for (int n = 0; n < window_; ++n) {
      const double x = chunk.samples[static_cast<std::size_t>(r * hop_ + n)];
      e += x * x;
      frames(r, n) = x * taper_[n];
    }
    energy[r] = e / window_;
  }
  const MatD re = frames * cos_basis_;
  const MatD im = frames * sin_basis_;
  MatD out(rows_, bands_ + 1);
  out.col(0) = (energy.array() + kFeatureLogFloor).log().matrix();
  out.rightCols(bands_) =
      ((re.array().square() + im.array().square()) / taper_power_ + kFeatureLogFloor)
          .log()
          .matrix();
  return out;
}

MatD extract_features(const Waveform& chunk, const ModelConfig& config) {
  using Key = std::tuple<int, int, int, double>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const FilterBankExtractor>> cache;
  std::shared_ptr<const FilterBankExtractor> extractor;
  {
    std::lock_guard lock(mu);
    auto& slot = cache[Key{config.f_s, config.f_w, config.d_raw, config.c}];
    if (!slot) slot = std::make_shared<FilterBankExtractor>(config);
    extractor = slot;
  }
  return (*extractor)(chunk);
}

MatD interp_to_framerate(const MatD& raw, int out_rows) {
  if (raw.rows() < 2) throw ValidationError("interpolation needs at least 2 input rows");
  if (out_rows < 1) throw ValidationError("interpolation needs at least 1 output row");
  MatD out(out_rows, raw.cols());
  const double last = static_cast<double>(raw.rows() - 1);
  for (int j = 0; j < out_rows; ++j) {
    const double pos = out_rows == 1 ? 0.0 : j * last / (out_rows - 1);
    auto lo = static_cast<Eigen::Index>(std::floor(pos));
    if (lo >= raw.rows() - 1) lo = raw.rows() - 2;
    const double w = pos - static_cast<double>(lo);
    out.row(j) = (1.0 - w) * raw.row(lo) + w * raw.row(lo + 1);
  }
  return out;
}

}  // namespace timar
