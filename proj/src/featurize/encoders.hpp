// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/config.hpp"
#include "nn/layers.hpp"

namespace timar {

/// Trainable half of the speech tokenizer: affine lift d_raw -> d_t, one
/// bidirectional encoder layer over the chunk's frames (with a learned
/// per-frame position vector), then the projection into token space.
/// Operates on one chunk at a time, so nothing outside the chunk is read.
template <typename T>
struct SpeechEncoder {
  nn::Linear<T> lift;
  nn::Parameter<T>* position = nullptr;  // [K_frames, d_t]
  nn::TransformerLayer<T> layer;
  nn::Linear<T> proj;

  static SpeechEncoder create(nn::ParamStore<T>& store, const ModelConfig& config,
                              std::uint64_t seed);
  /// aligned: [K_frames, d_raw] -> [K_frames, d_t].
  nn::Var operator()(nn::Graph<T>& g, nn::Var aligned) const;
};

/// Frame-wise MLP 56 -> d_t/2 -> d_t/2 -> d_t with ReLU between layers.
template <typename T>
struct HeadEncoder {
  nn::Linear<T> fc0, fc1, fc2;

  static HeadEncoder create(nn::ParamStore<T>& store, const ModelConfig& config,
                            std::uint64_t seed);
  /// frames: [n, 56] -> [n, d_t].
  nn::Var operator()(nn::Graph<T>& g, nn::Var frames) const;
};

/// Value-level wrappers (no gradient tracking).
template <typename T>
Mat<T> speech_encode(const SpeechEncoder<T>& enc, const MatD& aligned);
template <typename T>
Mat<T> head_encode(const HeadEncoder<T>& enc, const MatD& frames);

}  // namespace timar
