// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "context/context.hpp"
#include "core/archive.hpp"
#include "core/config.hpp"
#include "diffusion/denoiser.hpp"
#include "diffusion/schedule.hpp"
#include "featurize/encoders.hpp"
#include "fusion/fusion.hpp"
#include "model/norm.hpp"

#include <filesystem>
#include <memory>

namespace timar {

inline constexpr const char* kCheckpointVersion = "1";

/// Encoder-ready inputs of one turn: frame-aligned speech features and
/// normalised head frames.
struct TurnInputs {
  MatD user_speech;  // [K_frames, d_raw]
  MatD agent_speech;
  MatD user_head;    // [K_frames, 56], normalised
  MatD agent_head;   // empty when unknown (inference)
};

/// Speech features at the motion frame rate for one c-second chunk.
MatD aligned_speech_features(const Waveform& chunk, const ModelConfig& config);

TurnInputs prepare_turn(const RawTurn& turn, const ModelConfig& config, const NormStats& norm);

/// Every trainable module plus the frozen noise schedule and the
/// normalisation statistics the model was trained with.
template <typename T>
struct TimarModel {
  using Scalar = T;

  ModelConfig config;
  std::uint64_t seed = 0;
  nn::ParamStore<T> params;
  SpeechEncoder<T> speech;
  HeadEncoder<T> head;
  SpecialTokens<T> special;
  FusionEncoder<T> fusion;
  Denoiser<T> denoiser;
  NoiseSchedule schedule;
  NormStats norm;

  TimarModel(const ModelConfig& config, std::uint64_t seed);
  TimarModel(const TimarModel&) = delete;
  TimarModel& operator=(const TimarModel&) = delete;

  /// Encodes the four blocks of a turn. With `agent_masked` the agent head
  /// block is K_frames copies of the mask token and its frames are unused.
  TurnTokens tokenize(nn::Graph<T>& g, const TurnInputs& in, bool agent_masked) const;

  /// Parameters, normalisation and config; optimiser moments when requested.
  Archive to_archive(bool with_moments) const;
  void load_weights(const Archive& archive, bool with_moments);
};

/// Reads the config (and precision) recorded in a checkpoint.
ModelConfig checkpoint_config(const Archive& archive);

template <typename T>
std::unique_ptr<TimarModel<T>> load_model(const Archive& archive);

}  // namespace timar
