// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/config.hpp"
#include "core/rng.hpp"
#include "core/types.hpp"
#include "nn/graph.hpp"
#include "nn/params.hpp"

#include <vector>

namespace timar {

enum class Modality : int {
  user_speech = 0,
  agent_speech = 1,
  user_head = 2,
  agent_head = 3,
  separator = 4,
};

/// Separator slots, in the order they appear within a turn.
enum class Separator : int {
  turn_begin = 0,
  user_speech_begin,
  user_speech_end,
  agent_speech_begin,
  agent_speech_end,
  user_head_begin,
  user_head_end,
  agent_head_begin,
  agent_head_end,
  turn_end,
};
inline constexpr int kSeparatorCount = 10;

/// Index arithmetic of the flat interleaved sequence. Each turn is
///   [TB][USB] us [USE][ASB] as [ASE][UHB] uh [UHE][AHB] ah [AHE][TE]
/// i.e. 4 * K_frames content rows plus 10 separators.
struct ContextLayout {
  int turns = 0;
  int k_frames = 0;

  int turn_length() const { return 4 * k_frames + kSeparatorCount; }
  int length() const { return turns * turn_length(); }
  /// Flat index of the first content row of a modality block.
  int block_start(int turn, Modality m) const;
  int separator_position(int turn, Separator s) const;
  /// Flat index of agent-head frame `global_frame` (turn * K + k).
  int agent_head_position(int global_frame) const;
};

/// One turn's raw (untokenised) inputs.
struct RawTurn {
  Waveform user_wave;
  Waveform agent_wave;
  MatD user_head;   // [K_frames, 56]
  MatD agent_head;  // [K_frames, 56]
};

/// Splits aligned streams into N = T / c turns; turn i covers
/// [i*c, (i+1)*c) seconds in both the sample and frame index spaces.
std::vector<RawTurn> chunk_sequences(const Waveform& user_wave, const Waveform& agent_wave,
                                     const HeadSequence& user_head,
                                     const HeadSequence& agent_head, const ModelConfig& config);

/// Learnable mask token, fake (CFG) token and the ten separator embeddings.
template <typename T>
struct SpecialTokens {
  nn::Parameter<T>* mask = nullptr;        // [1, d_t]
  nn::Parameter<T>* fake = nullptr;        // [1, d_t]
  nn::Parameter<T>* separators = nullptr;  // [10, d_t]

  static SpecialTokens create(nn::ParamStore<T>& store, const ModelConfig& config,
                              std::uint64_t seed);
};

/// The four token blocks of one turn inside a graph.
struct TurnTokens {
  nn::Var user_speech;
  nn::Var agent_speech;
  nn::Var user_head;
  nn::Var agent_head;
  /// Per agent-head frame: the block row already holds the mask token.
  std::vector<char> agent_head_is_mask;
};

struct InterleavedContext {
  nn::Var tokens;  // [N * (4K + 10), d_t]
  ContextLayout layout;
  std::vector<int> turn_id;
  std::vector<int> modality_id;
  /// Global agent-head frame index (turn * K + k) per row; -1 elsewhere.
  std::vector<int> frame_index;
  /// Per global agent-head frame.
  std::vector<char> agent_head_is_mask;
};

template <typename T>
InterleavedContext interleave(nn::Graph<T>& g, nn::Var separators,
                              const std::vector<TurnTokens>& turns);

/// Samples exactly ceil(r * N * K) agent-head frames uniformly without
/// replacement over the whole window and overwrites them with the mask token.
/// Returns the updated context and the sorted global frame indices.
template <typename T>
std::pair<InterleavedContext, std::vector<int>> apply_agent_mask(nn::Graph<T>& g,
                                                                  const InterleavedContext& ctx,
                                                                  double r, RandomStream& rng,
                                                                  nn::Var mask_token);

/// Replaces every user-speech and user-head row with the fake token.
template <typename T>
InterleavedContext apply_cfg_drop(nn::Graph<T>& g, const InterleavedContext& ctx,
                                  nn::Var fake_token);

/// ceil(r * total), robust to representation error in r.
int mask_count(double r, int total);

/// Uniform sample of `count` distinct values from [0, total), sorted.
std::vector<int> sample_without_replacement(int total, int count, RandomStream& rng);

}  // namespace timar
