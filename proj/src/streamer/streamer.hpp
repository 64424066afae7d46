// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "model/model.hpp"

#include <deque>
#include <vector>

namespace timar {

/// What is observed of one turn at inference time (agent motion is unknown).
struct TurnObservation {
  Waveform user_wave;
  Waveform agent_wave;
  MatD user_head;  // [K_frames, 56], raw parameters
};

/// Splits a recorded dialogue into per-turn observations.
std::vector<TurnObservation> observe_dialogue(const DialogueSample& sample,
                                              const ModelConfig& config);

/// Token values of one turn; the agent head block holds K_frames copies of
/// the mask token.
template <typename T>
struct TurnTokenValues {
  Mat<T> user_speech;
  Mat<T> agent_speech;
  Mat<T> user_head;
  Mat<T> agent_head;
};

/// The last `capacity` tokenised turns, oldest first.
template <typename T>
class ContextBuffer {
 public:
  explicit ContextBuffer(int capacity);

  int capacity() const { return capacity_; }
  std::size_t size() const { return turns_.size(); }
  const std::deque<TurnTokenValues<T>>& turns() const { return turns_; }
  /// Appends and evicts the oldest turns beyond capacity.
  void append(TurnTokenValues<T> turn);

 private:
  int capacity_;
  std::deque<TurnTokenValues<T>> turns_;
};

/// Turn-wise autoregressive generation over a sliding window of n history
/// turns. Predicted agent motion is never written back into the window.
template <typename T>
class Streamer {
 public:
  Streamer(const TimarModel<T>& model, int history, double omega, int steps_out,
           std::uint64_t seed);

  /// Tokenises the three observed streams of a turn; does not touch the buffer.
  TurnTokenValues<T> push_turn(const TurnObservation& obs) const;

  /// Fuses (buffer, current), samples the current turn's K_frames agent
  /// frames and returns them denormalised; then appends `current`.
  MatD generate_turn(const TurnTokenValues<T>& current);

  /// Fused features of the window (buffer, current), for inspection.
  Mat<T> fuse_window(const TurnTokenValues<T>& current, bool cfg_drop) const;

  /// Runs every turn and concatenates the outputs.
  MatD run(const std::vector<TurnObservation>& turns);

  const ContextBuffer<T>& buffer() const { return buffer_; }
  long turn_index() const { return turn_; }
  /// Continues from a saved buffer as if `turn_index` turns had been generated.
  void restore(ContextBuffer<T> buffer, long turn_index);

 private:
  InterleavedContext window(nn::Graph<T>& g, const TurnTokenValues<T>& current) const;

  const TimarModel<T>& model_;
  double omega_;
  int steps_out_;
  std::uint64_t seed_;
  ContextBuffer<T> buffer_;
  long turn_ = 0;
};

}  // namespace timar
