// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "model/model.hpp"
#include "nn/optim.hpp"

#include <filesystem>
#include <memory>
#include <vector>

namespace timar {

/// The masked-diffusion objective of one dialogue window.
template <typename T>
struct WindowObjective {
  DiffusionLoss<T> loss;
  std::vector<int> masked_frames;
  bool cfg_dropped = false;
  /// Agent-head token blocks before masking, one per turn.
  std::vector<nn::Var> agent_head_blocks;
};

/// Tokenises every turn, interleaves, drops user tokens with probability
/// p_cfg, masks ceil(r N K) agent frames, fuses and evaluates the diffusion
/// loss against the normalised agent frames. Streams used: rng.fork("cfg"),
/// rng.fork("mask") and rng.fork("diff").
template <typename T>
WindowObjective<T> window_objective(nn::Graph<T>& g, const TimarModel<T>& model,
                                    const std::vector<TurnInputs>& turns,
                                    const RandomStream& rng);

/// Chunks and featurises a dialogue for training.
std::vector<TurnInputs> prepare_dialogue(const DialogueSample& sample, const ModelConfig& config,
                                         const NormStats& norm);

struct TrainRecord {
  long step = 0;  // number of completed updates
  long epoch = 0;
  double loss = 0;
  double exp = 0;
  double jaw = 0;
  double pose = 0;
  double lr = 0;
};

/// Owns the model, optimiser state and data order. The sample order, the
/// masking and the noise of update s depend only on (seed, s), so a resumed
/// run reproduces the uninterrupted one exactly.
template <typename T>
class Trainer {
 public:
  Trainer(const ModelConfig& config, std::uint64_t seed, std::vector<DialogueSample> data);
  /// Resumes from a checkpoint produced by checkpoint().
  Trainer(const Archive& checkpoint, std::vector<DialogueSample> data);

  TrainRecord step();

  Archive checkpoint() const;
  void save(const std::filesystem::path& path) const;

  TimarModel<T>& model() { return *model_; }
  const TimarModel<T>& model() const { return *model_; }
  long steps_done() const { return step_; }
  long epoch() const;
  std::size_t dataset_size() const { return data_.size(); }

  /// Sample indices of update `step` (0-based).
  std::vector<std::size_t> batch_indices(long step) const;

 private:
  std::unique_ptr<TimarModel<T>> model_;
  std::vector<DialogueSample> data_;
  nn::AdamWSettings adam_;
  long step_ = 0;
};

}  // namespace timar
