// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace timar {

/// Knobs of the synthetic dyadic-conversation process.
struct SynthParams {
  double duration = 8.0;
  int f_s = 16000;
  int f_h = 25;
  /// Turn-taking: exponential holding times, clamped.
  double hold_mean = 2.0;
  double hold_min = 0.5;
  double hold_max = 4.0;
  /// Chance of a mutual-silence gap between two speaker segments.
  double silence_prob = 0.3;
  double envelope_window = 0.12;
  /// Listener reaction lag, in frames.
  int lag_frames = 5;
  /// Time constant of the smoothing applied to the lagged user envelope.
  double listener_smoothing = 0.6;
  double user_walk_sigma = 0.05;
  double agent_walk_sigma = 0.005;
  double walk_phi = 0.95;
  double observation_noise = 0.01;
  /// Simulated lead-in so lagged and smoothed terms start in steady state.
  double burn_in = 2.0;
};

/// Frame-rate speaking envelopes that drove a sample (ground truth for
/// oracles; not stored in datasets).
struct SynthTrace {
  std::vector<double> user_env;   // [frames]
  std::vector<double> agent_env;
  std::vector<double> user_env_lagged;    // e_u(t - lag)
  std::vector<double> listener_drive;     // smoothed e_u(t - lag)
};

DialogueSample gen_sample(std::uint64_t seed, const SynthParams& params = {},
                          SynthTrace* trace = nullptr);

struct DatasetEntry {
  std::string id;
  Split split;
  std::uint64_t seed;
  std::string file;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<DatasetEntry> entries;
};

const char* split_name(Split s);
Split parse_split(const std::string& name);

/// Writes `{id}.tmr` per sample plus manifest.json into out_dir.
DatasetManifest gen_dataset(int n_train, int n_val, int n_test, std::uint64_t seed,
                            const std::filesystem::path& out_dir,
                            const SynthParams& params = {});

DatasetManifest read_manifest(const std::filesystem::path& dir);

void write_sample(const DialogueSample& sample, const std::filesystem::path& path);
DialogueSample read_sample(const std::filesystem::path& path);

/// Every sample of one split, in manifest order.
std::vector<DialogueSample> load_split(const std::filesystem::path& dir, Split split);

}  // namespace timar
