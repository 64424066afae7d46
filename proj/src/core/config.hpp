// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace timar {

enum class Precision { f32, f64 };

/// Model, data and optimisation settings. Field names double as the keys of
/// the `key=value` config file.
struct ModelConfig {
  // Token / encoder / diffusion widths.
  int d_t = 1024;
  int d_e = 1024;
  int encoder_layers = 16;
  int encoder_heads = 16;
  int d_m = 1024;
  int K_blocks = 3;
  int d_h = 56;

  // Rates and turn geometry.
  int f_s = 16000;
  int f_h = 25;
  int f_w = 50;
  int d_raw = 512;
  double c = 1.0;
  int N_max = 8;

  // Masked diffusion training and sampling.
  double r = 0.7;
  double p_cfg = 0.1;
  int diff_train_steps = 1000;
  int diff_sample_steps = 100;
  double omega = 1.0;
  int diff_batch_mul = 1;

  // Optimiser.
  double lr = 1e-4;
  int warmup = 100;
  int batch_size = 32;
  int epochs = 400;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;

  Precision precision = Precision::f32;

  /// Frames per turn, c * f_h.
  int k_frames() const;
  /// Audio samples per turn, c * f_s.
  int chunk_samples() const;
  /// Raw feature rows per turn, c * f_w - 1.
  int raw_rows() const;
  /// Flat tokens per turn, 4 * K_frames + 10.
  int turn_tokens() const { return 4 * k_frames() + 10; }
  /// P1 capacity, N_max * (4 * K_frames + 10).
  int max_context() const { return N_max * turn_tokens(); }

  /// Throws ValidationError naming the offending key.
  void validate() const;

  /// Serialises every field, one `key=value` per line.
  std::string to_text() const;

  bool operator==(const ModelConfig&) const = default;
};

ModelConfig parse_config(std::string_view text);
ModelConfig load_config(const std::filesystem::path& path);
void save_config(const ModelConfig& config, const std::filesystem::path& path);

const char* precision_name(Precision p);

}  // namespace timar
