// SPDX-License-Identifier: Apache-2.0
#include "model/model.hpp"

#include "core/error.hpp"
#include "featurize/features.hpp"

namespace timar {

MatD aligned_speech_features(const Waveform& chunk, const ModelConfig& config) {
  return interp_to_framerate(extract_features(chunk, config), config.k_frames());
}

TurnInputs prepare_turn(const RawTurn& turn, const ModelConfig& config, const NormStats& norm) {
  if (norm.empty()) throw ValidationError("normalisation statistics are missing");
  TurnInputs in;
  in.user_speech = aligned_speech_features(turn.user_wave, config);
  in.agent_speech = aligned_speech_features(turn.agent_wave, config);
  in.user_head = norm.normalize(turn.user_head);
  if (turn.agent_head.size() != 0) in.agent_head = norm.normalize(turn.agent_head);
  return in;
}

template <typename T>
TimarModel<T>::TimarModel(const ModelConfig& cfg, std::uint64_t s)
    : config(cfg), seed(s), schedule(cfg.diff_train_steps) {
  config.validate();
  speech = SpeechEncoder<T>::create(params, config, seed);
  head = HeadEncoder<T>::create(params, config, seed);
  special = SpecialTokens<T>::create(params, config, seed);
  fusion = FusionEncoder<T>::create(params, config, seed);
  denoiser = Denoiser<T>::create(params, config, seed);
}

template <typename T>
TurnTokens TimarModel<T>::tokenize(nn::Graph<T>& g, const TurnInputs& in,
                                   bool agent_masked) const {
  const int k = config.k_frames();
  auto check = [&](const MatD& m, int cols, const char* what) {
    if (m.rows() != k || m.cols() != cols) {
      throw ValidationError(std::string(what) + " must have shape [" + std::to_string(k) + ", " +
                            std::to_string(cols) + "]");
    }
    if (!m.allFinite()) throw ValidationError(std::string(what) + " contains non-finite values");
  };
  check(in.user_speech, config.d_raw, "user speech features");
  check(in.agent_speech, config.d_raw, "agent speech features");
  check(in.user_head, config.d_h, "user head frames");

  TurnTokens t;
  t.user_speech = speech(g, g.constant(in.user_speech.cast<T>()));
  t.agent_speech = speech(g, g.constant(in.agent_speech.cast<T>()));
  t.user_head = head(g, g.constant(in.user_head.cast<T>()));
  if (agent_masked) {
    t.agent_head = g.broadcast_rows(g.param(*special.mask), k);
    t.agent_head_is_mask.assign(static_cast<std::size_t>(k), 1);
  } else {
    check(in.agent_head, config.d_h, "agent head frames");
    t.agent_head = head(g, g.constant(in.agent_head.cast<T>()));
    t.agent_head_is_mask.assign(static_cast<std::size_t>(k), 0);
  }
  return t;
}

template <typename T>
Archive TimarModel<T>::to_archive(bool with_moments) const {
  Archive a;
  params.export_to(a, with_moments);
  if (!norm.empty()) {
    a.add(NamedArray::from_matrix<double>("norm.mean", MatD(norm.mean)));
    a.add(NamedArray::from_matrix<double>("norm.std", MatD(norm.std)));
  }
  a.meta["config"] = config.to_text();
  a.meta["checkpoint_version"] = kCheckpointVersion;
  a.meta["seed"] = std::to_string(seed);
  return a;
}

template <typename T>
void TimarModel<T>::load_weights(const Archive& archive, bool with_moments) {
  params.import_from(archive, with_moments);
  const MatD mean = archive.at("norm.mean").to_matrix<double>();
  const MatD sd = archive.at("norm.std").to_matrix<double>();
  if (mean.rows() != 1 || mean.cols() != config.d_h || sd.rows() != 1 || sd.cols() != config.d_h) {
    throw FormatError("normalisation arrays must have shape [1, 56]");
  }
  norm.mean = mean.row(0);
  norm.std = sd.row(0);
}

ModelConfig checkpoint_config(const Archive& archive) {
  const auto version = archive.meta.find("checkpoint_version");
  if (version == archive.meta.end()) throw FormatError("checkpoint has no version tag");
  if (version->second != kCheckpointVersion) {
    throw FormatError("checkpoint version " + version->second + " is not supported (expected " +
                      kCheckpointVersion + ")");
  }
  const auto cfg = archive.meta.find("config");
  if (cfg == archive.meta.end()) throw FormatError("checkpoint has no config");
  return parse_config(cfg->second);
}

template <typename T>
std::unique_ptr<TimarModel<T>> load_model(const Archive& archive) {
  const ModelConfig config = checkpoint_config(archive);
  std::uint64_t seed = 0;
  if (auto it = archive.meta.find("seed"); it != archive.meta.end()) seed = std::stoull(it->second);
  auto model = std::make_unique<TimarModel<T>>(config, seed);
  model->load_weights(archive, false);
  return model;
}

template struct TimarModel<float>;
template struct TimarModel<double>;
template std::unique_ptr<TimarModel<float>> load_model<float>(const Archive&);
template std::unique_ptr<TimarModel<double>> load_model<double>(const Archive&);

}  // namespace timar
