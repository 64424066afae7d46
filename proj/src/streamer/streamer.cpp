// SPDX-License-Identifier: Apache-2.0
#include "streamer/streamer.hpp"

#include "core/error.hpp"

#include <cmath>
#include <string>

namespace timar {

std::vector<TurnObservation> observe_dialogue(const DialogueSample& sample,
                                              const ModelConfig& config) {
  const auto raw = chunk_sequences(sample.user_wave, sample.agent_wave, sample.user_head,
                                   sample.agent_head, config);
  std::vector<TurnObservation> out;
  out.reserve(raw.size());
  for (const auto& t : raw) out.push_back({t.user_wave, t.agent_wave, t.user_head});
  return out;
}

template <typename T>
ContextBuffer<T>::ContextBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 0) throw ValidationError("context history must be non-negative");
}

template <typename T>
void ContextBuffer<T>::append(TurnTokenValues<T> turn) {
  turns_.push_back(std::move(turn));
  while (static_cast<int>(turns_.size()) > capacity_) turns_.pop_front();
}

template <typename T>
Streamer<T>::Streamer(const TimarModel<T>& model, int history, double omega, int steps_out,
                      std::uint64_t seed)
    : model_(model), omega_(omega), steps_out_(steps_out), seed_(seed), buffer_(history) {
  if (history + 1 > model.config.N_max) {
    throw ValidationError("context history " + std::to_string(history) +
                          " exceeds N_max - 1 = " + std::to_string(model.config.N_max - 1));
  }
  if (!std::isfinite(omega)) throw ValidationError("guidance scale must be finite");
  model.schedule.respaced(steps_out);  // validates the step count
  if (model.norm.empty()) throw ValidationError("model has no normalisation statistics");
}

template <typename T>
TurnTokenValues<T> Streamer<T>::push_turn(const TurnObservation& obs) const {
  const ModelConfig& cfg = model_.config;
  const int k = cfg.k_frames();
  const auto samples = static_cast<std::size_t>(cfg.chunk_samples());
  if (obs.user_wave.samples.size() != samples || obs.agent_wave.samples.size() != samples) {
    throw ValidationError("turn audio must have exactly " + std::to_string(samples) + " samples");
  }
  if (obs.user_head.rows() != k) {
    throw ValidationError("turn head segment must have exactly " + std::to_string(k) +
                          " frames, got " + std::to_string(obs.user_head.rows()));
  }
  TurnInputs in;
  in.user_speech = aligned_speech_features(obs.user_wave, cfg);
  in.agent_speech = aligned_speech_features(obs.agent_wave, cfg);
  in.user_head = model_.norm.normalize(obs.user_head);

  nn::Graph<T> g(false);
  const TurnTokens t = model_.tokenize(g, in, true);
  return {g.value(t.user_speech), g.value(t.agent_speech), g.value(t.user_head),
          g.value(t.agent_head)};
}

template <typename T>
InterleavedContext Streamer<T>::window(nn::Graph<T>& g, const TurnTokenValues<T>& current) const {
  const int k = model_.config.k_frames();
  std::vector<TurnTokens> tokens;
  auto add = [&](const TurnTokenValues<T>& v) {
    // The agent slots always hold the mask token, whatever the caller passed.
    tokens.push_back({g.constant(v.user_speech), g.constant(v.agent_speech),
                      g.constant(v.user_head), g.broadcast_rows(g.param(*model_.special.mask), k),
                      std::vector<char>(static_cast<std::size_t>(k), 1)});
  };
  for (const auto& t : buffer_.turns()) add(t);
  add(current);
  return interleave(g, g.param(*model_.special.separators), tokens);
}

template <typename T>
Mat<T> Streamer<T>::fuse_window(const TurnTokenValues<T>& current, bool cfg_drop) const {
  nn::Graph<T> g(false);
  InterleavedContext ctx = window(g, current);
  if (cfg_drop) ctx = apply_cfg_drop(g, ctx, g.param(*model_.special.fake));
  return g.value(model_.fusion(g, ctx, {}).z);
}

template <typename T>
MatD Streamer<T>::generate_turn(const TurnTokenValues<T>& current) {
  const int k = model_.config.k_frames();
  const int first = static_cast<int>(buffer_.size()) * k;
  std::vector<int> frames(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) frames[static_cast<std::size_t>(i)] = first + i;

  Mat<T> cond, uncond;
  {
    nn::Graph<T> g(false);
    const InterleavedContext ctx = window(g, current);
    cond = g.value(model_.fusion(g, ctx, frames).masked);
    if (omega_ != 1.0) {
      const InterleavedContext dropped = apply_cfg_drop(g, ctx, g.param(*model_.special.fake));
      uncond = g.value(model_.fusion(g, dropped, frames).masked);
    }
  }
  const RandomStream rng = seeded_rng(seed_, "sample/turn" + std::to_string(turn_));
  const Mat<T> x = sample(model_.denoiser, model_.schedule, cond, frames, omega_,
                          omega_ != 1.0 ? &uncond : nullptr, steps_out_, rng);

  TurnTokenValues<T> stored = current;
  stored.agent_head = model_.special.mask->value.replicate(k, 1);
  buffer_.append(std::move(stored));
  ++turn_;
  return model_.norm.denormalize(x.template cast<double>());
}

template <typename T>
MatD Streamer<T>::run(const std::vector<TurnObservation>& turns) {
  const int k = model_.config.k_frames();
  MatD out(static_cast<Eigen::Index>(turns.size()) * k, model_.config.d_h);
  for (std::size_t i = 0; i < turns.size(); ++i) {
    out.middleRows(static_cast<Eigen::Index>(i) * k, k) = generate_turn(push_turn(turns[i]));
  }
  return out;
}

template <typename T>
void Streamer<T>::restore(ContextBuffer<T> buffer, long turn_index) {
  if (buffer.capacity() != buffer_.capacity()) {
    throw ValidationError("restored buffer capacity differs from the streamer's history");
  }
  buffer_ = std::move(buffer);
  turn_ = turn_index;
}

template class ContextBuffer<float>;
template class ContextBuffer<double>;
template class Streamer<float>;
template class Streamer<double>;

}  // namespace timar
