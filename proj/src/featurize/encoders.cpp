// SPDX-License-Identifier: Apache-2.0
#include "featurize/encoders.hpp"

#include "core/error.hpp"

namespace timar {

template <typename T>
SpeechEncoder<T> SpeechEncoder<T>::create(nn::ParamStore<T>& store, const ModelConfig& config,
                                          std::uint64_t seed) {
  SpeechEncoder e;
  e.lift = nn::Linear<T>::create(store, "speech.lift", config.d_raw, config.d_t, seed);
  e.position = &store.add("speech.enc.pos", config.k_frames(), config.d_t);
  nn::init_normal(*e.position, seed, 0.02);
  e.layer = nn::TransformerLayer<T>::create(store, "speech.enc.layer", config.d_t,
                                            config.encoder_heads, seed);
  e.proj = nn::Linear<T>::create(store, "speech.proj", config.d_t, config.d_t, seed);
  return e;
}

template <typename T>
nn::Var SpeechEncoder<T>::operator()(nn::Graph<T>& g, nn::Var aligned) const {
  if (g.rows(aligned) != position->value.rows()) {
    throw ValidationError("speech chunk has " + std::to_string(g.rows(aligned)) +
                          " frames, expected " + std::to_string(position->value.rows()));
  }
  nn::Var x = g.add(lift(g, aligned), g.param(*position));
  x = layer(g, x, nullptr);
  return proj(g, x);
}

template <typename T>
HeadEncoder<T> HeadEncoder<T>::create(nn::ParamStore<T>& store, const ModelConfig& config,
                                      std::uint64_t seed) {
  HeadEncoder e;
  const int hidden = config.d_t / 2;
  e.fc0 = nn::Linear<T>::create(store, "head.mlp.0", config.d_h, hidden, seed);
  e.fc1 = nn::Linear<T>::create(store, "head.mlp.1", hidden, hidden, seed);
  e.fc2 = nn::Linear<T>::create(store, "head.mlp.2", hidden, config.d_t, seed);
  return e;
}

template <typename T>
nn::Var HeadEncoder<T>::operator()(nn::Graph<T>& g, nn::Var frames) const {
  nn::Var h = g.relu(fc0(g, frames));
  h = g.relu(fc1(g, h));
  return fc2(g, h);
}

template <typename T>
Mat<T> speech_encode(const SpeechEncoder<T>& enc, const MatD& aligned) {
  if (!aligned.allFinite()) throw ValidationError("speech_encode: non-finite input");
  nn::Graph<T> g(false);
  return g.value(enc(g, g.constant(aligned.cast<T>())));
}

template <typename T>
Mat<T> head_encode(const HeadEncoder<T>& enc, const MatD& frames) {
  if (!frames.allFinite()) throw ValidationError("head_encode: non-finite input");
  nn::Graph<T> g(false);
  return g.value(enc(g, g.constant(frames.cast<T>())));
}

template struct SpeechEncoder<float>;
template struct SpeechEncoder<double>;
template struct HeadEncoder<float>;
template struct HeadEncoder<double>;
template Mat<float> speech_encode(const SpeechEncoder<float>&, const MatD&);
template Mat<double> speech_encode(const SpeechEncoder<double>&, const MatD&);
template Mat<float> head_encode(const HeadEncoder<float>&, const MatD&);
template Mat<double> head_encode(const HeadEncoder<double>&, const MatD&);

}  // namespace timar
