// SPDX-License-Identifier: Apache-2.0
#include "fusion/fusion.hpp"

#include "core/error.hpp"
#include "core/rng.hpp"

#include <cmath>
#include <string>

namespace timar {

namespace {

void check_monotone(const std::vector<int>& turn_ids) {
  for (std::size_t i = 1; i < turn_ids.size(); ++i) {
    if (turn_ids[i] < turn_ids[i - 1]) {
      throw ValidationError("turn ids must be non-decreasing (index " + std::to_string(i) + ")");
    }
  }
}

}  // namespace

TlcaMask build_tlca_mask(const std::vector<int>& turn_ids) {
  check_monotone(turn_ids);
  TlcaMask m;
  m.length = static_cast<int>(turn_ids.size());
  m.allow.resize(turn_ids.size() * turn_ids.size());
  for (std::size_t q = 0; q < turn_ids.size(); ++q) {
    for (std::size_t k = 0; k < turn_ids.size(); ++k) {
      m.allow[q * turn_ids.size() + k] = turn_ids[k] <= turn_ids[q];
    }
  }
  return m;
}

nn::KeyLimits tlca_key_limits(const std::vector<int>& turn_ids) {
  check_monotone(turn_ids);
  auto limits = std::make_shared<std::vector<int>>(turn_ids.size());
  const int n = static_cast<int>(turn_ids.size());
  int end = n;
  for (int q = n - 1; q >= 0; --q) {
    if (q + 1 < n && turn_ids[static_cast<std::size_t>(q + 1)] != turn_ids[static_cast<std::size_t>(q)]) {
      end = q + 1;
    }
    (*limits)[static_cast<std::size_t>(q)] = end;
  }
  return limits;
}

MatD initial_p1(const ModelConfig& config, std::uint64_t seed) {
  const int k = config.k_frames();
  const ContextLayout layout{config.N_max, k};
  const int d = config.d_e;
  MatD codes(5, d);
  RandomStream rng = seeded_rng(seed, "init/fusion.P1.codes");
  for (Eigen::Index i = 0; i < codes.size(); ++i) codes.data()[i] = rng.normal();

  MatD p1(layout.length(), d);
  const int tl = layout.turn_length();
  for (int pos = 0; pos < layout.length(); ++pos) {
    const int turn = pos / tl;
    int modality = static_cast<int>(Modality::separator);
    double frame = 0.0;
    for (Modality m : {Modality::user_speech, Modality::agent_speech, Modality::user_head,
                       Modality::agent_head}) {
      const int start = layout.block_start(turn, m);
      if (pos >= start && pos < start + k) {
        modality = static_cast<int>(m);
        frame = pos - start;
      }
    }
    if (modality == static_cast<int>(Modality::separator)) {
      // Separators sit at the turn's fractional time by slot order.
      frame = static_cast<double>(pos - turn * tl) * (k - 1) / std::max(tl - 1, 1);
    }
    p1.row(pos) = 0.5 * nn::sinusoid(turn * k + frame, d) + 0.5 * codes.row(modality);
  }
  return p1;
}

template <typename T>
FusionEncoder<T> FusionEncoder<T>::create(nn::ParamStore<T>& store, const ModelConfig& config,
                                          std::uint64_t seed) {
  FusionEncoder f;
  f.in_proj = nn::Linear<T>::create(store, "fusion.in_proj", config.d_t, config.d_e, seed);
  f.p1 = &store.add("fusion.P1", config.max_context(), config.d_e);
  f.p1->value = initial_p1(config, seed).template cast<T>();
  for (int i = 0; i < config.encoder_layers; ++i) {
    f.layers.push_back(nn::TransformerLayer<T>::create(store, "fusion.layer" + std::to_string(i),
                                                       config.d_e, config.encoder_heads, seed));
  }
  f.ln_f = nn::LayerNorm<T>::create(store, "fusion.ln_f", config.d_e);
  return f;
}

template <typename T>
nn::Var FusionEncoder<T>::add_positional(nn::Graph<T>& g, nn::Var tokens) const {
  const auto len = g.rows(tokens);
  if (len > capacity()) {
    throw ValidationError("context length " + std::to_string(len) +
                          " exceeds positional capacity " + std::to_string(capacity()));
  }
  nn::Var pos = g.slice_rows(g.param(*p1), 0, len);
  return g.add(in_proj(g, tokens), pos);
}

template <typename T>
FusedFeatures<T> FusionEncoder<T>::operator()(nn::Graph<T>& g, const InterleavedContext& ctx,
                                              const std::vector<int>& frames) const {
  const nn::KeyLimits limits = tlca_key_limits(ctx.turn_id);
  // Turn-aligned slabs keep every turn's rows identical to those of any
  // window prefix that contains it.
  const Eigen::Index saved_block = g.row_block();
  g.set_row_block(ctx.layout.turn_length());
  struct Restore {
    nn::Graph<T>& g;
    Eigen::Index rows;
    ~Restore() { g.set_row_block(rows); }
  } restore{g, saved_block};
  nn::Var x = add_positional(g, ctx.tokens);
  if (!g.value(x).allFinite()) throw NumericError("non-finite activation at fusion input");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](g, x, limits);
    if (!g.value(x).allFinite()) {
      throw NumericError("non-finite activation in fusion layer " + std::to_string(i));
    }
  }
  x = ln_f(g, x);
  if (!g.value(x).allFinite()) throw NumericError("non-finite activation in fusion final norm");

  const int total = ctx.layout.turns * ctx.layout.k_frames;
  std::vector<int> rows;
  rows.reserve(frames.size());
  for (int f : frames) {
    if (f < 0 || f >= total) throw ValidationError("agent frame index out of range");
    rows.push_back(ctx.layout.agent_head_position(f));
  }
  FusedFeatures<T> out;
  out.z = x;
  out.masked = g.gather_rows(x, std::move(rows));
  out.frames = frames;
  return out;
}

template <typename T>
FusedFeatures<T> FusionEncoder<T>::operator()(nn::Graph<T>& g,
                                              const InterleavedContext& ctx) const {
  std::vector<int> frames;
  for (std::size_t f = 0; f < ctx.agent_head_is_mask.size(); ++f) {
    if (ctx.agent_head_is_mask[f]) frames.push_back(static_cast<int>(f));
  }
  return (*this)(g, ctx, frames);
}

template struct FusionEncoder<float>;
template struct FusionEncoder<double>;

}  // namespace timar
