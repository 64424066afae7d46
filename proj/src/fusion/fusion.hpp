// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "context/context.hpp"
#include "core/config.hpp"
#include "nn/layers.hpp"

#include <cstdint>
#include <vector>

namespace timar {

/// Boolean attention permission: allow(q, k) == (turn_id[k] <= turn_id[q]).
struct TlcaMask {
  int length = 0;
  std::vector<std::uint8_t> allow;  // row-major [length, length]

  bool operator()(int q, int k) const {
    return allow[static_cast<std::size_t>(q) * static_cast<std::size_t>(length) +
                 static_cast<std::size_t>(k)] != 0;
  }
};

/// Throws ValidationError when turn_ids decrease anywhere.
TlcaMask build_tlca_mask(const std::vector<int>& turn_ids);

/// The same mask in prefix form: row q may attend to keys [0, limit[q]),
/// where limit[q] is one past the last token of q's turn.
nn::KeyLimits tlca_key_limits(const std::vector<int>& turn_ids);

/// Initial values of P1: a sinusoidal code of each slot's time coordinate
/// plus a fixed random code per modality, so position and role are
/// distinguishable from the first step. Rows follow the flat layout of an
/// N_max-turn window.
MatD initial_p1(const ModelConfig& config, std::uint64_t seed);

template <typename T>
struct FusedFeatures {
  nn::Var z;             // [L, d_e]
  nn::Var masked;        // [|frames|, d_e], rows of z
  std::vector<int> frames;  // global agent-head frame per row of `masked`
};

/// Input projection, P1, a stack of pre-norm encoder layers restricted by
/// the turn-level causal mask, and a final layer norm.
template <typename T>
struct FusionEncoder {
  nn::Linear<T> in_proj;
  nn::Parameter<T>* p1 = nullptr;  // [max_context, d_e]
  std::vector<nn::TransformerLayer<T>> layers;
  nn::LayerNorm<T> ln_f;

  static FusionEncoder create(nn::ParamStore<T>& store, const ModelConfig& config,
                              std::uint64_t seed);

  int capacity() const { return static_cast<int>(p1->value.rows()); }

  /// Affine lift to d_e plus P1[0..L-1]; positions start at 0 for every window.
  nn::Var add_positional(nn::Graph<T>& g, nn::Var tokens) const;

  /// Fused features of the whole context, with rows gathered at the given
  /// global agent-head frames. Throws NumericError naming the first layer
  /// whose output is non-finite.
  FusedFeatures<T> operator()(nn::Graph<T>& g, const InterleavedContext& ctx,
                              const std::vector<int>& frames) const;
  /// Gathers every frame flagged in ctx.agent_head_is_mask.
  FusedFeatures<T> operator()(nn::Graph<T>& g, const InterleavedContext& ctx) const;
};

}  // namespace timar
