// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nn/graph.hpp"
#include "nn/params.hpp"

#include <string>

namespace timar::nn {

/// [sin(p f_0) .. sin(p f_{h-1}), cos(p f_0) .. cos(p f_{h-1})] with
/// f_i = 10000^(-i/h), h = dim / 2; an odd trailing column is zero.
Eigen::RowVectorXd sinusoid(double position, int dim);

/// x * W + b with W stored as [in, out].
template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  static Linear create(ParamStore<T>& store, const std::string& prefix, int in, int out,
                       std::uint64_t seed);
  Var operator()(Graph<T>& g, Var x) const;
  void zero();
  int in() const { return static_cast<int>(weight->value.rows()); }
  int out() const { return static_cast<int>(weight->value.cols()); }
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gain = nullptr;
  Parameter<T>* bias = nullptr;
  T eps = T(1e-5);

  static LayerNorm create(ParamStore<T>& store, const std::string& prefix, int dim);
  Var operator()(Graph<T>& g, Var x) const;
};

/// Pre-norm transformer encoder layer: x + Attn(LN(x)), then
/// x + W2 GELU(W1 LN(x)) with a 4x wide feed-forward.
template <typename T>
struct TransformerLayer {
  LayerNorm<T> ln1, ln2;
  Linear<T> q, k, v, o;
  Linear<T> ff1, ff2;
  int heads = 1;

  static TransformerLayer create(ParamStore<T>& store, const std::string& prefix, int dim,
                                 int heads, std::uint64_t seed);
  Var operator()(Graph<T>& g, Var x, const KeyLimits& limits) const;
};

}  // namespace timar::nn
