// SPDX-License-Identifier: Apache-2.0
#include "nn/layers.hpp"

#include <algorithm>
#include <cmath>

namespace timar::nn {

Eigen::RowVectorXd sinusoid(double position, int dim) {
  Eigen::RowVectorXd e(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / std::max(half, 1));
    e(i) = std::sin(position * freq);
    e(half + i) = std::cos(position * freq);
  }
  if (dim % 2 != 0) e(dim - 1) = 0.0;
  return e;
}

template <typename T>
Linear<T> Linear<T>::create(ParamStore<T>& store, const std::string& prefix, int in, int out,
                            std::uint64_t seed) {
  Linear l;
  l.weight = &store.add(prefix + ".w", in, out);
  l.bias = &store.add(prefix + ".b", 1, out);
  init_uniform_fan_in(*l.weight, seed, in);
  init_uniform_fan_in(*l.bias, seed, in);
  return l;
}

template <typename T>
Var Linear<T>::operator()(Graph<T>& g, Var x) const {
  return g.linear(x, g.param(*weight), g.param(*bias));
}

template <typename T>
void Linear<T>::zero() {
  weight->value.setZero();
  bias->value.setZero();
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParamStore<T>& store, const std::string& prefix, int dim) {
  LayerNorm n;
  n.gain = &store.add(prefix + ".g", 1, dim);
  n.gain->value.setOnes();
  n.bias = &store.add(prefix + ".b", 1, dim);
  return n;
}

template <typename T>
Var LayerNorm<T>::operator()(Graph<T>& g, Var x) const {
  return g.layer_norm(x, g.param(*gain), g.param(*bias), eps);
}

template <typename T>
TransformerLayer<T> TransformerLayer<T>::create(ParamStore<T>& store, const std::string& prefix,
                                                int dim, int heads, std::uint64_t seed) {
  TransformerLayer l;
  l.heads = heads;
  l.ln1 = LayerNorm<T>::create(store, prefix + ".ln1", dim);
  l.q = Linear<T>::create(store, prefix + ".attn.q", dim, dim, seed);
  l.k = Linear<T>::create(store, prefix + ".attn.k", dim, dim, seed);
  l.v = Linear<T>::create(store, prefix + ".attn.v", dim, dim, seed);
  l.o = Linear<T>::create(store, prefix + ".attn.o", dim, dim, seed);
  l.ln2 = LayerNorm<T>::create(store, prefix + ".ln2", dim);
  l.ff1 = Linear<T>::create(store, prefix + ".ff1", dim, 4 * dim, seed);
  l.ff2 = Linear<T>::create(store, prefix + ".ff2", 4 * dim, dim, seed);
  return l;
}

template <typename T>
Var TransformerLayer<T>::operator()(Graph<T>& g, Var x, const KeyLimits& limits) const {
  Var h = ln1(g, x);
  Var a = g.attention(q(g, h), k(g, h), v(g, h), heads, limits);
  x = g.add(x, o(g, a));
  h = ln2(g, x);
  return g.add(x, ff2(g, g.gelu(ff1(g, h))));
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct TransformerLayer<float>;
template struct TransformerLayer<double>;

}  // namespace timar::nn
