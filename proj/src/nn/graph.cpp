// SPDX-License-Identifier: Apache-2.0
#include "nn/graph.hpp"

#include "core/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace timar::nn {
namespace {

void check_same_shape(const auto& a, const auto& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(op) + ": shape mismatch [" + std::to_string(a.rows()) +
                          ", " + std::to_string(a.cols()) + "] vs [" +
                          std::to_string(b.rows()) + ", " + std::to_string(b.cols()) + "]");
  }
}

}  // namespace

template <typename T>
Var Graph<T>::push(Mat<T> value, bool needs_grad, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = grad_enabled_ && needs_grad;
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Mat<T>& Graph<T>::g(int id) {
  auto& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
Var Graph<T>::constant(Mat<T> value) {
  return push(std::move(value), false, nullptr);
}

template <typename T>
Var Graph<T>::leaf(Mat<T> value) {
  return push(std::move(value), true, nullptr);
}

template <typename T>
Var Graph<T>::param(Parameter<T>& p) {
  if (const auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  Var v = push(p.value, true, nullptr);
  nodes_[v.id].param = &p;
  param_nodes_[&p] = v.id;
  return v;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.rows()) throw ValidationError("matmul: inner dimension mismatch");
  Mat<T> out(A.rows(), B.cols());
  out.noalias() = A * B;
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [this, a, b, out_id] {
    const auto& dy = nodes_[out_id].grad;
    if (needs(a)) g(a.id).noalias() += dy * value(b).transpose();
    if (needs(b)) g(b.id).noalias() += value(a).transpose() * dy;
  });
}

template <typename T>
Var Graph<T>::linear(Var x, Var w, Var b) {
  const auto& X = value(x);
  const auto& W = value(w);
  if (X.cols() != W.rows()) {
    throw ValidationError("linear: input width " + std::to_string(X.cols()) +
                          " does not match weight rows " + std::to_string(W.rows()));
  }
  Mat<T> out(X.rows(), W.cols());
  const Eigen::Index block = row_block_ > 0 ? row_block_ : X.rows();
  for (Eigen::Index r = 0; r < X.rows(); r += block) {
    const Eigen::Index n = std::min(block, X.rows() - r);
    out.middleRows(r, n).noalias() = X.middleRows(r, n) * W;
  }
  if (b.valid()) out.rowwise() += value(b).row(0);
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(x) || needs(w) || needs(b), [this, x, w, b, out_id] {
    const auto& dy = nodes_[out_id].grad;
    if (needs(x)) g(x.id).noalias() += dy * value(w).transpose();
    if (needs(w)) g(w.id).noalias() += value(x).transpose() * dy;
    if (needs(b)) g(b.id).row(0) += dy.colwise().sum();
  });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  Mat<T> out = value(a) + value(b);
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [this, a, b, out_id] {
    const auto& dy = nodes_[out_id].grad;
    if (needs(a)) g(a.id) += dy;
    if (needs(b)) g(b.id) += dy;
  });
}

template <typename T>
Var Graph<T>::add_row(Var a, Var row) {
  if (rows(row) != 1 || cols(row) != cols(a)) throw ValidationError("add_row: shape mismatch");
  Mat<T> out = value(a);
  out.rowwise() += value(row).row(0);
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a) || needs(row), [this, a, row, out_id] {
    const auto& dy = nodes_[out_id].grad;
    if (needs(a)) g(a.id) += dy;
    if (needs(row)) g(row.id).row(0) += dy.colwise().sum();
  });
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul");
  Mat<T> out = value(a).cwiseProduct(value(b));
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [this, a, b, out_id] {
    const auto& dy = nodes_[out_id].grad;
    if (needs(a)) g(a.id) += dy.cwiseProduct(value(b));
    if (needs(b)) g(b.id) += dy.cwiseProduct(value(a));
  });
}

template <typename T>
Var Graph<T>::scale(Var a, T s) {
  Mat<T> out = value(a) * s;
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, s, out_id] {
    g(a.id) += nodes_[out_id].grad * s;
  });
}

template <typename T>
Var Graph<T>::relu(Var a) {
  Mat<T> out = value(a).cwiseMax(T(0));
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, out_id] {
    const auto& dy = nodes_[out_id].grad;
    g(a.id).array() += (value(a).array() > T(0)).select(dy.array(), T(0));
  });
}

template <typename T>
Var Graph<T>::gelu(Var a) {
  static constexpr T kA = T(0.7978845608028654);  // sqrt(2 / pi)
  static constexpr T kB = T(0.044715);
  const auto& X = value(a).array();
  Mat<T> out = (T(0.5) * X * (T(1) + (kA * (X + kB * X.cube())).tanh())).matrix();
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, out_id] {
    const auto& x = value(a).array();
    const auto& dy = nodes_[out_id].grad.array();
    const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t =
        (kA * (x + kB * x.cube())).tanh();
    const auto d = T(0.5) * (T(1) + t) +
                   T(0.5) * x * (T(1) - t.square()) * kA * (T(1) + T(3) * kB * x.square());
    g(a.id).array() += dy * d;
  });
}

template <typename T>
Var Graph<T>::silu(Var a) {
  const auto& X = value(a).array();
  Mat<T> out = (X / (T(1) + (-X).exp())).matrix();
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(a), [this, a, out_id] {
    const auto& x = value(a).array();
    const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> s =
        T(1) / (T(1) + (-x).exp());
    g(a.id).array() += nodes_[out_id].grad.array() * s * (T(1) + x * (T(1) - s));
  });
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gain, Var bias, T eps) {
  const auto& X = value(x);
  const Eigen::Index d = X.cols();
  using Col = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Col mean = X.rowwise().mean().array();
  Mat<T> xhat = X.colwise() - mean.matrix();
  const Col inv = ((xhat.array().square().rowwise().sum() / T(d)) + eps).rsqrt();
  xhat.array().colwise() *= inv;
  Mat<T> out = xhat;
  if (gain.valid()) out.array().rowwise() *= value(gain).row(0).array();
  if (bias.valid()) out.rowwise() += value(bias).row(0);

  auto saved = std::make_shared<std::pair<Mat<T>, Col>>(std::move(xhat), inv);
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(x) || needs(gain) || needs(bias),
              [this, x, gain, bias, out_id, saved, d] {
                const auto& dy = nodes_[out_id].grad;
                const auto& xh = saved->first;
                if (needs(gain)) g(gain.id).row(0) += dy.cwiseProduct(xh).colwise().sum();
                if (needs(bias)) g(bias.id).row(0) += dy.colwise().sum();
                if (!needs(x)) return;
                Mat<T> dxh = dy;
                if (gain.valid()) dxh.array().rowwise() *= value(gain).row(0).array();
                const Col m1 = dxh.rowwise().sum().array() / T(d);
                const Col m2 = dxh.cwiseProduct(xh).rowwise().sum().array() / T(d);
                Mat<T> dx = dxh.colwise() - m1.matrix();
                dx.array() -= xh.array().colwise() * m2;
                dx.array().colwise() *= saved->second;
                g(x.id) += dx;
              });
}

template <typename T>
Var Graph<T>::attention(Var q, Var k, Var v, int heads, const KeyLimits& limits) {
  const auto& Q = value(q);
  const auto& K = value(k);
  const auto& V = value(v);
  const Eigen::Index L = Q.rows();
  const Eigen::Index d = Q.cols();
  if (K.rows() != L || V.rows() != L || K.cols() != d || V.cols() != d) {
    throw ValidationError("attention: q, k, v must share shape");
  }
  if (heads <= 0 || d % heads != 0) throw ValidationError("attention: heads must divide width");
  if (limits && static_cast<Eigen::Index>(limits->size()) != L) {
    throw ValidationError("attention: key limit count does not match sequence length");
  }
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  struct Group {
    Eigen::Index begin, count, keys;
  };
  auto groups = std::make_shared<std::vector<Group>>();
  for (Eigen::Index r = 0; r < L;) {
    const Eigen::Index keys = limits ? (*limits)[r] : L;
    if (keys <= 0 || keys > L) throw ValidationError("attention: key limit out of range");
    Eigen::Index e = r + 1;
    while (e < L && (limits ? (*limits)[e] : L) == keys) ++e;
    groups->push_back({r, e - r, keys});
    r = e;
  }

  auto probs = std::make_shared<std::vector<Mat<T>>>();
  probs->reserve(groups->size() * heads);
  Mat<T> out(L, d);
  for (const auto& gr : *groups) {
    for (int h = 0; h < heads; ++h) {
      Mat<T> s(gr.count, gr.keys);
      s.noalias() = Q.block(gr.begin, h * dh, gr.count, dh) *
                    K.block(0, h * dh, gr.keys, dh).transpose();
      s *= scale;
      const Eigen::Matrix<T, Eigen::Dynamic, 1> row_max = s.rowwise().maxCoeff();
      s.colwise() -= row_max;
      s = s.array().exp().matrix();
      const Eigen::Array<T, Eigen::Dynamic, 1> row_sum = s.rowwise().sum().array();
      s.array().colwise() /= row_sum;
      out.block(gr.begin, h * dh, gr.count, dh).noalias() = s * V.block(0, h * dh, gr.keys, dh);
      probs->push_back(std::move(s));
    }
  }

  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(q) || needs(k) || needs(v),
              [this, q, k, v, heads, dh, scale, groups, probs, out_id] {
                const auto& dy = nodes_[out_id].grad;
                const auto& Qv = value(q);
                const auto& Kv = value(k);
                const auto& Vv = value(v);
                const bool nq = needs(q), nk = needs(k), nv = needs(v);
                std::size_t idx = 0;
                for (const auto& gr : *groups) {
                  for (int h = 0; h < heads; ++h, ++idx) {
                    const Mat<T>& p = (*probs)[idx];
                    const auto dyb = dy.block(gr.begin, h * dh, gr.count, dh);
                    if (nv) g(v.id).block(0, h * dh, gr.keys, dh).noalias() += p.transpose() * dyb;
                    if (!nq && !nk) continue;
                    Mat<T> dp(gr.count, gr.keys);
                    dp.noalias() = dyb * Vv.block(0, h * dh, gr.keys, dh).transpose();
                    const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot =
                        dp.cwiseProduct(p).rowwise().sum();
                    Mat<T> ds = p.cwiseProduct(dp.colwise() - rowdot);
                    ds *= scale;
                    if (nq) {
                      g(q.id).block(gr.begin, h * dh, gr.count, dh).noalias() +=
                          ds * Kv.block(0, h * dh, gr.keys, dh);
                    }
                    if (nk) {
                      g(k.id).block(0, h * dh, gr.keys, dh).noalias() +=
                          ds.transpose() * Qv.block(gr.begin, h * dh, gr.count, dh);
                    }
                  }
                }
              });
}

template <typename T>
Var Graph<T>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no inputs");
  const Eigen::Index d = cols(parts[0]);
  Eigen::Index total = 0;
  bool any = false;
  for (Var p : parts) {
    if (cols(p) != d) throw ValidationError("concat_rows: width mismatch");
    total += rows(p);
    any = any || needs(p);
  }
  Mat<T> out(total, d);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, rows(p)) = value(p);
    r += rows(p);
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), any, [this, ids = std::move(ids), out_id] {
    const auto& dy = nodes_[out_id].grad;
    Eigen::Index r = 0;
    for (Var p : ids) {
      const Eigen::Index n = rows(p);
      if (needs(p)) g(p.id) += dy.middleRows(r, n);
      r += n;
    }
  });
}

template <typename T>
Var Graph<T>::slice_rows(Var x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > rows(x)) {
    throw ValidationError("slice_rows: range out of bounds");
  }
  Mat<T> out = value(x).middleRows(begin, count);
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(x), [this, x, begin, count, out_id] {
    g(x.id).middleRows(begin, count) += nodes_[out_id].grad;
  });
}

template <typename T>
Var Graph<T>::slice_cols(Var x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > cols(x)) {
    throw ValidationError("slice_cols: range out of bounds");
  }
  Mat<T> out = value(x).middleCols(begin, count);
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(x), [this, x, begin, count, out_id] {
    g(x.id).middleCols(begin, count) += nodes_[out_id].grad;
  });
}

template <typename T>
Var Graph<T>::gather_rows(Var x, std::vector<int> idx) {
  const auto& X = value(x);
  Mat<T> out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= X.rows()) throw ValidationError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
  }
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(x), [this, x, idx = std::move(idx), out_id] {
    const auto& dy = nodes_[out_id].grad;
    auto& dx = g(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += dy.row(static_cast<Eigen::Index>(i));
  });
}

template <typename T>
Var Graph<T>::broadcast_rows(Var row, Eigen::Index n) {
  if (rows(row) != 1) throw ValidationError("broadcast_rows: expected a single row");
  Mat<T> out = value(row).replicate(n, 1);
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(row), [this, row, out_id] {
    g(row.id).row(0) += nodes_[out_id].grad.colwise().sum();
  });
}

template <typename T>
Var Graph<T>::replace_rows(Var x, Var row, std::vector<char> flags) {
  const auto& X = value(x);
  if (rows(row) != 1 || cols(row) != X.cols()) throw ValidationError("replace_rows: bad row");
  if (static_cast<Eigen::Index>(flags.size()) != X.rows()) {
    throw ValidationError("replace_rows: flag count mismatch");
  }
  Mat<T> out = X;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    if (flags[i]) out.row(i) = value(row).row(0);
  }
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(x) || needs(row),
              [this, x, row, flags = std::move(flags), out_id] {
                const auto& dy = nodes_[out_id].grad;
                const bool nx = needs(x), nr = needs(row);
                for (Eigen::Index i = 0; i < dy.rows(); ++i) {
                  if (flags[i]) {
                    if (nr) g(row.id).row(0) += dy.row(i);
                  } else if (nx) {
                    g(x.id).row(i) += dy.row(i);
                  }
                }
              });
}

template <typename T>
Var Graph<T>::modulate(Var x, Var shift, Var scl) {
  check_same_shape(value(x), value(shift), "modulate");
  check_same_shape(value(x), value(scl), "modulate");
  Mat<T> out = (value(x).array() * (T(1) + value(scl).array()) + value(shift).array()).matrix();
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(x) || needs(shift) || needs(scl),
              [this, x, shift, scl, out_id] {
                const auto& dy = nodes_[out_id].grad;
                if (needs(x)) g(x.id).array() += dy.array() * (T(1) + value(scl).array());
                if (needs(scl)) g(scl.id).array() += dy.array() * value(x).array();
                if (needs(shift)) g(shift.id) += dy;
              });
}

template <typename T>
Var Graph<T>::squared_error(Var pred, Mat<T> target, int col_begin, int col_end) {
  const auto& P = value(pred);
  check_same_shape(P, target, "squared_error");
  if (P.rows() == 0) throw ValidationError("squared_error: empty batch");
  const int w = col_end - col_begin;
  const T inv_rows = T(1) / static_cast<T>(P.rows());
  Mat<T> diff = P.middleCols(col_begin, w) - target.middleCols(col_begin, w);
  Mat<T> out(1, 1);
  out(0, 0) = diff.squaredNorm() * inv_rows;
  auto saved = std::make_shared<Mat<T>>(std::move(diff));
  const int out_id = static_cast<int>(nodes_.size());
  return push(std::move(out), needs(pred), [this, pred, saved, col_begin, w, inv_rows, out_id] {
    const T up = nodes_[out_id].grad(0, 0);
    g(pred.id).middleCols(col_begin, w) += (*saved) * (T(2) * inv_rows * up);
  });
}

template <typename T>
void Graph<T>::backward(Var root) {
  if (!grad_enabled_) throw ValidationError("backward on a graph without gradients");
  auto& r = nodes_[root.id];
  r.grad = Mat<T>::Ones(r.value.rows(), r.value.cols());
  for (int i = root.id; i >= 0; --i) {
    auto& n = nodes_[i];
    if (n.needs_grad && n.back && n.grad.size() != 0) n.back();
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr || n.grad.size() == 0) continue;
    auto& pg = n.param->grad;
    if (pg.size() == 0) {
      pg = n.grad;
    } else {
      pg += n.grad;
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace timar::nn
