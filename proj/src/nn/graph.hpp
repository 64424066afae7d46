// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/types.hpp"
#include "nn/params.hpp"

#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

namespace timar::nn {

/// Handle to a node of a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Per-row count of visible keys: row q attends to keys [0, limit[q]).
/// Turn-level causal masks are always of this prefix form.
using KeyLimits = std::shared_ptr<const std::vector<int>>;

/// Reverse-mode automatic differentiation over row-major matrices.
///
/// Every op appends one node holding its value and, when gradients are
/// enabled and any input requires them, a closure that propagates the
/// node's gradient to its inputs. Parameters enter through param(); after
/// backward() their gradients are accumulated into Parameter::grad.
template <typename T>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// When positive, linear() multiplies in independent slabs of this many
  /// rows, so a row's value depends only on its slab and not on how many
  /// rows follow it (GEMM kernels treat trailing partial panels
  /// differently). Zero disables slabbing.
  void set_row_block(Eigen::Index rows) { row_block_ = rows; }
  Eigen::Index row_block() const { return row_block_; }

  Var constant(Mat<T> value);
  /// An input whose gradient is kept (see grad()).
  Var leaf(Mat<T> value);
  /// The same Parameter always maps to the same node within a graph.
  Var param(Parameter<T>& p);

  const Mat<T>& value(Var v) const { return nodes_[v.id].value; }
  /// Empty when no gradient reached the node.
  const Mat<T>& grad(Var v) const { return nodes_[v.id].grad; }
  Eigen::Index rows(Var v) const { return value(v).rows(); }
  Eigen::Index cols(Var v) const { return value(v).cols(); }

  Var matmul(Var a, Var b);
  /// x [n, in] * w [in, out] + b [1, out]; `b` may be invalid.
  Var linear(Var x, Var w, Var b);
  Var add(Var a, Var b);
  /// a [n, d] + row [1, d] broadcast over rows.
  Var add_row(Var a, Var row);
  Var mul(Var a, Var b);
  Var scale(Var a, T s);
  Var relu(Var a);
  /// tanh approximation.
  Var gelu(Var a);
  Var silu(Var a);
  /// Row-wise layer norm; gain and bias ([1, d]) are optional.
  Var layer_norm(Var x, Var gain, Var bias, T eps);
  /// Multi-head scaled dot-product attention over [L, d] inputs.
  /// A null `limits` lets every row see every key.
  Var attention(Var q, Var k, Var v, int heads, const KeyLimits& limits);
  Var concat_rows(std::span<const Var> parts);
  Var slice_rows(Var x, Eigen::Index begin, Eigen::Index count);
  Var slice_cols(Var x, Eigen::Index begin, Eigen::Index count);
  Var gather_rows(Var x, std::vector<int> rows);
  Var broadcast_rows(Var row, Eigen::Index n);
  /// Row i becomes `row` where flags[i] != 0, else x[i].
  Var replace_rows(Var x, Var row, std::vector<char> flags);
  /// x * (1 + scale) + shift, all [n, d].
  Var modulate(Var x, Var shift, Var scale);
  /// Scalar: mean over rows of the summed squared error on columns
  /// [col_begin, col_end).
  Var squared_error(Var pred, Mat<T> target, int col_begin, int col_end);

  /// Seeds d(root)/d(root) = 1 and propagates back through the graph.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    std::function<void()> back;
  };

  bool needs(Var v) const { return v.valid() && nodes_[v.id].needs_grad; }
  Var push(Mat<T> value, bool needs_grad, std::function<void()> back);
  /// Gradient buffer of node `id`, allocated as zeros on first use.
  Mat<T>& g(int id);

  bool grad_enabled_;
  Eigen::Index row_block_ = 0;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_nodes_;
};

}  // namespace timar::nn
