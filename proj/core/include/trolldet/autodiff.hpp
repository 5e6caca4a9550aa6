#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Graph records every operation eagerly (values are computed on
// construction) together with a closure that propagates the output
// gradient to its inputs. Leaf parameters accumulate into
// Parameter::grad when the graph is run backwards.

#include <trolldet/common.hpp>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace trolldet {

/// A named, trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Graph& graph() const { return *graph_; }
  std::size_t index() const { return index_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t i) : graph_(g), index_(i) {}

  Graph* graph_ = nullptr;
  std::size_t index_ = 0;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t)>;

  Graph() { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// A value that never receives a gradient.
  Var constant(Mat value);
  /// Binds a parameter; gradients flow into p.grad iff p.trainable.
  Var param(Parameter& p);
  /// Read-only binding: always a constant.
  Var param(const Parameter& p) { return constant(p.value); }
  /// An empty differentiable leaf. Operations that write gradients into
  /// parameters directly use it to mark their output as differentiable.
  Var marker();

  /// Propagates d(root)/d(.) scaled by seed. root must be 1x1.
  void backward(Var root, double seed = 1.0);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  const Mat& value(std::size_t i) const { return nodes_[i].value; }
  const Mat& grad(std::size_t i) const { return nodes_[i].grad; }
  bool needs_grad(std::size_t i) const { return nodes_[i].needs_grad; }

  /// Adds delta into node i's gradient, allocating it on first use.
  void accumulate(std::size_t i, const Mat& delta);
  template <typename Expr>
  void accumulate_expr(std::size_t i, const Expr& delta) {
    Node& n = nodes_[i];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    n.grad += delta;
  }
  Mat& grad_buffer(std::size_t i);

  /// Records an operation. needs_grad is inferred from the inputs.
  Var push(Mat value, std::initializer_list<Var> inputs, Backward back);
  Var push(Mat value, std::span<const Var> inputs, Backward back);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Backward back;
  };

  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return graph_->value(index_); }
inline const Mat& Var::grad() const { return graph_->grad(index_); }

/// Differentiable operations. All operands must belong to the same graph.
namespace ad {

/// x W^T (+ b broadcast over rows). x: n x in, W: out x in, b: 1 x out.
Var linear(Var x, Var w);
Var linear(Var x, Var w, Var b);
Var matmul(Var a, Var b);
/// a b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var one_minus(Var a);
/// s is 1x1; returns s * a.
Var scalar_mul(Var s, Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
/// Row-wise softmax over columns [0, valid_cols); remaining columns get 0.
Var masked_softmax_rows(Var scores, Eigen::Index valid_cols);
/// Row-wise layer normalisation with population variance.
Var layer_norm_rows(Var x, Var gain, Var bias, double eps);
/// Mean over the first count rows, as a 1 x cols row.
Var mean_rows(Var x, Eigen::Index count);
/// Columnwise max over the first count rows, as a 1 x cols row.
Var max_rows(Var x, Eigen::Index count);
/// Sliding windows of k consecutive rows flattened into one row each.
/// Rows at index >= valid_rows read as zero. Produces
/// max(1, valid_rows - k + 1) windows of width k * cols.
Var unfold(Var x, Eigen::Index k, Eigen::Index valid_rows);
/// Looks up table rows for ids[0..valid); remaining rows are zero. The
/// table gradient is accumulated directly into the parameter.
Var gather_rows(Graph& g, Parameter& table, std::span<const TokenId> ids, Eigen::Index valid);
Var gather_rows(Graph& g, const Parameter& table, std::span<const TokenId> ids, Eigen::Index valid);
/// Sum of all entries as 1x1.
Var sum(Var a);
/// Binary cross-entropy on a 1x1 probability clamped to [eps, 1 - eps].
Var bce(Var p, int label, double eps);
/// -log softmax(logits)[target] for a 1 x V logit row.
Var softmax_cross_entropy(Var logits, Eigen::Index target);
/// Sum over rows r of -log softmax(logits.row(r))[targets[r]].
Var softmax_cross_entropy(Var logits, std::span<const Eigen::Index> targets);

}  // namespace ad
}  // namespace trolldet
