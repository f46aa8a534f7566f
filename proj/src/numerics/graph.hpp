#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "numerics/tensor.hpp"

namespace numerics {

class Graph;
using NodeId = int;

/// One differentiable operation. `compute` fills the node's value from its
/// input values; `backprop` accumulates into the input gradients given the
/// node's value and gradient.
class Op {
 public:
  virtual ~Op() = default;
  virtual const char* name() const = 0;
  virtual void compute(Graph& g, NodeId self, Tensor& out) = 0;
  virtual void backprop(Graph& g, NodeId self) = 0;
};

/// Reverse-mode tape. Nodes are appended in topological order and evaluated
/// eagerly; `forward()` re-evaluates the whole tape (after leaf values were
/// rebound with `set_value`), `backward(loss)` runs the chain rule from a
/// scalar loss. Values are checked for NaN/Inf after every operation.
class Graph {
 public:
  NodeId constant(Tensor v);
  NodeId param(Tensor v);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const;
  /// True when the last backward() accumulated into this node.
  bool has_grad(NodeId id) const { return nodes_[id].grad_live; }
  bool is_param(NodeId id) const { return nodes_[id].is_param; }

  /// Rebinds a leaf's value. Shape must match the existing value.
  void set_value(NodeId id, Tensor v);

  // Binary elementwise (shapes must match).
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  // Broadcasting helpers.
  NodeId add_rowvec(NodeId a, NodeId v);    // [m,n] + [1,n]
  NodeId mul_colvec(NodeId a, NodeId u);    // [m,n] * [m,1]
  NodeId broadcast_col(NodeId u, int cols); // [m,1] -> [m,cols]
  NodeId broadcast_row(NodeId v, int rows); // [1,n] -> [rows,n]
  // Scalar-constant arithmetic.
  NodeId scale(NodeId a, double c);
  NodeId add_scalar(NodeId a, double c);
  // Unary elementwise.
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId softplus(NodeId a);
  // Matrix product and row-wise reductions.
  NodeId matmul(NodeId a, NodeId b);
  NodeId softmax_rows(NodeId a);
  NodeId log_softmax_rows(NodeId a);
  NodeId logsumexp_rows(NodeId a);  // [m,n] -> [m,1]
  NodeId row_sum(NodeId a);         // [m,n] -> [m,1]
  NodeId sum(NodeId a);             // -> [1,1]
  NodeId mean(NodeId a);            // -> [1,1]
  // Structure.
  NodeId concat_cols(std::span<const NodeId> parts);
  NodeId concat_rows(std::span<const NodeId> parts);
  NodeId slice_cols(NodeId a, int begin, int end);
  NodeId slice_rows(NodeId a, int begin, int end);
  NodeId slice_rows_strided(NodeId a, int start, int stride, int count);
  /// Gathers groups of `group` source rows (index -1 reads zeros) and
  /// concatenates each group into one output row. Serves both embedding
  /// lookup (group=1) and 1-d convolution im2col.
  NodeId gather_concat_rows(NodeId a, std::vector<int> indices, int group);
  /// out[b,:] = sum_m w[b,m] * rows[b*M+m,:]  with w [B,M], rows [B*M,d].
  NodeId weighted_block_sum(NodeId w, NodeId rows);

  /// Appends a node with a caller-provided op (extension point; CTC uses it).
  NodeId add_custom(std::unique_ptr<Op> op, std::vector<NodeId> inputs);

  /// Re-evaluates every non-leaf node in topological order.
  void forward();
  /// Runs reverse-mode accumulation from a scalar loss node. Returns the
  /// loss value. Gradients of previous calls are cleared first.
  double backward(NodeId loss);

  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // --- access for Op implementations ---
  const Tensor& in_value(NodeId self, int k) const {
    return nodes_[nodes_[self].inputs[k]].value;
  }
  /// Gradient buffer of input k, or nullptr when that input needs no grad.
  Tensor* in_grad(NodeId self, int k);
  const Tensor& node_grad(NodeId id) const { return nodes_[id].grad; }
  int num_inputs(NodeId self) const {
    return static_cast<int>(nodes_[self].inputs.size());
  }

 private:
  struct Node {
    std::unique_ptr<Op> op;  // null for leaves
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_param = false;
    bool grad_live = false;  // grad buffer holds accumulated values
  };

  NodeId add_node(std::unique_ptr<Op> op, std::vector<NodeId> inputs);
  Tensor* grad_buffer(NodeId id);

  std::vector<Node> nodes_;
};

/// Sets leaf values, re-runs the tape, and backpropagates from `loss`.
/// Returns the loss value and the gradient of every node in `params`,
/// in order.
struct ForwardBackwardResult {
  double loss = 0.0;
  std::vector<Tensor> param_grads;
};
ForwardBackwardResult forward_backward(
    Graph& g, const std::vector<std::pair<NodeId, Tensor>>& inputs,
    NodeId loss, std::span<const NodeId> params);

/// Max relative error between an analytic gradient and central finite
/// differences of `f` at `point`, with denominator max(|a|,|b|,1e-8).
double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> point,
                  std::span<const double> analytic_grad, double eps);

}  // namespace numerics
