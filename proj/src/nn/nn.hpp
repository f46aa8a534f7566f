#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "common/rng.hpp"
#include "numerics/adam.hpp"
#include "numerics/checkpoint.hpp"
#include "numerics/graph.hpp"

namespace nn {

using numerics::Graph;
using numerics::NodeId;
using numerics::Tensor;

/// Named parameter tensors in a stable insertion order; the order defines
/// the optimizer state layout and the checkpoint layout.
class ParamStore {
 public:
  Tensor& create(const std::string& name, int rows, int cols);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  std::vector<Tensor*> tensors();
  int64_t total_size() const;

  numerics::Checkpoint to_checkpoint() const;
  /// Copies values from a checkpoint; the name sets and shapes must match.
  void load(const numerics::Checkpoint& ckpt);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

/// Graph leaves for every parameter in a store, bound per training step.
struct BoundParams {
  std::vector<NodeId> ids;  // store order
  std::unordered_map<std::string, NodeId> by_name;
  NodeId operator()(const std::string& name) const;
};

BoundParams bind(Graph& g, const ParamStore& store);

/// Gradients in store order; parameters the loss never touched get zeros.
std::vector<Tensor> collect_grads(const Graph& g, const BoundParams& bound,
                                  const ParamStore& store);

void adam_update(numerics::Adam& opt, ParamStore& store, const Graph& g,
                 const BoundParams& bound);

// --- graph builders ---

/// x·w + b with x [B,in], w [in,out], b [1,out].
NodeId linear(Graph& g, NodeId x, NodeId w, NodeId b);

struct StepState {
  NodeId h;
  NodeId c;
};

/// One LSTM step. x [B,in], state tensors [B,hidden], w [(in+hidden),4*hidden]
/// with gate blocks ordered (input, forget, cell, output), b [1,4*hidden].
StepState lstm_step(Graph& g, NodeId x, StepState prev, NodeId w, NodeId b,
                    int hidden);

/// Same, but rows where mask [B,1] is 0 keep the previous state.
StepState lstm_step_masked(Graph& g, NodeId x, StepState prev, NodeId w, NodeId b,
                           int hidden, NodeId mask);

// --- initialization (all deterministic under the given rng) ---

/// Uniform(-limit, limit) with limit = sqrt(6/(fan_in+fan_out)); bias zero.
void init_linear(common::Rng& rng, Tensor& w, Tensor& b);
/// Linear init for the packed gate matrix, then forget-gate bias set to 1.
void init_lstm(common::Rng& rng, Tensor& w, Tensor& b, int hidden);

// --- plain-math inference (no graph; matches the builders bit for bit) ---

double sigmoid(double x);

/// out = x·w + b for a single row x.
void linear_apply(const Tensor& w, const Tensor& b, std::span<const double> x,
                  std::span<double> out);

/// In-place LSTM cell update for a single row; h and c have size `hidden`.
void lstm_cell_step(const Tensor& w, const Tensor& b, std::span<const double> x,
                    std::span<double> h, std::span<double> c);

}  // namespace nn
