#pragma once

#include <span>
#include <string>
#include <vector>

#include "ink/ink.hpp"
#include "numerics/graph.hpp"
#include "numerics/tensor.hpp"

namespace ctc {

/// Lattices are [T', Q+1] log-probability tensors whose rows logsumexp to 0;
/// the blank symbol is the last column (index Q).

/// Minimum number of frames that can align to the label:
/// L plus the number of adjacent repeated labels.
int min_feasible_frames(std::span<const int> label);

struct LossResult {
  double loss = 0.0;
  numerics::Tensor grad;  // d loss / d log_probs, same shape as the lattice
};

/// -log p(label | lattice) via the log-space forward recursion over the
/// blank-extended sequence; the gradient comes from the backward recursion.
/// Throws when T' is below the feasible minimum.
LossResult loss_with_grad(const numerics::Tensor& log_probs,
                          std::span<const int> label, bool want_grad);

/// Fused differentiable loss node; `log_probs` must hold row-normalized
/// log-probabilities (the invariant is checked).
numerics::NodeId loss_node(numerics::Graph& g, numerics::NodeId log_probs,
                           std::vector<int> label);

/// Per-step argmax, collapse adjacent repeats, drop blanks.
std::string greedy_decode(const numerics::Tensor& log_probs,
                          const ink::Alphabet& alphabet);

/// Prefix beam search over label prefixes, marginalizing alignments.
/// Deterministic: ties break toward the lexicographically smaller prefix.
std::string beam_decode(const numerics::Tensor& log_probs,
                        const ink::Alphabet& alphabet, int width);

}  // namespace ctc
