#pragma once

#include <span>
#include <utility>
#include <vector>

#include "common/rng.hpp"
#include "numerics/graph.hpp"

namespace mdn {

/// Unactivated network outputs for one step: J bivariate Gaussian components
/// plus one pen logit.
struct RawMixture {
  std::vector<double> w_hat;    // weight logits
  std::vector<double> mu_x, mu_y;
  std::vector<double> s_hat_x, s_hat_y;  // log stds
  std::vector<double> r_hat;    // correlation logits
  double e_hat = 0.0;           // pen logit

  int components() const { return static_cast<int>(w_hat.size()); }
};

struct MixtureParams {
  std::vector<double> w;        // probability simplex
  std::vector<double> mu_x, mu_y;
  std::vector<double> sigma_x, sigma_y;
  std::vector<double> rho;      // in (-1,1)
  double e = 0.5;               // pen-down probability

  int components() const { return static_cast<int>(w.size()); }
};

/// Biased activation: w = softmax((1+b)·ŵ), σ = exp(ŝ−b), ρ = tanh(r̂),
/// e = sigmoid(ê). The pen Bernoulli is never sharpened by the bias.
/// b = 0 is the training-time activation.
MixtureParams activate(const RawMixture& raw, double bias);

/// (position_nll, pen_nll) of a target move under b=0-style params, with the
/// mixture evaluated in log space.
std::pair<double, double> nll(const MixtureParams& params, double dx, double dy,
                              int pen_down);

struct SampledMove {
  double dx = 0.0;
  double dy = 0.0;
  int pen_down = 0;
};

SampledMove sample(const MixtureParams& params, common::Rng& rng);

/// Row layout of raw outputs: [ŵ_1..J | μx_1..J | μy_1..J | ŝx_1..J |
/// ŝy_1..J | r̂_1..J | ê], width 6J+1.
RawMixture unpack_raw(std::span<const double> row, int components);
std::vector<double> pack_raw(const RawMixture& raw);

struct GraphNll {
  numerics::NodeId position;  // [B,1]
  numerics::NodeId pen;       // [B,1]
};

/// Differentiable per-row NLL of targets (dx, dy, u), each [B,1], under the
/// unbiased activation of raw rows [B,6J+1]. Matches nll(activate(raw, 0), ·).
GraphNll nll_graph(numerics::Graph& g, numerics::NodeId raw, int components,
                   numerics::NodeId dx, numerics::NodeId dy, numerics::NodeId u);

}  // namespace mdn
