#include "mdn/mdn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mdn {

namespace {

void check_raw(const RawMixture& raw) {
  size_t j = raw.w_hat.size();
  if (j < 1) throw std::invalid_argument("mdn: need at least one component");
  if (raw.mu_x.size() != j || raw.mu_y.size() != j || raw.s_hat_x.size() != j ||
      raw.s_hat_y.size() != j || raw.r_hat.size() != j)
    throw std::invalid_argument("mdn: component array sizes disagree");
  auto finite = [](std::span<const double> v) {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  if (!finite(raw.w_hat) || !finite(raw.mu_x) || !finite(raw.mu_y) ||
      !finite(raw.s_hat_x) || !finite(raw.s_hat_y) || !finite(raw.r_hat) ||
      !std::isfinite(raw.e_hat))
    throw std::invalid_argument("mdn: non-finite raw parameter");
}

void check_params(const MixtureParams& p) {
  int j = p.components();
  if (j < 1) throw std::invalid_argument("mdn: need at least one component");
  double wsum = 0.0;
  for (double w : p.w) {
    if (!(w >= 0.0)) throw std::invalid_argument("mdn: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-12)
    throw std::invalid_argument("mdn: weights do not sum to 1");
  for (int k = 0; k < j; ++k) {
    if (!(p.sigma_x[k] > 0.0) || !(p.sigma_y[k] > 0.0))
      throw std::invalid_argument("mdn: non-positive sigma");
    if (!(std::abs(p.rho[k]) < 1.0))
      throw std::invalid_argument("mdn: |rho| must be < 1");
  }
  if (!(p.e > 0.0 && p.e < 1.0))
    throw std::invalid_argument("mdn: pen probability must be in (0,1)");
}

double sigmoid(double x) { return 0.5 * (std::tanh(0.5 * x) + 1.0); }

}  // namespace

MixtureParams activate(const RawMixture& raw, double bias) {
  check_raw(raw);
  if (bias < 0.0)
    throw std::invalid_argument("mdn: sampling bias must be >= 0, got " +
                                std::to_string(bias));
  int j = raw.components();
  MixtureParams p;
  p.w.resize(j);
  double mx = -INFINITY;
  for (int k = 0; k < j; ++k) mx = std::max(mx, (1.0 + bias) * raw.w_hat[k]);
  double z = 0.0;
  for (int k = 0; k < j; ++k) {
    p.w[k] = std::exp((1.0 + bias) * raw.w_hat[k] - mx);
    z += p.w[k];
  }
  for (int k = 0; k < j; ++k) p.w[k] /= z;
  p.mu_x = raw.mu_x;
  p.mu_y = raw.mu_y;
  p.sigma_x.resize(j);
  p.sigma_y.resize(j);
  p.rho.resize(j);
  for (int k = 0; k < j; ++k) {
    p.sigma_x[k] = std::exp(raw.s_hat_x[k] - bias);
    p.sigma_y[k] = std::exp(raw.s_hat_y[k] - bias);
    p.rho[k] = std::tanh(raw.r_hat[k]);
  }
  p.e = sigmoid(raw.e_hat);
  return p;
}

std::pair<double, double> nll(const MixtureParams& params, double dx, double dy,
                              int pen_down) {
  check_params(params);
  if (pen_down != 0 && pen_down != 1)
    throw std::invalid_argument("mdn: pen flag must be 0/1");
  int j = params.components();
  double best = -INFINITY;
  std::vector<double> lg(j);
  for (int k = 0; k < j; ++k) {
    double sx = params.sigma_x[k], sy = params.sigma_y[k], rho = params.rho[k];
    double zx = (dx - params.mu_x[k]) / sx;
    double zy = (dy - params.mu_y[k]) / sy;
    double one_m_r2 = 1.0 - rho * rho;
    double quad = (zx * zx - 2.0 * rho * zx * zy + zy * zy) / (2.0 * one_m_r2);
    lg[k] = std::log(params.w[k]) - std::log(2.0 * std::numbers::pi) -
            std::log(sx) - std::log(sy) - 0.5 * std::log(one_m_r2) - quad;
    best = std::max(best, lg[k]);
  }
  double acc = 0.0;
  for (int k = 0; k < j; ++k) acc += std::exp(lg[k] - best);
  double position_nll = -(best + std::log(acc));
  double pen_nll =
      pen_down == 1 ? -std::log(params.e) : -std::log(1.0 - params.e);
  return {position_nll, pen_nll};
}

SampledMove sample(const MixtureParams& params, common::Rng& rng) {
  check_params(params);
  int k = static_cast<int>(rng.categorical(params.w));
  double z1 = rng.normal();
  double z2 = rng.normal();
  double sx = params.sigma_x[k], sy = params.sigma_y[k], rho = params.rho[k];
  SampledMove mv;
  // Cholesky factor of [[sx^2, rho sx sy], [rho sx sy, sy^2]].
  mv.dx = params.mu_x[k] + sx * z1;
  mv.dy = params.mu_y[k] + sy * (rho * z1 + std::sqrt(1.0 - rho * rho) * z2);
  mv.pen_down = rng.bernoulli(params.e) ? 1 : 0;
  return mv;
}

RawMixture unpack_raw(std::span<const double> row, int components) {
  if (components < 1) throw std::invalid_argument("mdn: need at least one component");
  if (static_cast<int>(row.size()) != 6 * components + 1)
    throw std::invalid_argument("mdn: raw row has size " +
                                std::to_string(row.size()) + ", want " +
                                std::to_string(6 * components + 1));
  RawMixture raw;
  auto block = [&](int b) {
    return std::vector<double>(row.begin() + b * components,
                               row.begin() + (b + 1) * components);
  };
  raw.w_hat = block(0);
  raw.mu_x = block(1);
  raw.mu_y = block(2);
  raw.s_hat_x = block(3);
  raw.s_hat_y = block(4);
  raw.r_hat = block(5);
  raw.e_hat = row[6 * components];
  return raw;
}

std::vector<double> pack_raw(const RawMixture& raw) {
  check_raw(raw);
  std::vector<double> row;
  row.reserve(6 * raw.components() + 1);
  for (const auto* block :
       {&raw.w_hat, &raw.mu_x, &raw.mu_y, &raw.s_hat_x, &raw.s_hat_y, &raw.r_hat})
    row.insert(row.end(), block->begin(), block->end());
  row.push_back(raw.e_hat);
  return row;
}

GraphNll nll_graph(numerics::Graph& g, numerics::NodeId raw, int components,
                   numerics::NodeId dx, numerics::NodeId dy, numerics::NodeId u) {
  using numerics::NodeId;
  const int J = components;
  NodeId wlog = g.log_softmax_rows(g.slice_cols(raw, 0, J));
  NodeId mux = g.slice_cols(raw, J, 2 * J);
  NodeId muy = g.slice_cols(raw, 2 * J, 3 * J);
  NodeId sx_hat = g.slice_cols(raw, 3 * J, 4 * J);
  NodeId sy_hat = g.slice_cols(raw, 4 * J, 5 * J);
  NodeId r_hat = g.slice_cols(raw, 5 * J, 6 * J);
  NodeId e_hat = g.slice_cols(raw, 6 * J, 6 * J + 1);

  NodeId zx = g.mul(g.sub(g.broadcast_col(dx, J), mux), g.exp(g.scale(sx_hat, -1.0)));
  NodeId zy = g.mul(g.sub(g.broadcast_col(dy, J), muy), g.exp(g.scale(sy_hat, -1.0)));
  NodeId rho = g.tanh(r_hat);
  NodeId quad = g.add(g.sub(g.mul(zx, zx), g.scale(g.mul(rho, g.mul(zx, zy)), 2.0)),
                      g.mul(zy, zy));
  // log(1-rho^2) = log 4 + 2 r_hat - 2 softplus(2 r_hat), exact at saturation.
  NodeId log1mr2 = g.add_scalar(
      g.sub(g.scale(r_hat, 2.0), g.scale(g.softplus(g.scale(r_hat, 2.0)), 2.0)),
      std::log(4.0));
  NodeId inv1mr2 = g.exp(g.scale(log1mr2, -1.0));
  NodeId log_n = g.sub(
      g.sub(g.add_scalar(g.scale(g.add(sx_hat, sy_hat), -1.0),
                         -std::log(2.0 * std::numbers::pi)),
            g.scale(log1mr2, 0.5)),
      g.scale(g.mul(quad, inv1mr2), 0.5));
  NodeId position = g.scale(g.logsumexp_rows(g.add(wlog, log_n)), -1.0);
  // -log Bernoulli(u | sigmoid(e_hat)) = softplus(e_hat) - u*e_hat.
  NodeId pen = g.sub(g.softplus(e_hat), g.mul(u, e_hat));
  return {position, pen};
}

}  // namespace mdn
