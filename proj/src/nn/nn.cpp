#include "nn/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace nn {

namespace {
using EMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}

Tensor& ParamStore::create(const std::string& name, int rows, int cols) {
  if (index_.count(name))
    throw std::invalid_argument("params: duplicate name '" + name + "'");
  if (rows <= 0 || cols <= 0)
    throw std::invalid_argument("params: bad shape for '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(name, Tensor(rows, cols));
  return entries_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::out_of_range("params: no parameter named '" + name + "'");
  return entries_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::out_of_range("params: no parameter named '" + name + "'");
  return entries_[it->second].second;
}

std::vector<Tensor*> ParamStore::tensors() {
  std::vector<Tensor*> out;
  out.reserve(entries_.size());
  for (auto& [name, t] : entries_) out.push_back(&t);
  return out;
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

numerics::Checkpoint ParamStore::to_checkpoint() const {
  numerics::Checkpoint ck;
  for (const auto& [name, t] : entries_) ck.add(name, t);
  return ck;
}

void ParamStore::load(const numerics::Checkpoint& ckpt) {
  if (ckpt.tensors.size() != entries_.size())
    throw std::runtime_error("params: checkpoint holds " +
                             std::to_string(ckpt.tensors.size()) +
                             " tensors, model needs " +
                             std::to_string(entries_.size()));
  for (auto& [name, t] : entries_) {
    const Tensor& src = ckpt.get(name);
    if (!src.same_shape(t))
      throw std::runtime_error("params: shape mismatch for '" + name + "': " +
                               src.shape_str() + " vs " + t.shape_str());
    t = src;
  }
}

NodeId BoundParams::operator()(const std::string& name) const {
  auto it = by_name.find(name);
  if (it == by_name.end())
    throw std::out_of_range("params: no bound parameter named '" + name + "'");
  return it->second;
}

BoundParams bind(Graph& g, const ParamStore& store) {
  BoundParams b;
  for (const auto& [name, t] : store.entries()) {
    NodeId id = g.param(t);
    b.ids.push_back(id);
    b.by_name[name] = id;
  }
  return b;
}

std::vector<Tensor> collect_grads(const Graph& g, const BoundParams& bound,
                                  const ParamStore& store) {
  std::vector<Tensor> grads;
  grads.reserve(bound.ids.size());
  for (size_t i = 0; i < bound.ids.size(); ++i) {
    NodeId id = bound.ids[i];
    if (g.has_grad(id)) {
      grads.push_back(g.grad(id));
    } else {
      const Tensor& p = store.entries()[i].second;
      grads.emplace_back(p.rows(), p.cols());
    }
  }
  return grads;
}

void adam_update(numerics::Adam& opt, ParamStore& store, const Graph& g,
                 const BoundParams& bound) {
  opt.step(store.tensors(), collect_grads(g, bound, store));
}

NodeId linear(Graph& g, NodeId x, NodeId w, NodeId b) {
  return g.add_rowvec(g.matmul(x, w), b);
}

StepState lstm_step(Graph& g, NodeId x, StepState prev, NodeId w, NodeId b,
                    int hidden) {
  std::vector<NodeId> xh{x, prev.h};
  NodeId z = linear(g, g.concat_cols(xh), w, b);
  NodeId i = g.sigmoid(g.slice_cols(z, 0, hidden));
  NodeId f = g.sigmoid(g.slice_cols(z, hidden, 2 * hidden));
  NodeId cin = g.tanh(g.slice_cols(z, 2 * hidden, 3 * hidden));
  NodeId o = g.sigmoid(g.slice_cols(z, 3 * hidden, 4 * hidden));
  NodeId c = g.add(g.mul(f, prev.c), g.mul(i, cin));
  NodeId h = g.mul(o, g.tanh(c));
  return {h, c};
}

StepState lstm_step_masked(Graph& g, NodeId x, StepState prev, NodeId w, NodeId b,
                           int hidden, NodeId mask) {
  StepState next = lstm_step(g, x, prev, w, b, hidden);
  NodeId h = g.add(prev.h, g.mul_colvec(g.sub(next.h, prev.h), mask));
  NodeId c = g.add(prev.c, g.mul_colvec(g.sub(next.c, prev.c), mask));
  return {h, c};
}

void init_linear(common::Rng& rng, Tensor& w, Tensor& b) {
  double limit = std::sqrt(6.0 / (w.rows() + w.cols()));
  for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
  b.fill(0.0);
}

void init_lstm(common::Rng& rng, Tensor& w, Tensor& b, int hidden) {
  if (w.cols() != 4 * hidden || b.cols() != 4 * hidden || b.rows() != 1)
    throw std::invalid_argument("init_lstm: shapes do not match hidden size");
  double limit = std::sqrt(6.0 / (w.rows() + w.cols()));
  for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
  b.fill(0.0);
  for (int j = hidden; j < 2 * hidden; ++j) b.at(0, j) = 1.0;  // forget gate open
}

double sigmoid(double x) { return 0.5 * (std::tanh(x * 0.5) + 1.0); }

void linear_apply(const Tensor& w, const Tensor& b, std::span<const double> x,
                  std::span<double> out) {
  if (static_cast<int>(x.size()) != w.rows() ||
      static_cast<int>(out.size()) != w.cols())
    throw std::invalid_argument("linear_apply: size mismatch");
  Eigen::Map<const EMat> wm(w.data(), w.rows(), w.cols());
  Eigen::Map<const EMat> xm(x.data(), 1, static_cast<int>(x.size()));
  Eigen::Map<EMat> om(out.data(), 1, static_cast<int>(out.size()));
  om.noalias() = xm * wm;
  om += Eigen::Map<const EMat>(b.data(), 1, b.cols());
}

void lstm_cell_step(const Tensor& w, const Tensor& b, std::span<const double> x,
                    std::span<double> h, std::span<double> c) {
  int hidden = static_cast<int>(h.size());
  int in = static_cast<int>(x.size());
  if (w.rows() != in + hidden || w.cols() != 4 * hidden ||
      static_cast<int>(c.size()) != hidden)
    throw std::invalid_argument("lstm_cell_step: size mismatch");
  std::vector<double> xh(in + hidden);
  std::copy(x.begin(), x.end(), xh.begin());
  std::copy(h.begin(), h.end(), xh.begin() + in);
  std::vector<double> z(4 * hidden);
  linear_apply(w, b, xh, z);
  for (int k = 0; k < hidden; ++k) {
    double ig = sigmoid(z[k]);
    double fg = sigmoid(z[hidden + k]);
    double cin = std::tanh(z[2 * hidden + k]);
    double og = sigmoid(z[3 * hidden + k]);
    c[k] = fg * c[k] + ig * cin;
    h[k] = og * std::tanh(c[k]);
  }
}

}  // namespace nn
