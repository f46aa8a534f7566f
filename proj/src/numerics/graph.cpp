#include "numerics/graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace numerics {
namespace {

using EMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

Map map(Tensor& t) { return Map(t.data(), t.rows(), t.cols()); }
CMap map(const Tensor& t) { return CMap(t.data(), t.rows(), t.cols()); }

[[noreturn]] void op_error(const char* op, const std::string& what) {
  throw std::invalid_argument(std::string(op) + ": " + what);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    op_error(op, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

void resize_to(Tensor& out, int rows, int cols) {
  if (out.rows() != rows || out.cols() != cols) out = Tensor(rows, cols);
}

double stable_softplus(double x) {
  // log(1+e^x) without overflow for large |x|.
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// --- elementwise binary ops -------------------------------------------------

struct AddOp final : Op {
  const char* name() const override { return "add"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    const Tensor& b = g.in_value(self, 1);
    require_same_shape(name(), a, b);
    resize_to(out, a.rows(), a.cols());
    map(out) = map(a) + map(b);
  }
  void backprop(Graph& g, NodeId self) override {
    const Tensor& gr = g.node_grad(self);
    if (Tensor* ga = g.in_grad(self, 0)) map(*ga) += map(gr);
    if (Tensor* gb = g.in_grad(self, 1)) map(*gb) += map(gr);
  }
};

struct SubOp final : Op {
  const char* name() const override { return "sub"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    const Tensor& b = g.in_value(self, 1);
    require_same_shape(name(), a, b);
    resize_to(out, a.rows(), a.cols());
    map(out) = map(a) - map(b);
  }
  void backprop(Graph& g, NodeId self) override {
    const Tensor& gr = g.node_grad(self);
    if (Tensor* ga = g.in_grad(self, 0)) map(*ga) += map(gr);
    if (Tensor* gb = g.in_grad(self, 1)) map(*gb) -= map(gr);
  }
};

struct MulOp final : Op {
  const char* name() const override { return "mul"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    const Tensor& b = g.in_value(self, 1);
    require_same_shape(name(), a, b);
    resize_to(out, a.rows(), a.cols());
    map(out) = map(a).cwiseProduct(map(b));
  }
  void backprop(Graph& g, NodeId self) override {
    const Tensor& gr = g.node_grad(self);
    if (Tensor* ga = g.in_grad(self, 0))
      map(*ga) += map(gr).cwiseProduct(map(g.in_value(self, 1)));
    if (Tensor* gb = g.in_grad(self, 1))
      map(*gb) += map(gr).cwiseProduct(map(g.in_value(self, 0)));
  }
};

struct DivOp final : Op {
  const char* name() const override { return "div"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    const Tensor& b = g.in_value(self, 1);
    require_same_shape(name(), a, b);
    resize_to(out, a.rows(), a.cols());
    map(out) = map(a).cwiseQuotient(map(b));
  }
  void backprop(Graph& g, NodeId self) override {
    const Tensor& gr = g.node_grad(self);
    const Tensor& b = g.in_value(self, 1);
    if (Tensor* ga = g.in_grad(self, 0))
      map(*ga) += map(gr).cwiseQuotient(map(b));
    if (Tensor* gb = g.in_grad(self, 1)) {
      const Tensor& q = g.value(self);  // a/b
      map(*gb) -= map(gr).cwiseProduct(map(q)).cwiseQuotient(map(b));
    }
  }
};

// --- broadcasting -----------------------------------------------------------

struct AddRowVecOp final : Op {
  const char* name() const override { return "add_rowvec"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    const Tensor& v = g.in_value(self, 1);
    if (v.rows() != 1 || v.cols() != a.cols())
      op_error(name(), "want [1," + std::to_string(a.cols()) + "] vector, got " +
                           v.shape_str());
    resize_to(out, a.rows(), a.cols());
    map(out) = map(a).rowwise() + map(v).row(0);
  }
  void backprop(Graph& g, NodeId self) override {
    const Tensor& gr = g.node_grad(self);
    if (Tensor* ga = g.in_grad(self, 0)) map(*ga) += map(gr);
    if (Tensor* gv = g.in_grad(self, 1))
      map(*gv).row(0) += map(gr).colwise().sum();
  }
};

struct MulColVecOp final : Op {
  const char* name() const override { return "mul_colvec"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    const Tensor& u = g.in_value(self, 1);
    if (u.cols() != 1 || u.rows() != a.rows())
      op_error(name(), "want [" + std::to_string(a.rows()) + ",1] vector, got " +
                           u.shape_str());
    resize_to(out, a.rows(), a.cols());
    map(out) = map(a).array().colwise() * map(u).col(0).array();
  }
  void backprop(Graph& g, NodeId self) override {
    const Tensor& gr = g.node_grad(self);
    const Tensor& a = g.in_value(self, 0);
    const Tensor& u = g.in_value(self, 1);
    if (Tensor* ga = g.in_grad(self, 0))
      map(*ga).array() += map(gr).array().colwise() * map(u).col(0).array();
    if (Tensor* gu = g.in_grad(self, 1))
      map(*gu).col(0) += map(gr).cwiseProduct(map(a)).rowwise().sum();
  }
};

struct BroadcastColOp final : Op {
  explicit BroadcastColOp(int cols) : cols_(cols) {}
  const char* name() const override { return "broadcast_col"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& u = g.in_value(self, 0);
    if (u.cols() != 1) op_error(name(), "input must be a column, got " + u.shape_str());
    resize_to(out, u.rows(), cols_);
    map(out) = map(u).col(0).replicate(1, cols_);
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* gu = g.in_grad(self, 0))
      map(*gu).col(0) += map(g.node_grad(self)).rowwise().sum();
  }
  int cols_;
};

struct BroadcastRowOp final : Op {
  explicit BroadcastRowOp(int rows) : rows_(rows) {}
  const char* name() const override { return "broadcast_row"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& v = g.in_value(self, 0);
    if (v.rows() != 1) op_error(name(), "input must be a row, got " + v.shape_str());
    resize_to(out, rows_, v.cols());
    map(out) = map(v).row(0).replicate(rows_, 1);
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* gv = g.in_grad(self, 0))
      map(*gv).row(0) += map(g.node_grad(self)).colwise().sum();
  }
  int rows_;
};

// --- scalar-constant arithmetic ----------------------------------------------

struct ScaleOp final : Op {
  explicit ScaleOp(double c) : c_(c) {}
  const char* name() const override { return "scale"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    resize_to(out, a.rows(), a.cols());
    map(out) = map(a) * c_;
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0))
      map(*ga) += map(g.node_grad(self)) * c_;
  }
  double c_;
};

struct AddScalarOp final : Op {
  explicit AddScalarOp(double c) : c_(c) {}
  const char* name() const override { return "add_scalar"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    resize_to(out, a.rows(), a.cols());
    map(out) = map(a).array() + c_;
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0)) map(*ga) += map(g.node_grad(self));
  }
  double c_;
};

// --- unary elementwise -------------------------------------------------------

struct TanhOp final : Op {
  const char* name() const override { return "tanh"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    resize_to(out, a.rows(), a.cols());
    map(out) = map(a).array().tanh();
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0)) {
      auto y = map(g.value(self)).array();
      map(*ga).array() += map(g.node_grad(self)).array() * (1.0 - y * y);
    }
  }
};

struct SigmoidOp final : Op {
  const char* name() const override { return "sigmoid"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    resize_to(out, a.rows(), a.cols());
    // 0.5*(tanh(x/2)+1) is stable at both tails.
    map(out) = 0.5 * ((map(a) * 0.5).array().tanh() + 1.0);
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0)) {
      auto y = map(g.value(self)).array();
      map(*ga).array() += map(g.node_grad(self)).array() * y * (1.0 - y);
    }
  }
};

struct ExpOp final : Op {
  const char* name() const override { return "exp"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    resize_to(out, a.rows(), a.cols());
    map(out) = map(a).array().exp();
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0))
      map(*ga).array() +=
          map(g.node_grad(self)).array() * map(g.value(self)).array();
  }
};

struct LogOp final : Op {
  const char* name() const override { return "log"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    resize_to(out, a.rows(), a.cols());
    map(out) = map(a).array().log();
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0))
      map(*ga).array() +=
          map(g.node_grad(self)).array() / map(g.in_value(self, 0)).array();
  }
};

struct SoftplusOp final : Op {
  const char* name() const override { return "softplus"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    resize_to(out, a.rows(), a.cols());
    const double* src = a.data();
    double* dst = out.data();
    for (int i = 0; i < a.size(); ++i) dst[i] = stable_softplus(src[i]);
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0)) {
      // d softplus = sigmoid
      auto x = map(g.in_value(self, 0)).array();
      map(*ga).array() += map(g.node_grad(self)).array() *
                          (0.5 * ((x * 0.5).tanh() + 1.0));
    }
  }
};

// --- matmul and row-wise reductions -------------------------------------------

struct MatmulOp final : Op {
  const char* name() const override { return "matmul"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    const Tensor& b = g.in_value(self, 1);
    if (a.cols() != b.rows())
      op_error(name(), "inner dims differ, " + a.shape_str() + " x " + b.shape_str());
    resize_to(out, a.rows(), b.cols());
    map(out).noalias() = map(a) * map(b);
  }
  void backprop(Graph& g, NodeId self) override {
    const Tensor& gr = g.node_grad(self);
    if (Tensor* ga = g.in_grad(self, 0))
      map(*ga).noalias() += map(gr) * map(g.in_value(self, 1)).transpose();
    if (Tensor* gb = g.in_grad(self, 1))
      map(*gb).noalias() += map(g.in_value(self, 0)).transpose() * map(gr);
  }
};

struct SoftmaxRowsOp final : Op {
  const char* name() const override { return "softmax_rows"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    resize_to(out, a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i) {
      double mx = map(a).row(i).maxCoeff();
      auto e = (map(a).row(i).array() - mx).exp();
      map(out).row(i) = e / e.sum();
    }
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0)) {
      auto y = map(g.value(self));
      auto gy = map(g.node_grad(self));
      for (int i = 0; i < y.rows(); ++i) {
        double dot = y.row(i).dot(gy.row(i));
        map(*ga).row(i).array() +=
            y.row(i).array() * (gy.row(i).array() - dot);
      }
    }
  }
};

struct LogSoftmaxRowsOp final : Op {
  const char* name() const override { return "log_softmax_rows"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    resize_to(out, a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i) {
      double mx = map(a).row(i).maxCoeff();
      double lse = mx + std::log((map(a).row(i).array() - mx).exp().sum());
      map(out).row(i) = map(a).row(i).array() - lse;
    }
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0)) {
      auto y = map(g.value(self));
      auto gy = map(g.node_grad(self));
      for (int i = 0; i < y.rows(); ++i) {
        double s = gy.row(i).sum();
        map(*ga).row(i).array() +=
            gy.row(i).array() - y.row(i).array().exp() * s;
      }
    }
  }
};

struct LogSumExpRowsOp final : Op {
  const char* name() const override { return "logsumexp_rows"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    resize_to(out, a.rows(), 1);
    for (int i = 0; i < a.rows(); ++i) {
      double mx = map(a).row(i).maxCoeff();
      out.at(i, 0) = mx + std::log((map(a).row(i).array() - mx).exp().sum());
    }
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0)) {
      const Tensor& a = g.in_value(self, 0);
      const Tensor& y = g.value(self);
      const Tensor& gy = g.node_grad(self);
      for (int i = 0; i < a.rows(); ++i)
        map(*ga).row(i).array() +=
            gy.at(i, 0) * (map(a).row(i).array() - y.at(i, 0)).exp();
    }
  }
};

struct RowSumOp final : Op {
  const char* name() const override { return "row_sum"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    resize_to(out, a.rows(), 1);
    map(out).col(0) = map(a).rowwise().sum();
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0)) {
      auto gy = map(g.node_grad(self));
      map(*ga).array().colwise() += gy.col(0).array();
    }
  }
};

struct SumAllOp final : Op {
  const char* name() const override { return "sum"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    resize_to(out, 1, 1);
    out.at(0, 0) = map(g.in_value(self, 0)).sum();
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0))
      map(*ga).array() += g.node_grad(self).at(0, 0);
  }
};

struct MeanAllOp final : Op {
  const char* name() const override { return "mean"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    resize_to(out, 1, 1);
    const Tensor& a = g.in_value(self, 0);
    out.at(0, 0) = map(a).sum() / a.size();
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0))
      map(*ga).array() += g.node_grad(self).at(0, 0) / ga->size();
  }
};

// --- structure ops ------------------------------------------------------------

struct ConcatColsOp final : Op {
  const char* name() const override { return "concat_cols"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    int n = g.num_inputs(self);
    int rows = g.in_value(self, 0).rows();
    int cols = 0;
    for (int k = 0; k < n; ++k) {
      const Tensor& p = g.in_value(self, k);
      if (p.rows() != rows) op_error(name(), "row count mismatch at part " + std::to_string(k));
      cols += p.cols();
    }
    resize_to(out, rows, cols);
    int off = 0;
    for (int k = 0; k < n; ++k) {
      const Tensor& p = g.in_value(self, k);
      map(out).middleCols(off, p.cols()) = map(p);
      off += p.cols();
    }
  }
  void backprop(Graph& g, NodeId self) override {
    const Tensor& gr = g.node_grad(self);
    int off = 0;
    for (int k = 0; k < g.num_inputs(self); ++k) {
      int w = g.in_value(self, k).cols();
      if (Tensor* gp = g.in_grad(self, k))
        map(*gp) += map(gr).middleCols(off, w);
      off += w;
    }
  }
};

struct ConcatRowsOp final : Op {
  const char* name() const override { return "concat_rows"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    int n = g.num_inputs(self);
    int cols = g.in_value(self, 0).cols();
    int rows = 0;
    for (int k = 0; k < n; ++k) {
      const Tensor& p = g.in_value(self, k);
      if (p.cols() != cols) op_error(name(), "column count mismatch at part " + std::to_string(k));
      rows += p.rows();
    }
    resize_to(out, rows, cols);
    int off = 0;
    for (int k = 0; k < n; ++k) {
      const Tensor& p = g.in_value(self, k);
      map(out).middleRows(off, p.rows()) = map(p);
      off += p.rows();
    }
  }
  void backprop(Graph& g, NodeId self) override {
    const Tensor& gr = g.node_grad(self);
    int off = 0;
    for (int k = 0; k < g.num_inputs(self); ++k) {
      int h = g.in_value(self, k).rows();
      if (Tensor* gp = g.in_grad(self, k))
        map(*gp) += map(gr).middleRows(off, h);
      off += h;
    }
  }
};

struct SliceColsOp final : Op {
  SliceColsOp(int begin, int end) : begin_(begin), end_(end) {}
  const char* name() const override { return "slice_cols"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    if (begin_ < 0 || end_ > a.cols() || begin_ >= end_)
      op_error(name(), "range [" + std::to_string(begin_) + "," +
                           std::to_string(end_) + ") out of " + a.shape_str());
    resize_to(out, a.rows(), end_ - begin_);
    map(out) = map(a).middleCols(begin_, end_ - begin_);
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0))
      map(*ga).middleCols(begin_, end_ - begin_) += map(g.node_grad(self));
  }
  int begin_, end_;
};

struct SliceRowsOp final : Op {
  SliceRowsOp(int begin, int end) : begin_(begin), end_(end) {}
  const char* name() const override { return "slice_rows"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    if (begin_ < 0 || end_ > a.rows() || begin_ >= end_)
      op_error(name(), "range [" + std::to_string(begin_) + "," +
                           std::to_string(end_) + ") out of " + a.shape_str());
    resize_to(out, end_ - begin_, a.cols());
    map(out) = map(a).middleRows(begin_, end_ - begin_);
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0))
      map(*ga).middleRows(begin_, end_ - begin_) += map(g.node_grad(self));
  }
  int begin_, end_;
};

struct SliceRowsStridedOp final : Op {
  SliceRowsStridedOp(int start, int stride, int count)
      : start_(start), stride_(stride), count_(count) {}
  const char* name() const override { return "slice_rows_strided"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    int last = start_ + (count_ - 1) * stride_;
    if (start_ < 0 || stride_ <= 0 || count_ <= 0 || last >= a.rows())
      op_error(name(), "rows (" + std::to_string(start_) + "+k*" +
                           std::to_string(stride_) + ", k<" +
                           std::to_string(count_) + ") out of " + a.shape_str());
    resize_to(out, count_, a.cols());
    for (int k = 0; k < count_; ++k)
      map(out).row(k) = map(a).row(start_ + k * stride_);
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0)) {
      const Tensor& gr = g.node_grad(self);
      for (int k = 0; k < count_; ++k)
        map(*ga).row(start_ + k * stride_) += map(gr).row(k);
    }
  }
  int start_, stride_, count_;
};

struct GatherConcatRowsOp final : Op {
  GatherConcatRowsOp(std::vector<int> indices, int group)
      : indices_(std::move(indices)), group_(group) {}
  const char* name() const override { return "gather_concat_rows"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& a = g.in_value(self, 0);
    if (group_ <= 0 || indices_.empty() ||
        static_cast<int>(indices_.size()) % group_ != 0)
      op_error(name(), "index count " + std::to_string(indices_.size()) +
                           " not a multiple of group " + std::to_string(group_));
    for (int idx : indices_)
      if (idx < -1 || idx >= a.rows())
        op_error(name(), "index " + std::to_string(idx) + " out of " + a.shape_str());
    int out_rows = static_cast<int>(indices_.size()) / group_;
    resize_to(out, out_rows, group_ * a.cols());
    out.fill(0.0);
    int c = a.cols();
    for (int r = 0; r < out_rows; ++r)
      for (int k = 0; k < group_; ++k) {
        int idx = indices_[r * group_ + k];
        if (idx >= 0) map(out).row(r).segment(k * c, c) = map(a).row(idx);
      }
  }
  void backprop(Graph& g, NodeId self) override {
    if (Tensor* ga = g.in_grad(self, 0)) {
      const Tensor& gr = g.node_grad(self);
      int c = ga->cols();
      int out_rows = gr.rows();
      for (int r = 0; r < out_rows; ++r)
        for (int k = 0; k < group_; ++k) {
          int idx = indices_[r * group_ + k];
          if (idx >= 0) map(*ga).row(idx) += map(gr).row(r).segment(k * c, c);
        }
    }
  }
  std::vector<int> indices_;
  int group_;
};

struct WeightedBlockSumOp final : Op {
  const char* name() const override { return "weighted_block_sum"; }
  void compute(Graph& g, NodeId self, Tensor& out) override {
    const Tensor& w = g.in_value(self, 0);
    const Tensor& rows = g.in_value(self, 1);
    int B = w.rows(), M = w.cols();
    if (rows.rows() != B * M)
      op_error(name(), "rows " + rows.shape_str() + " does not match weights " +
                           w.shape_str());
    resize_to(out, B, rows.cols());
    for (int b = 0; b < B; ++b) {
      map(out).row(b) = w.at(b, 0) * map(rows).row(b * M);
      for (int m = 1; m < M; ++m)
        map(out).row(b) += w.at(b, m) * map(rows).row(b * M + m);
    }
  }
  void backprop(Graph& g, NodeId self) override {
    const Tensor& w = g.in_value(self, 0);
    const Tensor& rows = g.in_value(self, 1);
    const Tensor& gr = g.node_grad(self);
    int B = w.rows(), M = w.cols();
    if (Tensor* gw = g.in_grad(self, 0))
      for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m)
          gw->at(b, m) += map(gr).row(b).dot(map(rows).row(b * M + m));
    if (Tensor* grows = g.in_grad(self, 1))
      for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m)
          map(*grows).row(b * M + m) += w.at(b, m) * map(gr).row(b);
  }
};

}  // namespace

// --- Graph ---------------------------------------------------------------------

NodeId Graph::constant(Tensor v) {
  Node n;
  n.value = std::move(v);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Graph::param(Tensor v) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = true;
  n.is_param = true;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

void Graph::set_value(NodeId id, Tensor v) {
  Node& n = nodes_[id];
  if (n.op) throw std::invalid_argument("set_value: node is not a leaf");
  if (!n.value.same_shape(v))
    throw std::invalid_argument("set_value: shape " + v.shape_str() +
                                " does not match " + n.value.shape_str());
  n.value = std::move(v);
}

const Tensor& Graph::grad(NodeId id) const {
  const Node& n = nodes_[id];
  if (!n.grad_live)
    throw std::logic_error("grad: no gradient accumulated for node " +
                           std::to_string(id));
  return n.grad;
}

NodeId Graph::add_node(std::unique_ptr<Op> op, std::vector<NodeId> inputs) {
  Node n;
  n.op = std::move(op);
  n.inputs = std::move(inputs);
  for (NodeId in : n.inputs)
    if (in < 0 || in >= num_nodes())
      throw std::invalid_argument("graph: input node id out of range");
  for (NodeId in : n.inputs) n.requires_grad |= nodes_[in].requires_grad;
  nodes_.push_back(std::move(n));
  NodeId id = static_cast<NodeId>(nodes_.size()) - 1;
  Node& stored = nodes_[id];
  stored.op->compute(*this, id, stored.value);
  if (!stored.value.all_finite())
    throw std::runtime_error(std::string("graph: non-finite value after op ") +
                             stored.op->name());
  return id;
}

Tensor* Graph::grad_buffer(NodeId id) {
  Node& n = nodes_[id];
  if (!n.grad.same_shape(n.value)) n.grad = Tensor(n.value.rows(), n.value.cols());
  if (!n.grad_live) {
    n.grad.fill(0.0);
    n.grad_live = true;
  }
  return &n.grad;
}

Tensor* Graph::in_grad(NodeId self, int k) {
  NodeId in = nodes_[self].inputs[k];
  if (!nodes_[in].requires_grad) return nullptr;
  return grad_buffer(in);
}

void Graph::forward() {
  for (NodeId id = 0; id < num_nodes(); ++id) {
    Node& n = nodes_[id];
    if (!n.op) continue;
    n.op->compute(*this, id, n.value);
    if (!n.value.all_finite())
      throw std::runtime_error(std::string("graph: non-finite value after op ") +
                               n.op->name());
  }
}

double Graph::backward(NodeId loss) {
  if (loss < 0 || loss >= num_nodes())
    throw std::invalid_argument("backward: loss node id out of range");
  Node& ln = nodes_[loss];
  if (ln.value.rows() != 1 || ln.value.cols() != 1)
    throw std::invalid_argument("backward: loss must be 1x1, got " +
                                ln.value.shape_str());
  if (!ln.requires_grad)
    throw std::invalid_argument("backward: loss does not depend on any parameter");
  for (Node& n : nodes_) n.grad_live = false;
  grad_buffer(loss)->fill(1.0);
  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.op || !n.grad_live) continue;
    if (!n.grad.all_finite())
      throw std::runtime_error(std::string("graph: non-finite gradient at op ") +
                               n.op->name());
    n.op->backprop(*this, id);
  }
  return ln.value.at(0, 0);
}

NodeId Graph::add_custom(std::unique_ptr<Op> op, std::vector<NodeId> inputs) {
  return add_node(std::move(op), std::move(inputs));
}

NodeId Graph::add(NodeId a, NodeId b) { return add_node(std::make_unique<AddOp>(), {a, b}); }
NodeId Graph::sub(NodeId a, NodeId b) { return add_node(std::make_unique<SubOp>(), {a, b}); }
NodeId Graph::mul(NodeId a, NodeId b) { return add_node(std::make_unique<MulOp>(), {a, b}); }
NodeId Graph::div(NodeId a, NodeId b) { return add_node(std::make_unique<DivOp>(), {a, b}); }
NodeId Graph::add_rowvec(NodeId a, NodeId v) {
  return add_node(std::make_unique<AddRowVecOp>(), {a, v});
}
NodeId Graph::mul_colvec(NodeId a, NodeId u) {
  return add_node(std::make_unique<MulColVecOp>(), {a, u});
}
NodeId Graph::broadcast_col(NodeId u, int cols) {
  return add_node(std::make_unique<BroadcastColOp>(cols), {u});
}
NodeId Graph::broadcast_row(NodeId v, int rows) {
  return add_node(std::make_unique<BroadcastRowOp>(rows), {v});
}
NodeId Graph::scale(NodeId a, double c) {
  return add_node(std::make_unique<ScaleOp>(c), {a});
}
NodeId Graph::add_scalar(NodeId a, double c) {
  return add_node(std::make_unique<AddScalarOp>(c), {a});
}
NodeId Graph::tanh(NodeId a) { return add_node(std::make_unique<TanhOp>(), {a}); }
NodeId Graph::sigmoid(NodeId a) { return add_node(std::make_unique<SigmoidOp>(), {a}); }
NodeId Graph::exp(NodeId a) { return add_node(std::make_unique<ExpOp>(), {a}); }
NodeId Graph::log(NodeId a) { return add_node(std::make_unique<LogOp>(), {a}); }
NodeId Graph::softplus(NodeId a) {
  return add_node(std::make_unique<SoftplusOp>(), {a});
}
NodeId Graph::matmul(NodeId a, NodeId b) {
  return add_node(std::make_unique<MatmulOp>(), {a, b});
}
NodeId Graph::softmax_rows(NodeId a) {
  return add_node(std::make_unique<SoftmaxRowsOp>(), {a});
}
NodeId Graph::log_softmax_rows(NodeId a) {
  return add_node(std::make_unique<LogSoftmaxRowsOp>(), {a});
}
NodeId Graph::logsumexp_rows(NodeId a) {
  return add_node(std::make_unique<LogSumExpRowsOp>(), {a});
}
NodeId Graph::row_sum(NodeId a) {
  return add_node(std::make_unique<RowSumOp>(), {a});
}
NodeId Graph::sum(NodeId a) { return add_node(std::make_unique<SumAllOp>(), {a}); }
NodeId Graph::mean(NodeId a) { return add_node(std::make_unique<MeanAllOp>(), {a}); }
NodeId Graph::concat_cols(std::span<const NodeId> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  return add_node(std::make_unique<ConcatColsOp>(),
                  std::vector<NodeId>(parts.begin(), parts.end()));
}
NodeId Graph::concat_rows(std::span<const NodeId> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  return add_node(std::make_unique<ConcatRowsOp>(),
                  std::vector<NodeId>(parts.begin(), parts.end()));
}
NodeId Graph::slice_cols(NodeId a, int begin, int end) {
  return add_node(std::make_unique<SliceColsOp>(begin, end), {a});
}
NodeId Graph::slice_rows(NodeId a, int begin, int end) {
  return add_node(std::make_unique<SliceRowsOp>(begin, end), {a});
}
NodeId Graph::slice_rows_strided(NodeId a, int start, int stride, int count) {
  return add_node(std::make_unique<SliceRowsStridedOp>(start, stride, count), {a});
}
NodeId Graph::gather_concat_rows(NodeId a, std::vector<int> indices, int group) {
  return add_node(std::make_unique<GatherConcatRowsOp>(std::move(indices), group),
                  {a});
}
NodeId Graph::weighted_block_sum(NodeId w, NodeId rows) {
  return add_node(std::make_unique<WeightedBlockSumOp>(), {w, rows});
}

// --- free functions --------------------------------------------------------------

ForwardBackwardResult forward_backward(
    Graph& g, const std::vector<std::pair<NodeId, Tensor>>& inputs, NodeId loss,
    std::span<const NodeId> params) {
  for (const auto& [id, v] : inputs) g.set_value(id, v);
  g.forward();
  ForwardBackwardResult r;
  r.loss = g.backward(loss);
  r.param_grads.reserve(params.size());
  for (NodeId p : params) r.param_grads.push_back(g.grad(p));
  return r;
}

double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> point,
                  std::span<const double> analytic_grad, double eps) {
  if (point.size() != analytic_grad.size())
    throw std::invalid_argument("grad_check: size mismatch");
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + eps;
    double fp = f(x);
    x[i] = keep - eps;
    double fm = f(x);
    x[i] = keep;
    double fd = (fp - fm) / (2.0 * eps);
    double denom = std::max({std::abs(fd), std::abs(analytic_grad[i]), 1e-8});
    worst = std::max(worst, std::abs(fd - analytic_grad[i]) / denom);
  }
  return worst;
}

}  // namespace numerics
