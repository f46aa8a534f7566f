#include "ctc/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>

namespace ctc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logadd(double a, double b) {
  if (a < b) std::swap(a, b);
  if (a == kNegInf) return kNegInf;
  return a + std::log1p(std::exp(b - a));
}

void check_lattice(const numerics::Tensor& lp) {
  if (lp.rows() < 1 || lp.cols() < 2)
    throw std::invalid_argument("ctc: lattice needs >= 1 frame and >= 2 symbols");
  for (int t = 0; t < lp.rows(); ++t) {
    double mx = kNegInf;
    for (int k = 0; k < lp.cols(); ++k) mx = std::max(mx, lp.at(t, k));
    double acc = 0.0;
    for (int k = 0; k < lp.cols(); ++k) acc += std::exp(lp.at(t, k) - mx);
    double lse = mx + std::log(acc);
    if (std::abs(lse) > 1e-9)
      throw std::invalid_argument("ctc: lattice row " + std::to_string(t) +
                                  " logsumexps to " + std::to_string(lse) +
                                  ", not 0");
  }
}

void check_label(std::span<const int> label, int q) {
  for (int l : label)
    if (l < 0 || l >= q)
      throw std::invalid_argument("ctc: label index " + std::to_string(l) +
                                  " outside alphabet of size " + std::to_string(q));
}

}  // namespace

int min_feasible_frames(std::span<const int> label) {
  int repeats = 0;
  for (size_t i = 1; i < label.size(); ++i)
    if (label[i] == label[i - 1]) ++repeats;
  return static_cast<int>(label.size()) + repeats;
}

LossResult loss_with_grad(const numerics::Tensor& log_probs,
                          std::span<const int> label, bool want_grad) {
  check_lattice(log_probs);
  const int T = log_probs.rows();
  const int q = log_probs.cols() - 1;  // blank = column q
  check_label(label, q);
  if (T < min_feasible_frames(label))
    throw std::invalid_argument(
        "ctc: infeasible alignment, " + std::to_string(T) + " frames for label of length " +
        std::to_string(label.size()) + " needing " +
        std::to_string(min_feasible_frames(label)));

  const int L = static_cast<int>(label.size());
  const int S = 2 * L + 1;
  // Extended sequence: blank, l1, blank, ..., lL, blank.
  std::vector<int> ext(S, q);
  for (int i = 0; i < L; ++i) ext[2 * i + 1] = label[i];
  auto can_skip = [&](int s) {
    return s >= 2 && ext[s] != q && ext[s] != ext[s - 2];
  };

  std::vector<std::vector<double>> alpha(T, std::vector<double>(S, kNegInf));
  alpha[0][0] = log_probs.at(0, ext[0]);
  if (S > 1) alpha[0][1] = log_probs.at(0, ext[1]);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      double a = alpha[t - 1][s];
      if (s >= 1) a = logadd(a, alpha[t - 1][s - 1]);
      if (can_skip(s)) a = logadd(a, alpha[t - 1][s - 2]);
      if (a != kNegInf) alpha[t][s] = a + log_probs.at(t, ext[s]);
    }
  double log_z = logadd(alpha[T - 1][S - 1], S > 1 ? alpha[T - 1][S - 2] : kNegInf);

  LossResult result;
  result.loss = -log_z;
  if (!want_grad) return result;
  if (log_z == kNegInf)
    throw std::runtime_error("ctc: label has probability zero under the lattice");

  // beta excludes the emission at t, so alpha[t][s] + beta[t][s] sums over
  // full paths passing through (t, s).
  std::vector<std::vector<double>> beta(T, std::vector<double>(S, kNegInf));
  beta[T - 1][S - 1] = 0.0;
  if (S > 1) beta[T - 1][S - 2] = 0.0;
  for (int t = T - 2; t >= 0; --t)
    for (int s = 0; s < S; ++s) {
      double b = beta[t + 1][s] == kNegInf
                     ? kNegInf
                     : beta[t + 1][s] + log_probs.at(t + 1, ext[s]);
      if (s + 1 < S && beta[t + 1][s + 1] != kNegInf)
        b = logadd(b, beta[t + 1][s + 1] + log_probs.at(t + 1, ext[s + 1]));
      if (s + 2 < S && can_skip(s + 2) && beta[t + 1][s + 2] != kNegInf)
        b = logadd(b, beta[t + 1][s + 2] + log_probs.at(t + 1, ext[s + 2]));
      beta[t][s] = b;
    }

  result.grad = numerics::Tensor(T, q + 1);
  for (int t = 0; t < T; ++t) {
    std::vector<double> acc(q + 1, kNegInf);
    for (int s = 0; s < S; ++s) {
      double ab = alpha[t][s] == kNegInf || beta[t][s] == kNegInf
                      ? kNegInf
                      : alpha[t][s] + beta[t][s];
      acc[ext[s]] = logadd(acc[ext[s]], ab);
    }
    for (int k = 0; k <= q; ++k)
      if (acc[k] != kNegInf) result.grad.at(t, k) = -std::exp(acc[k] - log_z);
  }
  return result;
}

namespace {

/// Custom graph op wrapping the fused loss; the gradient tensor computed in
/// the forward pass is reused during backprop.
struct CtcLossOp final : numerics::Op {
  explicit CtcLossOp(std::vector<int> label) : label_(std::move(label)) {}
  const char* name() const override { return "ctc_loss"; }
  void compute(numerics::Graph& g, numerics::NodeId self,
               numerics::Tensor& out) override {
    LossResult r = loss_with_grad(g.in_value(self, 0), label_, true);
    if (out.rows() != 1 || out.cols() != 1) out = numerics::Tensor(1, 1);
    out.at(0, 0) = r.loss;
    grad_ = std::move(r.grad);
  }
  void backprop(numerics::Graph& g, numerics::NodeId self) override {
    if (numerics::Tensor* gin = g.in_grad(self, 0)) {
      double upstream = g.node_grad(self).at(0, 0);
      for (int i = 0; i < grad_.size(); ++i)
        gin->data()[i] += upstream * grad_.data()[i];
    }
  }
  std::vector<int> label_;
  numerics::Tensor grad_;
};

}  // namespace

numerics::NodeId loss_node(numerics::Graph& g, numerics::NodeId log_probs,
                           std::vector<int> label) {
  return g.add_custom(std::make_unique<CtcLossOp>(std::move(label)), {log_probs});
}

std::string greedy_decode(const numerics::Tensor& log_probs,
                          const ink::Alphabet& alphabet) {
  check_lattice(log_probs);
  if (log_probs.cols() != alphabet.size() + 1)
    throw std::invalid_argument("ctc: lattice width does not match alphabet");
  const int blank = alphabet.blank();
  std::string out;
  int prev = -1;
  for (int t = 0; t < log_probs.rows(); ++t) {
    int best = 0;
    for (int k = 1; k < log_probs.cols(); ++k)
      if (log_probs.at(t, k) > log_probs.at(t, best)) best = k;
    if (best != blank && best != prev) out.push_back(alphabet.at(best));
    prev = best;
  }
  return out;
}

std::string beam_decode(const numerics::Tensor& log_probs,
                        const ink::Alphabet& alphabet, int width) {
  check_lattice(log_probs);
  if (log_probs.cols() != alphabet.size() + 1)
    throw std::invalid_argument("ctc: lattice width does not match alphabet");
  if (width < 1) throw std::invalid_argument("ctc: beam width must be >= 1");
  const int q = alphabet.size();

  struct Score {
    double pb = kNegInf;   // prefix ends in blank
    double pnb = kNegInf;  // prefix ends in its last symbol
    double total() const { return logadd(pb, pnb); }
  };
  // std::map keys keep pruning and the final argmax deterministic.
  std::map<std::string, Score> beam;
  beam[""] = {0.0, kNegInf};

  for (int t = 0; t < log_probs.rows(); ++t) {
    std::map<std::string, Score> next;
    for (const auto& [prefix, sc] : beam) {
      double total = sc.total();
      // Stay on blank.
      Score& same = next[prefix];
      same.pb = logadd(same.pb, total + log_probs.at(t, q));
      for (int c = 0; c < q; ++c) {
        double lp = log_probs.at(t, c);
        if (!prefix.empty() && prefix.back() == static_cast<char>(c)) {
          // Repeat without blank collapses; extending needs the blank path.
          same.pnb = logadd(same.pnb, sc.pnb + lp);
          Score& ext = next[prefix + static_cast<char>(c)];
          ext.pnb = logadd(ext.pnb, sc.pb + lp);
        } else {
          Score& ext = next[prefix + static_cast<char>(c)];
          ext.pnb = logadd(ext.pnb, total + lp);
        }
      }
    }
    if (static_cast<int>(next.size()) > width) {
      std::vector<std::pair<std::string, Score>> items(next.begin(), next.end());
      std::stable_sort(items.begin(), items.end(),
                       [](const auto& a, const auto& b) {
                         return a.second.total() > b.second.total();
                       });
      items.resize(width);
      next = std::map<std::string, Score>(items.begin(), items.end());
    }
    beam = std::move(next);
  }

  std::string best;
  double best_score = kNegInf;
  for (const auto& [prefix, sc] : beam) {
    double total = sc.total();
    if (total > best_score) {
      best_score = total;
      best = prefix;
    }
  }
  std::vector<int> labels(best.begin(), best.end());
  return alphabet.decode(labels);
}

}  // namespace ctc
