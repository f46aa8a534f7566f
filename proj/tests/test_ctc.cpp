#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "ctc/ctc.hpp"
#include "ink/ink.hpp"
#include "numerics/graph.hpp"
#include "testutil.hpp"

using ink::Alphabet;
using numerics::Tensor;

namespace {

Tensor random_lattice(uint64_t seed, int T, int q) {
  common::Rng rng(seed);
  Tensor lp(T, q + 1);
  for (int t = 0; t < T; ++t) {
    double mx = -INFINITY;
    for (int k = 0; k <= q; ++k) {
      lp.at(t, k) = rng.uniform(-2, 2);
      mx = std::max(mx, lp.at(t, k));
    }
    double acc = 0;
    for (int k = 0; k <= q; ++k) acc += std::exp(lp.at(t, k) - mx);
    double lse = mx + std::log(acc);
    for (int k = 0; k <= q; ++k) lp.at(t, k) -= lse;
  }
  return lp;
}

std::string collapse(std::span<const int> path, int blank) {
  std::string out;
  int prev = -1;
  for (int s : path) {
    if (s != blank && s != prev) out.push_back(static_cast<char>('a' + s));
    prev = s;
  }
  return out;
}

/// Brute force: total probability per collapsed label over all (q+1)^T paths.
std::map<std::string, double> enumerate_labels(const Tensor& lp) {
  const int T = lp.rows(), n = lp.cols();
  std::map<std::string, double> totals;
  std::vector<int> path(T, 0);
  while (true) {
    double p = 0.0;
    for (int t = 0; t < T; ++t) p += lp.at(t, path[t]);
    totals[collapse(path, n - 1)] += std::exp(p);
    int i = 0;
    while (i < T && ++path[i] == n) path[i++] = 0;
    if (i == T) break;
  }
  return totals;
}

std::vector<int> to_label(const std::string& text) {
  std::vector<int> label;
  for (char c : text) label.push_back(c - 'a');
  return label;
}

Tensor one_hot_lattice(std::span<const int> path, int q) {
  Tensor lp(static_cast<int>(path.size()), q + 1);
  lp.fill(-INFINITY);
  for (size_t t = 0; t < path.size(); ++t) lp.at(static_cast<int>(t), path[t]) = 0.0;
  return lp;
}

}  // namespace

TEST_CASE("feasibility bound counts repeats") {
  CHECK(ctc::min_feasible_frames(std::vector<int>{}) == 0);
  CHECK(ctc::min_feasible_frames(std::vector<int>{0}) == 1);
  CHECK(ctc::min_feasible_frames(std::vector<int>{0, 1}) == 2);
  CHECK(ctc::min_feasible_frames(std::vector<int>{0, 0}) == 3);
  CHECK(ctc::min_feasible_frames(std::vector<int>{0, 0, 0}) == 5);
  CHECK(ctc::min_feasible_frames(std::vector<int>{0, 1, 1, 0}) == 5);
}

TEST_CASE("loss worked examples") {
  // T=1, p(a)=0.3: single alignment.
  Tensor lp1(1, 2);
  lp1.at(0, 0) = std::log(0.3);
  lp1.at(0, 1) = std::log(0.7);
  auto r1 = ctc::loss_with_grad(lp1, std::vector<int>{0}, false);
  CHECK(r1.loss == doctest::Approx(1.20397).epsilon(1e-5));

  // T=2, all probs 0.5: alignments a∅, ∅a, aa → p = 0.75.
  Tensor lp2(2, 2);
  lp2.fill(std::log(0.5));
  auto r2 = ctc::loss_with_grad(lp2, std::vector<int>{0}, false);
  CHECK(r2.loss == doctest::Approx(0.28768).epsilon(1e-4));
  CHECK(std::exp(-r2.loss) == doctest::Approx(0.75).epsilon(1e-9));

  // Empty label: all-blank path, p = 0.25.
  auto r0 = ctc::loss_with_grad(lp2, std::vector<int>{}, false);
  CHECK(std::exp(-r0.loss) == doctest::Approx(0.25).epsilon(1e-9));

  // T=1 for label "ab" is infeasible.
  CHECK_THROWS_AS(ctc::loss_with_grad(lp1, std::vector<int>{0, 1}, false),
                  std::invalid_argument);
}

TEST_CASE("loss rejects malformed lattices and labels") {
  Tensor bad(2, 2);
  bad.fill(std::log(0.6));  // rows do not normalize
  CHECK_THROWS_AS(ctc::loss_with_grad(bad, std::vector<int>{0}, false),
                  std::invalid_argument);
  Tensor lp = random_lattice(1, 3, 2);
  CHECK_THROWS_AS(ctc::loss_with_grad(lp, std::vector<int>{5}, false),
                  std::invalid_argument);
}

TEST_CASE("loss equals brute-force path enumeration") {
  for (uint64_t seed = 1; seed <= 30; ++seed) {
    common::Rng rng(seed * 31);
    int T = 1 + static_cast<int>(rng.uniform_index(6));
    int q = 1 + static_cast<int>(rng.uniform_index(3));
    Tensor lp = random_lattice(seed, T, q);
    auto totals = enumerate_labels(lp);

    double grand = 0.0;
    for (const auto& [label_text, p] : totals) grand += p;
    CHECK(grand <= 1.0 + 1e-9);
    CHECK(grand == doctest::Approx(1.0).epsilon(1e-9));

    for (const auto& [label_text, p] : totals) {
      if (label_text.size() > 3) continue;
      auto label = to_label(label_text);
      auto r = ctc::loss_with_grad(lp, label, false);
      CHECK(std::exp(-r.loss) == doctest::Approx(p).epsilon(1e-9));
    }
  }
}

TEST_CASE("loss gradient w.r.t. logits matches finite differences") {
  for (auto [T, q, text] : {std::tuple{5, 3, "abc"}, std::tuple{6, 2, "aab"},
                            std::tuple{4, 2, "a"}}) {
    auto label = to_label(text);
    double err = testutil::op_grad_error(
        {{T, q + 1}},
        [&](numerics::Graph& g, const std::vector<numerics::NodeId>& p) {
          return ctc::loss_node(g, g.log_softmax_rows(p[0]), label);
        },
        -2.0, 2.0);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("loss node matches the plain loss and backpropagates") {
  Tensor logits(5, 3);
  common::Rng rng(9);
  for (int i = 0; i < logits.size(); ++i) logits.data()[i] = rng.uniform(-1, 1);
  numerics::Graph g;
  numerics::NodeId in = g.param(logits);
  numerics::NodeId lattice = g.log_softmax_rows(in);
  numerics::NodeId loss = ctc::loss_node(g, lattice, {0, 1});
  auto plain = ctc::loss_with_grad(g.value(lattice), std::vector<int>{0, 1}, true);
  CHECK(g.value(loss).item() == doctest::Approx(plain.loss).epsilon(1e-12));
  g.backward(loss);
  CHECK(g.grad(in).all_finite());
}

TEST_CASE("greedy decode collapse rules") {
  Alphabet ab("ab");
  // Path [a, blank, a] → "aa".
  CHECK(ctc::greedy_decode(one_hot_lattice(std::vector<int>{0, 2, 0}, 2), ab) ==
        "aa");
  // Path [a, a, blank] → "a".
  CHECK(ctc::greedy_decode(one_hot_lattice(std::vector<int>{0, 0, 2}, 2), ab) ==
        "a");
  // Path [blank, blank] → "".
  CHECK(ctc::greedy_decode(one_hot_lattice(std::vector<int>{2, 2}, 2), ab) == "");

  common::Rng rng(77);
  for (int it = 0; it < 50; ++it) {
    int T = 1 + static_cast<int>(rng.uniform_index(8));
    std::vector<int> path;
    for (int t = 0; t < T; ++t)
      path.push_back(static_cast<int>(rng.uniform_index(3)));
    CHECK(ctc::greedy_decode(one_hot_lattice(path, 2), ab) == collapse(path, 2));
  }
}

TEST_CASE("beam decode worked example") {
  // T'=2, p(a)=0.6, p(blank)=0.4 → "a" with 0.84 vs "" with 0.16.
  Alphabet a("a");
  Tensor lp(2, 2);
  lp.at(0, 0) = std::log(0.6);
  lp.at(0, 1) = std::log(0.4);
  lp.at(1, 0) = std::log(0.6);
  lp.at(1, 1) = std::log(0.4);
  CHECK(ctc::beam_decode(lp, a, 4) == "a");
  CHECK_THROWS_AS(ctc::beam_decode(lp, a, 0), std::invalid_argument);
}

TEST_CASE("wide beam equals the enumeration argmax") {
  for (uint64_t seed = 50; seed < 75; ++seed) {
    common::Rng rng(seed);
    int T = 2 + static_cast<int>(rng.uniform_index(3));
    int q = 1 + static_cast<int>(rng.uniform_index(2));
    Tensor lp = random_lattice(seed * 7, T, q);
    auto totals = enumerate_labels(lp);
    std::string best;
    double best_p = -1;
    for (const auto& [text, p] : totals)
      if (p > best_p) {
        best_p = p;
        best = text;
      }
    Alphabet ab(q == 1 ? "a" : "ab");
    CHECK(ctc::beam_decode(lp, ab, 1000) == best);
  }
}

TEST_CASE("beam on a one-hot alignment returns its collapse") {
  Alphabet ab("ab");
  std::vector<int> path{0, 2, 1, 1, 2};
  CHECK(ctc::beam_decode(one_hot_lattice(path, 2), ab, 8) == "ab");
  CHECK(ctc::greedy_decode(one_hot_lattice(path, 2), ab) == "ab");
}

TEST_CASE("narrow beam is still deterministic") {
  Tensor lp = random_lattice(123, 6, 3);
  Alphabet ab("abc");
  std::string first = ctc::beam_decode(lp, ab, 2);
  for (int i = 0; i < 5; ++i) CHECK(ctc::beam_decode(lp, ab, 2) == first);
}
