#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "metrics/metrics.hpp"

using metrics::CerMatrix;
using metrics::diagnose;
using metrics::edit_distance;

namespace {

/// Naive recursive Levenshtein, the independent oracle.
int edit_oracle(const std::string& a, const std::string& b) {
  if (a.empty()) return static_cast<int>(b.size());
  if (b.empty()) return static_cast<int>(a.size());
  int del = edit_oracle(a.substr(1), b) + 1;
  int ins = edit_oracle(a, b.substr(1)) + 1;
  int sub = edit_oracle(a.substr(1), b.substr(1)) + (a[0] == b[0] ? 0 : 1);
  return std::min({del, ins, sub});
}

std::vector<std::string> all_strings_up_to(int max_len) {
  std::vector<std::string> out{""};
  std::vector<std::string> frontier{""};
  for (int l = 0; l < max_len; ++l) {
    std::vector<std::string> next;
    for (const std::string& s : frontier)
      for (char c : {'a', 'b'}) {
        next.push_back(s + c);
        out.push_back(s + c);
      }
    frontier = std::move(next);
  }
  return out;
}

}  // namespace

TEST_CASE("edit distance basics") {
  CHECK(edit_distance("abc", "abc") == 0);
  CHECK(edit_distance("", "ab") == 2);
  CHECK(edit_distance("kitten", "sitting") == 3);
  CHECK(edit_oracle("kitten", "sitting") == 3);
}

TEST_CASE("edit distance equals recursive oracle exhaustively") {
  // All pairs of strings of length <= 5 over {a,b}: 63*63 pairs. The oracle is
  // exponential, so cap one side at length 4 to keep runtime sane while still
  // crossing every length combination up to (5,4).
  auto longs = all_strings_up_to(5);
  auto shorts = all_strings_up_to(4);
  for (const std::string& a : longs)
    for (const std::string& b : shorts)
      CHECK(edit_distance(a, b) == edit_oracle(a, b));
}

TEST_CASE("edit distance satisfies metric axioms on random strings") {
  common::Rng rng(71);
  auto random_str = [&](int max_len) {
    int n = static_cast<int>(rng.uniform_index(max_len + 1));
    std::string s;
    for (int i = 0; i < n; ++i)
      s.push_back("abcdefghij"[rng.uniform_index(10)]);
    return s;
  };
  for (int it = 0; it < 200; ++it) {
    std::string x = random_str(12), y = random_str(12), z = random_str(12);
    int dxy = edit_distance(x, y);
    CHECK(dxy == edit_distance(y, x));
    CHECK((dxy == 0) == (x == y));
    CHECK(dxy <= edit_distance(x, z) + edit_distance(z, y));
  }
}

TEST_CASE("cer micro-average") {
  std::vector<std::pair<std::string, std::string>> pairs{
      {"abcde", "abcde"}, {"abcde", "abxde"}, {"", ""}};
  pairs.pop_back();
  CHECK(metrics::cer(pairs) == doctest::Approx(0.1));  // 1 edit / 10 chars
  std::vector<std::pair<std::string, std::string>> exact{{"ab", "ab"}};
  CHECK(metrics::cer(exact) == 0.0);
  std::vector<std::pair<std::string, std::string>> over{{"a", "abc"}};
  CHECK(metrics::cer(over) == doctest::Approx(2.0));
  std::vector<std::pair<std::string, std::string>> empty{{"", "abc"}};
  CHECK_THROWS_AS(metrics::cer(empty), std::invalid_argument);
}

TEST_CASE("cer is permutation invariant") {
  std::vector<std::pair<std::string, std::string>> pairs{
      {"abc", "abd"}, {"de", "xe"}, {"fgh", "fgh"}, {"ij", "ijk"}};
  double before = metrics::cer(pairs);
  std::reverse(pairs.begin(), pairs.end());
  CHECK(metrics::cer(pairs) == before);
}

TEST_CASE("matrix json round trip") {
  CerMatrix m;
  m.m_rr = 0.08;
  m.m_rs = 0.28;
  m.m_sr = 0.30;
  m.m_ss = 0.02;
  m.m_br = 0.20;
  m.m_bs = 0.05;
  m.meta["decode"] = "greedy";
  auto j = m.to_json();
  CHECK(j.dump() == CerMatrix::from_json(j).to_json().dump());
  CHECK(m.at('r', 'r') == 0.08);
  CHECK(m.at('s', 'r') == 0.30);
  CHECK(m.at('b', 's') == 0.05);
  CHECK_THROWS(m.at('x', 'r'));
  auto bad = j;
  bad.erase("m_sr");
  CHECK_THROWS(CerMatrix::from_json(bad));
}

TEST_CASE("build_cer_matrix wiring echoes the evaluator") {
  auto m = metrics::build_cer_matrix(
      [](char t, char v) {
        if (t == 'r' && v == 'r') return 0.1;
        if (t == 'r' && v == 's') return 0.2;
        if (t == 's' && v == 'r') return 0.3;
        if (t == 's' && v == 's') return 0.4;
        if (t == 'b' && v == 'r') return 0.5;
        return 0.6;
      },
      {{"note", "stub"}});
  CHECK(m.m_rr == 0.1);
  CHECK(m.m_rs == 0.2);
  CHECK(m.m_sr == 0.3);
  CHECK(m.m_ss == 0.4);
  CHECK(m.m_br == 0.5);
  CHECK(m.m_bs == 0.6);
  CHECK(m.meta["note"] == "stub");

  // Identical model in all slots → both rows coincide.
  auto same = metrics::build_cer_matrix(
      [](char, char v) { return v == 'r' ? 0.11 : 0.22; }, {});
  CHECK(same.m_rr == same.m_sr);
  CHECK(same.m_rr == same.m_br);
  CHECK(same.m_rs == same.m_ss);
}

TEST_CASE("diagnosis matches the worked examples") {
  CerMatrix case1;
  case1.m_rr = 0.08;
  case1.m_ss = 0.02;
  case1.m_sr = 0.30;
  case1.m_rs = 0.28;
  case1.m_br = 0.20;
  case1.m_bs = 0.05;
  auto d1 = diagnose(case1, 0.1);
  CHECK(d1.label == "Case1");
  CHECK_FALSE(d1.evidence.empty());

  CerMatrix case2;
  case2.m_rr = 0.08;
  case2.m_ss = 0.02;
  case2.m_rs = 0.03;
  case2.m_sr = 0.25;
  case2.m_br = 0.08;
  case2.m_bs = 0.04;
  auto d2 = diagnose(case2, 0.1);
  CHECK(d2.label == "Case2");

  CerMatrix case3;
  case3.m_rr = 0.08;
  case3.m_sr = 0.06;
  case3.m_br = 0.05;
  case3.m_rs = 0.12;
  case3.m_ss = 0.10;
  case3.m_bs = 0.06;
  auto d3 = diagnose(case3, 0.1);
  CHECK(d3.label == "Case3");

  CerMatrix flat;
  flat.m_rr = flat.m_rs = flat.m_sr = flat.m_ss = flat.m_br = flat.m_bs = 0.1;
  CHECK(diagnose(flat, 0.1).label == "Inconclusive");

  CHECK_THROWS_AS(diagnose(flat, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(diagnose(flat, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(diagnose(flat, -0.5), std::invalid_argument);
}

TEST_CASE("diagnosis is scale invariant and deterministic") {
  common::Rng rng(31);
  for (int it = 0; it < 100; ++it) {
    CerMatrix m;
    m.m_rr = rng.uniform(0.01, 0.5);
    m.m_rs = rng.uniform(0.01, 0.5);
    m.m_sr = rng.uniform(0.01, 0.5);
    m.m_ss = rng.uniform(0.01, 0.5);
    m.m_br = rng.uniform(0.01, 0.5);
    m.m_bs = rng.uniform(0.01, 0.5);
    auto base = diagnose(m, 0.1);
    CHECK(base.label == diagnose(m, 0.1).label);
    CerMatrix scaled = m;
    double k = 3.7;
    scaled.m_rr *= k;
    scaled.m_rs *= k;
    scaled.m_sr *= k;
    scaled.m_ss *= k;
    scaled.m_br *= k;
    scaled.m_bs *= k;
    CHECK(diagnose(scaled, 0.1).label == base.label);
  }
}

TEST_CASE("diagnosis json carries label, tau, evidence") {
  CerMatrix m;
  m.m_rr = 0.1;
  m.m_sr = 0.05;
  m.m_br = 0.2;
  m.m_rs = 0.1;
  m.m_ss = 0.1;
  m.m_bs = 0.1;
  auto j = diagnose(m, 0.2).to_json();
  CHECK(j["label"] == "Case3");
  CHECK(j["tau"] == 0.2);
  CHECK(j["evidence"].is_array());
  CHECK(j["evidence"].size() >= 1);
}
