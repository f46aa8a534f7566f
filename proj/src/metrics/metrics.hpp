#pragma once

#include <functional>
#include <json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace metrics {

/// Levenshtein distance (unit-cost insert/delete/substitute).
int edit_distance(const std::string& a, const std::string& b);

/// Micro-averaged character error rate over (ref, hyp) pairs:
/// total edits / total reference length. May exceed 1 via insertions.
double cer(std::span<const std::pair<std::string, std::string>> pairs);

/// CER by training set {r: real, s: synthetic, b: mixed} x evaluation set
/// {r: real, s: synthetic}.
struct CerMatrix {
  double m_rr = 0, m_rs = 0;
  double m_sr = 0, m_ss = 0;
  double m_br = 0, m_bs = 0;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();

  double at(char train, char eval) const;
  nlohmann::ordered_json to_json() const;
  static CerMatrix from_json(const nlohmann::ordered_json& j);
};

/// Fills all six entries by calling eval_cer(train_tag, eval_tag).
CerMatrix build_cer_matrix(const std::function<double(char, char)>& eval_cer,
                           nlohmann::ordered_json meta);

struct CaseDiagnosis {
  std::string label;  // Case1 | Case2 | Case3 | Inconclusive
  std::vector<std::string> evidence;
  double tau = 0.0;
  nlohmann::ordered_json to_json() const;
};

/// Relative-threshold classification of the matrix, checked in the order
/// Case3 (synthetic or mixed training already beats real-only on real data),
/// Case1 (synthetic easy to fit but transfers badly both ways), Case2
/// (synthetic easy and real models solve it, but not vice versa).
CaseDiagnosis diagnose(const CerMatrix& m, double tau);

}  // namespace metrics
