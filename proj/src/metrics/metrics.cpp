#include "metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metrics {

int edit_distance(const std::string& a, const std::string& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double cer(std::span<const std::pair<std::string, std::string>> pairs) {
  long long edits = 0, ref_len = 0;
  for (const auto& [ref, hyp] : pairs) {
    edits += edit_distance(ref, hyp);
    ref_len += static_cast<long long>(ref.size());
  }
  if (ref_len == 0)
    throw std::invalid_argument("cer: total reference length is zero");
  return static_cast<double>(edits) / static_cast<double>(ref_len);
}

double CerMatrix::at(char train, char eval) const {
  if (eval == 'r') {
    if (train == 'r') return m_rr;
    if (train == 's') return m_sr;
    if (train == 'b') return m_br;
  } else if (eval == 's') {
    if (train == 'r') return m_rs;
    if (train == 's') return m_ss;
    if (train == 'b') return m_bs;
  }
  throw std::invalid_argument(std::string("cer matrix: no entry m[") + train +
                              "][" + eval + "]");
}

nlohmann::ordered_json CerMatrix::to_json() const {
  nlohmann::ordered_json j;
  j["m_rr"] = m_rr;
  j["m_rs"] = m_rs;
  j["m_sr"] = m_sr;
  j["m_ss"] = m_ss;
  j["m_br"] = m_br;
  j["m_bs"] = m_bs;
  j["meta"] = meta;
  return j;
}

CerMatrix CerMatrix::from_json(const nlohmann::ordered_json& j) {
  CerMatrix m;
  for (const char* key : {"m_rr", "m_rs", "m_sr", "m_ss", "m_br", "m_bs"})
    if (!j.contains(key) || !j[key].is_number())
      throw std::runtime_error(std::string("cer matrix: missing numeric field '") +
                               key + "'");
  m.m_rr = j["m_rr"].get<double>();
  m.m_rs = j["m_rs"].get<double>();
  m.m_sr = j["m_sr"].get<double>();
  m.m_ss = j["m_ss"].get<double>();
  m.m_br = j["m_br"].get<double>();
  m.m_bs = j["m_bs"].get<double>();
  if (j.contains("meta")) m.meta = j["meta"];
  for (const char* key : {"m_rr", "m_rs", "m_sr", "m_ss", "m_br", "m_bs"})
    if (j[key].get<double>() < 0.0)
      throw std::runtime_error(std::string("cer matrix: negative entry '") + key +
                               "'");
  return m;
}

CerMatrix build_cer_matrix(const std::function<double(char, char)>& eval_cer,
                           nlohmann::ordered_json meta) {
  CerMatrix m;
  m.m_rr = eval_cer('r', 'r');
  m.m_rs = eval_cer('r', 's');
  m.m_sr = eval_cer('s', 'r');
  m.m_ss = eval_cer('s', 's');
  m.m_br = eval_cer('b', 'r');
  m.m_bs = eval_cer('b', 's');
  m.meta = std::move(meta);
  return m;
}

nlohmann::ordered_json CaseDiagnosis::to_json() const {
  nlohmann::ordered_json j;
  j["label"] = label;
  j["tau"] = tau;
  j["evidence"] = evidence;
  return j;
}

namespace {
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
}  // namespace

CaseDiagnosis diagnose(const CerMatrix& m, double tau) {
  if (!(tau > 0.0 && tau < 1.0))
    throw std::invalid_argument("diagnose: tau must be in (0,1), got " + num(tau));
  CaseDiagnosis d;
  d.tau = tau;
  const double lo = (1.0 - tau) * m.m_rr;
  const double hi = (1.0 + tau) * m.m_rr;

  const double best_real = std::min(m.m_sr, m.m_br);
  const bool c3 = best_real < lo;
  d.evidence.push_back("case3: min(m_sr=" + num(m.m_sr) + ", m_br=" + num(m.m_br) +
                       ") " + (c3 ? "<" : ">=") + " (1-tau)*m_rr=" + num(lo) +
                       (c3 ? " [satisfied]" : " [violated]"));
  if (c3) {
    d.label = "Case3";
    return d;
  }

  const bool synth_easy = m.m_ss < lo;
  const bool s_fails_real = m.m_sr > hi;
  const bool r_fails_synth = m.m_rs > hi;
  const bool r_solves_synth = m.m_rs < hi;
  d.evidence.push_back("synthetic self-fit: m_ss=" + num(m.m_ss) +
                       (synth_easy ? " < " : " >= ") + "(1-tau)*m_rr=" + num(lo) +
                       (synth_easy ? " [satisfied]" : " [violated]"));
  d.evidence.push_back("synthetic-to-real transfer gap: m_sr=" + num(m.m_sr) +
                       (s_fails_real ? " > " : " <= ") + "(1+tau)*m_rr=" + num(hi) +
                       (s_fails_real ? " [satisfied]" : " [violated]"));
  d.evidence.push_back("real-to-synthetic transfer gap: m_rs=" + num(m.m_rs) +
                       (r_fails_synth ? " > " : " <= ") + "(1+tau)*m_rr=" + num(hi) +
                       (r_fails_synth ? " [satisfied]" : " [violated]"));

  if (synth_easy && s_fails_real && r_fails_synth) {
    d.label = "Case1";
    return d;
  }
  if (synth_easy && r_solves_synth && s_fails_real) {
    d.label = "Case2";
    return d;
  }
  d.label = "Inconclusive";
  return d;
}

}  // namespace metrics
