#pragma once

#include <cstdint>
#include <json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ink/ink.hpp"
#include "metrics/metrics.hpp"
#include "recognizer/recognizer.hpp"
#include "synth/synth.hpp"
#include "toyworld/toyworld.hpp"

namespace incubator {

inline constexpr std::string_view kToolVersion = "incubator 0.1.0";

// --- experiment configuration ---

struct SweepSection {
  std::vector<double> bias_grid = {0.0, 0.5, 1.0, 2.0, 5.0};
  int synth_count = 400;      // synthetic training samples per bias
  int synth_eval_count = 100; // synthetic evaluation samples per bias
  std::string style = "prior";           // or "ref" (collected train samples)
  std::string corpus_mode = "collected"; // or "expanded"
  int expand_n_min = 5;       // occurrences per excluded bigram when expanding
  double tau = 0.1;           // diagnosis threshold
  int beam_width = 0;         // 0 = greedy decoding
  std::string synth_ckpt;     // reuse this synthesizer; empty = train in-run
};

struct SeedsSection {
  uint64_t master = 1;
  std::vector<uint64_t> recognizer = {1, 2, 3};
};

struct IncubConfig {
  toyworld::ToyConfig toyworld;     // master_seed mirrors seeds.master
  synth::SynthConfig synth;         // seed derived from seeds.master
  recognizer::RecConfig recognizer; // seed comes from seeds.recognizer per run
  SweepSection sweep;
  SeedsSection seeds;
};

/// Parses the five-section experiment config. Every section is optional
/// (defaults apply), but any key present must be known; unknown keys are
/// errors naming their JSON path.
IncubConfig parse_config(const nlohmann::ordered_json& j);
IncubConfig load_config(const std::string& path);

/// Canonical snapshot of a config (stable key order, all fields explicit).
nlohmann::ordered_json config_json(const IncubConfig& cfg);

// --- dataset mixing ---

/// Either a synthetic-per-real ratio or explicit per-source counts.
/// ratio >= 0 wins; count -1 means "all available".
struct MixPolicy {
  double ratio = -1.0;
  int real_count = -1;
  int synth_count = -1;
};

/// Tags ids as r/<id> and s/<id>, subsamples each source to the policy's
/// counts, and shuffles deterministically under the seed. The identity
/// policy (all real, no synthetic) keeps the real order.
std::vector<ink::StrokeSample> mix_datasets(std::span<const ink::StrokeSample> real,
                                            std::span<const ink::StrokeSample> synth,
                                            const MixPolicy& policy, uint64_t seed);

// --- corpus expansion ---

struct ExpandResult {
  std::vector<std::string> texts;      // base corpus followed by the additions
  nlohmann::ordered_json report;       // per-target occurrence counts
};

/// Appends bigram-model words containing each target bigram until every
/// target occurs at least n_min times across the output. Empty targets pass
/// the base corpus through unchanged.
ExpandResult expand_corpus(const std::vector<std::string>& base,
                           const std::vector<std::string>& targets, int n_min,
                           const toyworld::ToyConfig& toy, uint64_t seed);

// --- synthesis driver ---

struct StyleSpec {
  bool prior = true;
  std::vector<ink::StrokeSample> refs; // style references when prior is false
};

struct SynthesisResult {
  std::vector<ink::StrokeSample> samples;
  int budget_hits = 0; // generations cut off at the step budget
};

/// Generates `count` samples with texts drawn from the corpus. Sample i is
/// produced entirely from the seed derived at index i, so the output is
/// independent of scheduling. Throws when every generation hits the step
/// budget (the synthesizer never finishes its content).
SynthesisResult synthesize(const synth::SynthModel& model,
                           const std::vector<std::string>& corpus, double bias, int count,
                           const StyleSpec& style, uint64_t seed);

// --- sweep ---

struct SweepEntry {
  double bias = 0.0;
  metrics::CerMatrix mean;                   // across seeds
  std::vector<metrics::CerMatrix> per_seed;  // seeds in config order
  metrics::CaseDiagnosis diagnosis;          // of the mean matrix
};

struct SweepReport {
  std::vector<SweepEntry> entries; // bias order = config grid order
  double b_star = 0.0;
  std::string selection_rule;

  nlohmann::ordered_json to_json() const;
  static SweepReport from_json(const nlohmann::ordered_json& j);
};

/// Runs the full incubation recipe into a fresh run directory:
/// data generation, synthesizer training (or checkpoint reuse), per-bias
/// synthesis, r/s/b recognizer training across seeds, CER matrices,
/// diagnoses, bias selection, manifest. The directory must not exist yet.
SweepReport run_sweep(const IncubConfig& cfg, const std::string& run_dir);

/// Renders the report bundle (CSV, SVG plot, summary, per-bias gallery)
/// under <run_dir>/report from a completed run. Throws on missing pieces.
void write_report(const std::string& run_dir);

// --- filesystem helpers shared with the CLI ---

std::vector<std::string> read_corpus(const std::string& path);
void write_corpus(const std::string& path, const std::vector<std::string>& texts);

/// Shortest round-trip decimal form (0.5 -> "0.5", 2.0 -> "2").
std::string format_number(double v);

}  // namespace incubator
