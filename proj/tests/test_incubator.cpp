#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "common/digest.hpp"
#include "incubator/incubator.hpp"
#include "ink/codec.hpp"

namespace {

namespace fs = std::filesystem;
using incubator::IncubConfig;
using nlohmann::ordered_json;

ink::StrokeSample stub_sample(const std::string& id, const std::string& text) {
  ink::StrokeSample s;
  s.id = id;
  s.text = text;
  s.moves = {{0.1, 0.0, 1}, {0.0, 0.1, 1}, {0.1, 0.1, 0}};
  return s;
}

std::vector<ink::StrokeSample> stub_set(const std::string& prefix, int n) {
  std::vector<ink::StrokeSample> out;
  for (int i = 0; i < n; ++i) out.push_back(stub_sample(prefix + std::to_string(i), "ab"));
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string order_digest(const std::vector<ink::StrokeSample>& samples) {
  std::string ids;
  for (const auto& s : samples) ids += s.id + "\n";
  return ids;
}

/// Minimal XML well-formedness scan: every tag closes, quotes balance.
bool xml_well_formed(const std::string& doc) {
  std::vector<std::string> stack;
  size_t i = 0;
  while (i < doc.size()) {
    if (doc[i] != '<') {
      if (doc[i] == '>') return false;
      ++i;
      continue;
    }
    size_t j = i + 1;
    bool in_quote = false;
    while (j < doc.size() && (in_quote || doc[j] != '>')) {
      if (doc[j] == '"') in_quote = !in_quote;
      ++j;
    }
    if (j >= doc.size()) return false;
    std::string tag = doc.substr(i + 1, j - i - 1);
    i = j + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;
    const bool closing = tag[0] == '/';
    const bool self_closing = tag.back() == '/';
    std::string name;
    for (size_t k = closing ? 1 : 0; k < tag.size() && !std::isspace(static_cast<unsigned char>(tag[k])) && tag[k] != '/'; ++k) {
      name.push_back(tag[k]);
    }
    if (name.empty()) return false;
    if (closing) {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else if (!self_closing) {
      stack.push_back(name);
    }
  }
  return stack.empty();
}

IncubConfig micro_config() {
  ordered_json j;
  j["toyworld"] = {{"train_count", 24},   {"val_count", 8},      {"test_count", 8},
                   {"real_test_count", 12}, {"corpus_size", 16}, {"excluded_bigrams", {"ab", "cd"}},
                   {"word_len_max", 4}};
  j["synth"] = {{"d_c", 8},  {"d_h", 12},       {"d_z", 2},      {"d_e", 8},
                {"components", 3}, {"att_components", 2}, {"epochs", 2}, {"epoch_steps", 5},
                {"batch_size", 4}};
  j["recognizer"] = {{"conv1_channels", 4}, {"conv2_channels", 6}, {"kernel", 3}, {"hidden", 10},
                     {"epochs", 2},         {"epoch_steps", 4},    {"batch_size", 4}};
  j["sweep"] = {{"bias_grid", {0.0, 1.0}}, {"synth_count", 10}, {"synth_eval_count", 6}};
  j["seeds"] = {{"master", 3}, {"recognizer", {1, 2}}};
  return incubator::parse_config(j);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& rel) const { return (path / rel).string(); }
};

}  // namespace

TEST_CASE("format_number uses the shortest round-trip form") {
  CHECK(incubator::format_number(0.5) == "0.5");
  CHECK(incubator::format_number(2.0) == "2");
  CHECK(incubator::format_number(0.0) == "0");
}

TEST_CASE("parse_config applies defaults and rejects unknown keys") {
  const IncubConfig def = incubator::parse_config(ordered_json::object());
  CHECK(def.toyworld.train_count == 200);
  CHECK(def.sweep.bias_grid == std::vector<double>{0.0, 0.5, 1.0, 2.0, 5.0});
  CHECK(def.seeds.master == 1);
  CHECK(def.toyworld.master_seed == 1);

  ordered_json custom;
  custom["seeds"] = {{"master", 9}, {"recognizer", {4, 5}}};
  custom["toyworld"] = {{"train_count", 50}};
  custom["sweep"] = {{"bias_grid", {0.0, 2.0}}, {"style", "ref"}};
  const IncubConfig cfg = incubator::parse_config(custom);
  CHECK(cfg.toyworld.master_seed == 9);
  CHECK(cfg.recognizer.seed == 4);
  CHECK(cfg.sweep.style == "ref");

  // Snapshot round trip.
  const IncubConfig again = incubator::parse_config(incubator::config_json(cfg));
  CHECK(incubator::config_json(again) == incubator::config_json(cfg));

  CHECK_THROWS_AS(incubator::parse_config(ordered_json{{"bogus", 1}}), std::invalid_argument);
  CHECK_THROWS_AS(incubator::parse_config(ordered_json{{"toyworld", {{"bogus", 1}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(incubator::parse_config(ordered_json{{"sweep", {{"bias_grid", {1.0, 1.0}}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(incubator::parse_config(ordered_json{{"sweep", {{"bias_grid", {-1.0}}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(incubator::parse_config(ordered_json{{"sweep", {{"style", "odd"}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      incubator::parse_config(ordered_json{{"seeds", {{"recognizer", ordered_json::array()}}}}),
      std::invalid_argument);
}

TEST_CASE("mix_datasets follows the policy and stays deterministic") {
  const std::vector<ink::StrokeSample> real = stub_set("real", 100);
  const std::vector<ink::StrokeSample> synth = stub_set("syn", 150);

  incubator::MixPolicy ratio;
  ratio.ratio = 1.0;
  const auto mixed = incubator::mix_datasets(real, synth, ratio, 7);
  CHECK(mixed.size() == 200);
  int r = 0, s = 0;
  std::set<std::string> ids;
  for (const auto& m : mixed) {
    if (m.id.rfind("r/", 0) == 0) ++r;
    if (m.id.rfind("s/", 0) == 0) ++s;
    CHECK(ids.insert(m.id).second);
  }
  CHECK(r == 100);
  CHECK(s == 100);

  const auto again = incubator::mix_datasets(real, synth, ratio, 7);
  CHECK(order_digest(again) == order_digest(mixed));
  const auto other = incubator::mix_datasets(real, synth, ratio, 8);
  CHECK(order_digest(other) != order_digest(mixed));

  incubator::MixPolicy identity;
  identity.synth_count = 0;
  const auto only_real = incubator::mix_datasets(real, synth, identity, 7);
  REQUIRE(only_real.size() == real.size());
  for (size_t i = 0; i < real.size(); ++i) CHECK(only_real[i].id == "r/" + real[i].id);

  incubator::MixPolicy counts;
  counts.real_count = 30;
  counts.synth_count = 60;
  const auto sub = incubator::mix_datasets(real, synth, counts, 7);
  CHECK(sub.size() == 90);

  incubator::MixPolicy excess;
  excess.synth_count = 151;
  CHECK_THROWS_AS(incubator::mix_datasets(real, synth, excess, 7), std::invalid_argument);
  incubator::MixPolicy ratio_excess;
  ratio_excess.ratio = 2.0;
  CHECK_THROWS_AS(incubator::mix_datasets(real, synth, ratio_excess, 7), std::invalid_argument);
}

TEST_CASE("expand_corpus covers each target bigram at least n_min times") {
  toyworld::ToyConfig toy;
  const std::vector<std::string> base = {"ef", "gh", "ij"};

  const incubator::ExpandResult er =
      incubator::expand_corpus(base, {"ab", "cd"}, 5, toy, 12);
  REQUIRE(er.texts.size() >= base.size());
  for (size_t i = 0; i < base.size(); ++i) CHECK(er.texts[i] == base[i]);

  // Independent recount of the emitted texts.
  auto recount = [&](const std::string& bg) {
    int n = 0;
    for (const std::string& t : er.texts) {
      for (size_t i = 0; i + 1 < t.size(); ++i) {
        if (t[i] == bg[0] && t[i + 1] == bg[1]) ++n;
      }
    }
    return n;
  };
  CHECK(recount("ab") >= 5);
  CHECK(recount("cd") >= 5);
  CHECK(er.report["targets"]["ab"].get<int>() == recount("ab"));
  CHECK(er.report["targets"]["cd"].get<int>() == recount("cd"));
  CHECK(er.report["n_min"].get<int>() == 5);

  for (size_t i = base.size(); i < er.texts.size(); ++i) {
    const std::string& w = er.texts[i];
    CHECK(static_cast<int>(w.size()) >= toy.word_len_min);
    CHECK(static_cast<int>(w.size()) <= toy.word_len_max);
    for (char c : w) CHECK((c >= 'a' && c <= 'j'));
  }

  const incubator::ExpandResult none = incubator::expand_corpus(base, {}, 5, toy, 12);
  CHECK(none.texts == base);

  CHECK_THROWS_AS(incubator::expand_corpus(base, {"a"}, 5, toy, 12), std::invalid_argument);
  CHECK_THROWS_AS(incubator::expand_corpus(base, {"xz"}, 5, toy, 12), std::invalid_argument);

  // Determinism.
  const incubator::ExpandResult er2 = incubator::expand_corpus(base, {"ab", "cd"}, 5, toy, 12);
  CHECK(er2.texts == er.texts);
}

TEST_CASE("synthesize drives the generator deterministically") {
  synth::SynthConfig scfg;
  scfg.d_c = 8;
  scfg.d_h = 12;
  scfg.d_z = 2;
  scfg.d_e = 8;
  scfg.components = 3;
  scfg.att_components = 2;
  const synth::SynthModel model = synth::init_synth(scfg, toyworld::make_alphabet(10).chars());
  const std::vector<std::string> corpus = {"ab", "cde", "fg"};

  incubator::StyleSpec prior;
  const incubator::SynthesisResult r1 = incubator::synthesize(model, corpus, 0.5, 5, prior, 17);
  REQUIRE(r1.samples.size() == 5);
  CHECK(r1.samples[0].id == "syn-000000");
  CHECK(r1.samples[4].id == "syn-000004");
  for (const auto& s : r1.samples) {
    CHECK(s.writer == "synth");
    CHECK(s.lang == "toy");
    CHECK(!s.moves.empty());
  }

  const incubator::SynthesisResult r2 = incubator::synthesize(model, corpus, 0.5, 5, prior, 17);
  std::ostringstream a, b;
  ink::write_jsonl(a, r1.samples);
  ink::write_jsonl(b, r2.samples);
  CHECK(a.str() == b.str());

  CHECK_THROWS_AS(incubator::synthesize(model, {}, 0.5, 5, prior, 17), std::invalid_argument);
  incubator::StyleSpec no_refs;
  no_refs.prior = false;
  CHECK_THROWS_AS(incubator::synthesize(model, corpus, 0.5, 5, no_refs, 17),
                  std::invalid_argument);

  // Reference styles pass through the style encoder.
  incubator::StyleSpec with_refs;
  with_refs.prior = false;
  with_refs.refs = {stub_sample("ref0", "ab"), stub_sample("ref1", "fg")};
  const incubator::SynthesisResult r3 =
      incubator::synthesize(model, corpus, 0.5, 3, with_refs, 17);
  CHECK(r3.samples.size() == 3);

  // A window that cannot reach the end of the content trips the abort.
  synth::SynthConfig stuck = scfg;
  stuck.kappa_rate = 1e-9;
  const synth::SynthModel frozen = synth::init_synth(stuck, toyworld::make_alphabet(10).chars());
  CHECK_THROWS_AS(incubator::synthesize(frozen, corpus, 0.5, 3, prior, 17), std::runtime_error);
}

TEST_CASE("sweep report json round trip enforces its invariants") {
  incubator::SweepReport r;
  r.selection_rule = "argmin";
  r.b_star = 1.0;
  incubator::SweepEntry e0, e1;
  e0.bias = 0.0;
  e1.bias = 1.0;
  e0.diagnosis.label = "Case1";
  e1.diagnosis.label = "Case2";
  r.entries = {e0, e1};
  const ordered_json j = r.to_json();
  const incubator::SweepReport back = incubator::SweepReport::from_json(j);
  CHECK(back.b_star == 1.0);
  CHECK(back.entries.size() == 2);
  CHECK(back.entries[1].diagnosis.label == "Case2");

  ordered_json bad = j;
  bad["b_star"] = 7.0;
  CHECK_THROWS_AS(incubator::SweepReport::from_json(bad), std::runtime_error);
  ordered_json swapped = j;
  swapped["entries"][0]["bias"] = 2.0;
  CHECK_THROWS_AS(incubator::SweepReport::from_json(swapped), std::runtime_error);
}

TEST_CASE("run_sweep produces a reproducible run directory") {
  const IncubConfig cfg = micro_config();
  TempDir run1("incub_sweep_run1");
  TempDir run2("incub_sweep_run2");

  const incubator::SweepReport report = incubator::run_sweep(cfg, run1.str());
  REQUIRE(report.entries.size() == 2);
  CHECK(report.entries[0].bias == 0.0);
  CHECK(report.entries[1].bias == 1.0);
  CHECK((report.b_star == 0.0 || report.b_star == 1.0));

  // b* self-consistency with the report's own matrices.
  const double mean0 = report.entries[0].mean.m_br;
  const double mean1 = report.entries[1].mean.m_br;
  CHECK(report.b_star == (mean0 <= mean1 ? 0.0 : 1.0));
  CHECK(report.entries[0].per_seed.size() == 2);

  for (const char* rel :
       {"config.json", "manifest.json", "timings.json", "data/train.jsonl", "data/val.jsonl",
        "data/test.jsonl", "data/real_test.jsonl", "data/corpus.txt", "data/corpus_used.txt",
        "data/gap_report.json", "ckpt/synth.bin", "ckpt/rec_r_seed1.bin", "ckpt/rec_r_seed2.bin",
        "data/synth_train_b0.jsonl", "data/synth_eval_b1.jsonl", "metrics/bias_0_seed_1.json",
        "metrics/bias_1_seed_2.json", "metrics/bias_0_mean.json", "metrics/sweep_report.json"}) {
    CAPTURE(rel);
    CHECK(fs::exists(run1.sub(rel)));
  }

  // Refuses to reuse a directory.
  CHECK_THROWS_AS(incubator::run_sweep(cfg, run1.str()), std::runtime_error);

  // Byte-identical rerun: every metric file and the manifest.
  incubator::run_sweep(cfg, run2.str());
  for (const char* rel :
       {"manifest.json", "config.json", "metrics/bias_0_seed_1.json", "metrics/bias_0_seed_2.json",
        "metrics/bias_1_seed_1.json", "metrics/bias_1_seed_2.json", "metrics/bias_0_mean.json",
        "metrics/bias_1_mean.json", "metrics/sweep_report.json", "data/train.jsonl",
        "data/synth_train_b1.jsonl"}) {
    CAPTURE(rel);
    CHECK(slurp(run1.sub(rel)) == slurp(run2.sub(rel)));
  }

  // Manifest digests match the files on disk.
  ordered_json manifest;
  {
    std::ifstream in(run1.sub("manifest.json"));
    in >> manifest;
  }
  CHECK(manifest["tool"] == std::string(incubator::kToolVersion));
  for (const auto& [rel, digest] : manifest["metrics"].items()) {
    CHECK(common::sha256_file(run1.sub(rel)) == digest.get<std::string>());
  }

  // Synthetic datasets pass ink validation on read-back.
  const ink::Alphabet alpha = toyworld::make_alphabet(10);
  const ink::ReadResult rr = ink::read_jsonl_file(run1.sub("data/synth_train_b0.jsonl"), &alpha);
  CHECK(rr.samples.size() == 10);
  for (const auto& s : rr.samples) ink::validate(s, &alpha);

  // Report bundle.
  incubator::write_report(run1.str());
  const std::string csv = slurp(run1.sub("report/cer_curves.csv"));
  int lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 1 + 2 * 2 * 6);  // header + |grid| * |seeds| * 6
  const std::string svg = slurp(run1.sub("report/cer_plot.svg"));
  CHECK(xml_well_formed(svg));
  const std::string md = slurp(run1.sub("report/summary.md"));
  CHECK(md.find(incubator::format_number(report.b_star)) != std::string::npos);
  CHECK(fs::exists(run1.sub("report/gallery/bias_0_0.svg")));
  CHECK(xml_well_formed(slurp(run1.sub("report/gallery/bias_1_0.svg"))));

  // Reports are reproducible too.
  incubator::write_report(run2.str());
  CHECK(slurp(run2.sub("report/cer_curves.csv")) == csv);
  CHECK(slurp(run2.sub("report/cer_plot.svg")) == svg);
  CHECK(slurp(run2.sub("report/summary.md")) == md);

  TempDir empty("incub_sweep_empty");
  fs::create_directories(empty.path);
  CHECK_THROWS_AS(incubator::write_report(empty.str()), std::runtime_error);
}

TEST_CASE("run_sweep rejects a missing synthesizer checkpoint") {
  IncubConfig cfg = micro_config();
  cfg.sweep.synth_ckpt = "/nonexistent/synth.bin";
  TempDir run("incub_sweep_missing_ckpt");
  CHECK_THROWS_AS(incubator::run_sweep(cfg, run.str()), std::runtime_error);
}
