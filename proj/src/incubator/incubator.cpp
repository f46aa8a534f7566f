#include "incubator/incubator.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "common/digest.hpp"
#include "common/rng.hpp"
#include "ink/codec.hpp"
#include "ink/svg.hpp"
#include "numerics/checkpoint.hpp"

namespace incubator {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// --- config parsing ---

namespace {

void reject_unknown(const ordered_json& j, const std::set<std::string>& known,
                    const std::string& path) {
  if (!j.is_object()) throw std::invalid_argument("config: " + path + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) {
      throw std::invalid_argument("config: unknown key " + path + "." + key);
    }
  }
}

template <typename T>
void read_field(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j[key].get<T>();
}

void parse_toyworld(const ordered_json& j, toyworld::ToyConfig& cfg) {
  reject_unknown(j, {"alphabet_size", "clusters", "collected_clusters", "excluded_bigrams",
                     "train_count", "val_count", "test_count", "real_test_count", "corpus_size",
                     "writers_per_cluster", "word_len_min", "word_len_max"},
                 "toyworld");
  read_field(j, "alphabet_size", cfg.alphabet_size);
  read_field(j, "clusters", cfg.clusters);
  read_field(j, "collected_clusters", cfg.collected_clusters);
  read_field(j, "excluded_bigrams", cfg.excluded_bigrams);
  read_field(j, "train_count", cfg.train_count);
  read_field(j, "val_count", cfg.val_count);
  read_field(j, "test_count", cfg.test_count);
  read_field(j, "real_test_count", cfg.real_test_count);
  read_field(j, "corpus_size", cfg.corpus_size);
  read_field(j, "writers_per_cluster", cfg.writers_per_cluster);
  read_field(j, "word_len_min", cfg.word_len_min);
  read_field(j, "word_len_max", cfg.word_len_max);
}

void parse_synth(const ordered_json& j, synth::SynthConfig& cfg) {
  reject_unknown(j, {"d_c", "d_h", "d_z", "d_e", "components", "att_components", "kappa_rate",
                     "eps_z", "epochs", "epoch_steps", "batch_size", "lr", "clip_norm",
                     "beta_warmup_frac", "langs"},
                 "synth");
  read_field(j, "d_c", cfg.d_c);
  read_field(j, "d_h", cfg.d_h);
  read_field(j, "d_z", cfg.d_z);
  read_field(j, "d_e", cfg.d_e);
  read_field(j, "components", cfg.components);
  read_field(j, "att_components", cfg.att_components);
  read_field(j, "kappa_rate", cfg.kappa_rate);
  read_field(j, "eps_z", cfg.eps_z);
  read_field(j, "epochs", cfg.epochs);
  read_field(j, "epoch_steps", cfg.epoch_steps);
  read_field(j, "batch_size", cfg.batch_size);
  read_field(j, "lr", cfg.lr);
  read_field(j, "clip_norm", cfg.clip_norm);
  read_field(j, "beta_warmup_frac", cfg.beta_warmup_frac);
  read_field(j, "langs", cfg.langs);
}

void parse_recognizer(const ordered_json& j, recognizer::RecConfig& cfg) {
  reject_unknown(j, {"conv1_channels", "conv2_channels", "kernel", "hidden", "epochs",
                     "epoch_steps", "batch_size", "lr", "clip_norm"},
                 "recognizer");
  read_field(j, "conv1_channels", cfg.conv1_channels);
  read_field(j, "conv2_channels", cfg.conv2_channels);
  read_field(j, "kernel", cfg.kernel);
  read_field(j, "hidden", cfg.hidden);
  read_field(j, "epochs", cfg.epochs);
  read_field(j, "epoch_steps", cfg.epoch_steps);
  read_field(j, "batch_size", cfg.batch_size);
  read_field(j, "lr", cfg.lr);
  read_field(j, "clip_norm", cfg.clip_norm);
}

void parse_sweep(const ordered_json& j, SweepSection& cfg) {
  reject_unknown(j, {"bias_grid", "synth_count", "synth_eval_count", "style", "corpus_mode",
                     "expand_n_min", "tau", "beam_width", "synth_ckpt"},
                 "sweep");
  read_field(j, "bias_grid", cfg.bias_grid);
  read_field(j, "synth_count", cfg.synth_count);
  read_field(j, "synth_eval_count", cfg.synth_eval_count);
  read_field(j, "style", cfg.style);
  read_field(j, "corpus_mode", cfg.corpus_mode);
  read_field(j, "expand_n_min", cfg.expand_n_min);
  read_field(j, "tau", cfg.tau);
  read_field(j, "beam_width", cfg.beam_width);
  read_field(j, "synth_ckpt", cfg.synth_ckpt);
}

void parse_seeds(const ordered_json& j, SeedsSection& cfg) {
  reject_unknown(j, {"master", "recognizer"}, "seeds");
  read_field(j, "master", cfg.master);
  read_field(j, "recognizer", cfg.recognizer);
}

/// Seed wiring: toyworld takes the master seed, the synthesizer trains under
/// a derived seed, standalone recognizer commands use the first sweep seed.
void apply_seeds(IncubConfig& cfg) {
  cfg.toyworld.master_seed = cfg.seeds.master;
  cfg.synth.seed = common::derive_seed(cfg.seeds.master, 101);
  cfg.recognizer.seed = cfg.seeds.recognizer.empty() ? 1 : cfg.seeds.recognizer.front();
}

}  // namespace

IncubConfig parse_config(const ordered_json& j) {
  reject_unknown(j, {"toyworld", "synth", "recognizer", "sweep", "seeds"}, "$");
  IncubConfig cfg;
  if (j.contains("toyworld")) parse_toyworld(j["toyworld"], cfg.toyworld);
  if (j.contains("synth")) parse_synth(j["synth"], cfg.synth);
  if (j.contains("recognizer")) parse_recognizer(j["recognizer"], cfg.recognizer);
  if (j.contains("sweep")) parse_sweep(j["sweep"], cfg.sweep);
  if (j.contains("seeds")) parse_seeds(j["seeds"], cfg.seeds);
  apply_seeds(cfg);

  if (cfg.sweep.bias_grid.empty()) throw std::invalid_argument("config: sweep.bias_grid is empty");
  for (size_t i = 0; i < cfg.sweep.bias_grid.size(); ++i) {
    if (cfg.sweep.bias_grid[i] < 0) throw std::invalid_argument("config: negative bias");
    if (i > 0 && cfg.sweep.bias_grid[i] <= cfg.sweep.bias_grid[i - 1]) {
      throw std::invalid_argument("config: sweep.bias_grid must be strictly increasing");
    }
  }
  if (cfg.sweep.style != "prior" && cfg.sweep.style != "ref") {
    throw std::invalid_argument("config: sweep.style must be 'prior' or 'ref'");
  }
  if (cfg.sweep.corpus_mode != "collected" && cfg.sweep.corpus_mode != "expanded") {
    throw std::invalid_argument("config: sweep.corpus_mode must be 'collected' or 'expanded'");
  }
  if (cfg.sweep.synth_count < 0 || cfg.sweep.synth_eval_count < 1) {
    throw std::invalid_argument("config: sweep synthesis counts out of range");
  }
  if (cfg.sweep.expand_n_min < 1) throw std::invalid_argument("config: expand_n_min must be >= 1");
  if (cfg.seeds.recognizer.empty()) {
    throw std::invalid_argument("config: seeds.recognizer list is empty");
  }
  return cfg;
}

IncubConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  return parse_config(j);
}

nlohmann::ordered_json config_json(const IncubConfig& cfg) {
  ordered_json j;
  ordered_json& t = j["toyworld"];
  t["alphabet_size"] = cfg.toyworld.alphabet_size;
  t["clusters"] = cfg.toyworld.clusters;
  t["collected_clusters"] = cfg.toyworld.collected_clusters;
  t["excluded_bigrams"] = cfg.toyworld.excluded_bigrams;
  t["train_count"] = cfg.toyworld.train_count;
  t["val_count"] = cfg.toyworld.val_count;
  t["test_count"] = cfg.toyworld.test_count;
  t["real_test_count"] = cfg.toyworld.real_test_count;
  t["corpus_size"] = cfg.toyworld.corpus_size;
  t["writers_per_cluster"] = cfg.toyworld.writers_per_cluster;
  t["word_len_min"] = cfg.toyworld.word_len_min;
  t["word_len_max"] = cfg.toyworld.word_len_max;
  ordered_json& s = j["synth"];
  s["d_c"] = cfg.synth.d_c;
  s["d_h"] = cfg.synth.d_h;
  s["d_z"] = cfg.synth.d_z;
  s["d_e"] = cfg.synth.d_e;
  s["components"] = cfg.synth.components;
  s["att_components"] = cfg.synth.att_components;
  s["kappa_rate"] = cfg.synth.kappa_rate;
  s["eps_z"] = cfg.synth.eps_z;
  s["epochs"] = cfg.synth.epochs;
  s["epoch_steps"] = cfg.synth.epoch_steps;
  s["batch_size"] = cfg.synth.batch_size;
  s["lr"] = cfg.synth.lr;
  s["clip_norm"] = cfg.synth.clip_norm;
  s["beta_warmup_frac"] = cfg.synth.beta_warmup_frac;
  s["langs"] = cfg.synth.langs;
  ordered_json& r = j["recognizer"];
  r["conv1_channels"] = cfg.recognizer.conv1_channels;
  r["conv2_channels"] = cfg.recognizer.conv2_channels;
  r["kernel"] = cfg.recognizer.kernel;
  r["hidden"] = cfg.recognizer.hidden;
  r["epochs"] = cfg.recognizer.epochs;
  r["epoch_steps"] = cfg.recognizer.epoch_steps;
  r["batch_size"] = cfg.recognizer.batch_size;
  r["lr"] = cfg.recognizer.lr;
  r["clip_norm"] = cfg.recognizer.clip_norm;
  ordered_json& w = j["sweep"];
  w["bias_grid"] = cfg.sweep.bias_grid;
  w["synth_count"] = cfg.sweep.synth_count;
  w["synth_eval_count"] = cfg.sweep.synth_eval_count;
  w["style"] = cfg.sweep.style;
  w["corpus_mode"] = cfg.sweep.corpus_mode;
  w["expand_n_min"] = cfg.sweep.expand_n_min;
  w["tau"] = cfg.sweep.tau;
  w["beam_width"] = cfg.sweep.beam_width;
  w["synth_ckpt"] = cfg.sweep.synth_ckpt;
  ordered_json& e = j["seeds"];
  e["master"] = cfg.seeds.master;
  e["recognizer"] = cfg.seeds.recognizer;
  return j;
}

// --- dataset mixing ---

namespace {

void fisher_yates(std::vector<int>& idx, common::Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    const size_t k = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[k]);
  }
}

}  // namespace

std::vector<ink::StrokeSample> mix_datasets(std::span<const ink::StrokeSample> real,
                                            std::span<const ink::StrokeSample> synth,
                                            const MixPolicy& policy, uint64_t seed) {
  const int avail_r = static_cast<int>(real.size());
  const int avail_s = static_cast<int>(synth.size());
  int take_r, take_s;
  if (policy.ratio >= 0.0) {
    take_r = avail_r;
    take_s = static_cast<int>(std::llround(policy.ratio * take_r));
  } else {
    take_r = policy.real_count < 0 ? avail_r : policy.real_count;
    take_s = policy.synth_count < 0 ? avail_s : policy.synth_count;
  }
  if (take_r > avail_r) {
    throw std::invalid_argument("mix: " + std::to_string(take_r) + " real samples requested, " +
                                std::to_string(avail_r) + " available");
  }
  if (take_s > avail_s) {
    throw std::invalid_argument("mix: " + std::to_string(take_s) + " synthetic samples requested, " +
                                std::to_string(avail_s) + " available");
  }

  auto tagged = [](const ink::StrokeSample& s, const char* tag) {
    ink::StrokeSample out = s;
    out.id = tag + s.id;
    return out;
  };

  // Identity policy: all real, nothing synthetic, original order.
  if (take_s == 0 && take_r == avail_r) {
    std::vector<ink::StrokeSample> out;
    out.reserve(real.size());
    for (const auto& s : real) out.push_back(tagged(s, "r/"));
    return out;
  }

  common::Rng rng(seed);
  std::vector<int> ri(static_cast<size_t>(avail_r)), si(static_cast<size_t>(avail_s));
  for (int i = 0; i < avail_r; ++i) ri[static_cast<size_t>(i)] = i;
  for (int i = 0; i < avail_s; ++i) si[static_cast<size_t>(i)] = i;
  fisher_yates(ri, rng);
  fisher_yates(si, rng);

  std::vector<ink::StrokeSample> out;
  out.reserve(static_cast<size_t>(take_r + take_s));
  for (int i = 0; i < take_r; ++i) out.push_back(tagged(real[static_cast<size_t>(ri[static_cast<size_t>(i)])], "r/"));
  for (int i = 0; i < take_s; ++i) out.push_back(tagged(synth[static_cast<size_t>(si[static_cast<size_t>(i)])], "s/"));

  std::vector<int> order(out.size());
  for (size_t i = 0; i < out.size(); ++i) order[i] = static_cast<int>(i);
  fisher_yates(order, rng);
  std::vector<ink::StrokeSample> shuffled;
  shuffled.reserve(out.size());
  for (int i : order) shuffled.push_back(std::move(out[static_cast<size_t>(i)]));

  std::set<std::string> ids;
  for (const auto& s : shuffled) {
    if (!ids.insert(s.id).second) throw std::invalid_argument("mix: duplicate id " + s.id);
  }
  return shuffled;
}

// --- corpus expansion ---

namespace {

int count_occurrences(const std::string& text, const std::string& bigram) {
  int n = 0;
  for (size_t i = 0; i + 1 < text.size(); ++i) {
    if (text[i] == bigram[0] && text[i + 1] == bigram[1]) ++n;
  }
  return n;
}

}  // namespace

ExpandResult expand_corpus(const std::vector<std::string>& base,
                           const std::vector<std::string>& targets, int n_min,
                           const toyworld::ToyConfig& toy, uint64_t seed) {
  if (n_min < 1) throw std::invalid_argument("expand: n_min must be >= 1");
  const ink::Alphabet alpha = toyworld::make_alphabet(toy.alphabet_size);
  for (const std::string& t : targets) {
    if (t.size() != 2 || alpha.index_of(t[0]) < 0 || alpha.index_of(t[1]) < 0) {
      throw std::invalid_argument("expand: target '" + t + "' is not a bigram over the alphabet");
    }
  }

  ExpandResult out;
  out.texts = base;
  std::map<std::string, int> counts;
  for (const std::string& t : targets) {
    int n = 0;
    for (const std::string& text : base) n += count_occurrences(text, t);
    counts[t] = n;
  }

  const int Q = alpha.size();
  common::Rng rng(seed);
  auto weighted_pick = [&](auto weight_of) {
    std::vector<double> probs(static_cast<size_t>(Q));
    double total = 0.0;
    for (int c = 0; c < Q; ++c) {
      probs[static_cast<size_t>(c)] = weight_of(c);
      total += probs[static_cast<size_t>(c)];
    }
    for (double& p : probs) p /= total;
    return rng.categorical(probs);
  };

  int added = 0;
  for (const std::string& t : targets) {
    const int p = alpha.index_of(t[0]);
    const int n = alpha.index_of(t[1]);
    while (counts[t] < n_min) {
      const int len = toy.word_len_min +
                      static_cast<int>(rng.uniform_index(
                          static_cast<uint64_t>(toy.word_len_max - toy.word_len_min + 1)));
      const int pos = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(len - 1)));
      std::vector<int> chars(static_cast<size_t>(len));
      chars[static_cast<size_t>(pos)] = p;
      chars[static_cast<size_t>(pos + 1)] = n;
      for (int i = pos - 1; i >= 0; --i) {
        const int next = chars[static_cast<size_t>(i + 1)];
        chars[static_cast<size_t>(i)] = weighted_pick([&](int c) { return toyworld::bigram_weight(c, next); });
      }
      for (int i = pos + 2; i < len; ++i) {
        const int prev = chars[static_cast<size_t>(i - 1)];
        chars[static_cast<size_t>(i)] = weighted_pick([&](int c) { return toyworld::bigram_weight(prev, c); });
      }
      std::string word;
      for (int c : chars) word.push_back(alpha.at(c));
      out.texts.push_back(word);
      ++added;
      for (auto& [key, cnt] : counts) cnt += count_occurrences(word, key);
    }
  }

  out.report["n_min"] = n_min;
  out.report["base_size"] = static_cast<int>(base.size());
  out.report["added"] = added;
  ordered_json tj = ordered_json::object();
  for (const auto& [key, cnt] : counts) tj[key] = cnt;
  out.report["targets"] = tj;
  return out;
}

// --- synthesis driver ---

SynthesisResult synthesize(const synth::SynthModel& model,
                           const std::vector<std::string>& corpus, double bias, int count,
                           const StyleSpec& style, uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("synthesize: empty corpus");
  if (count < 0) throw std::invalid_argument("synthesize: negative count");
  if (!style.prior && style.refs.empty()) {
    throw std::invalid_argument("synthesize: reference style without references");
  }
  std::vector<std::vector<double>> ref_styles;
  ref_styles.reserve(style.refs.size());
  for (const ink::StrokeSample& ref : style.refs) {
    ref_styles.push_back(synth::encode_style(model, ref));
  }
  const ink::Alphabet alpha(model.alphabet);

  SynthesisResult out;
  out.samples.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    common::Rng rng(common::derive_seed(seed, static_cast<uint64_t>(i)));
    const std::string& text = corpus[rng.uniform_index(corpus.size())];
    synth::StyleSource src = synth::PriorSample{};
    if (!style.prior) {
      src = synth::Reference{ref_styles[rng.uniform_index(ref_styles.size())]};
    }
    const int t_max = synth::default_t_max(static_cast<int>(text.size()));
    ink::StrokeSample s = synth::generate(model, text, src, bias, rng, t_max);
    if (static_cast<int>(s.moves.size()) >= t_max) ++out.budget_hits;
    char id[32];
    std::snprintf(id, sizeof(id), "syn-%06d", i);
    s.id = id;
    s.writer = "synth";
    s.lang = "toy";
    try {
      ink::validate(s, &alpha);
    } catch (const std::exception& e) {
      throw std::runtime_error("synthesize: sample " + s.id + " invalid: " + e.what());
    }
    out.samples.push_back(std::move(s));
  }
  if (count > 0 && out.budget_hits == count) {
    throw std::runtime_error(
        "synthesize: every generation hit the step budget; the synthesizer never "
        "finishes its content (undertrained model or runaway attention)");
  }
  return out;
}

// --- corpus files ---

std::vector<std::string> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus: " + path);
  std::vector<std::string> texts;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) texts.push_back(line);
  }
  if (texts.empty()) throw std::runtime_error("corpus is empty: " + path);
  return texts;
}

void write_corpus(const std::string& path, const std::vector<std::string>& texts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus: " + path);
  for (const std::string& t : texts) out << t << '\n';
}

// --- sweep report ---

nlohmann::ordered_json SweepReport::to_json() const {
  ordered_json j;
  j["selection_rule"] = selection_rule;
  j["b_star"] = b_star;
  ordered_json entries_j = ordered_json::array();
  for (const SweepEntry& e : entries) {
    ordered_json ej;
    ej["bias"] = e.bias;
    ej["matrix"] = e.mean.to_json();
    ej["diagnosis"] = e.diagnosis.to_json();
    ordered_json per = ordered_json::array();
    for (const metrics::CerMatrix& m : e.per_seed) per.push_back(m.to_json());
    ej["per_seed"] = per;
    entries_j.push_back(ej);
  }
  j["entries"] = entries_j;
  return j;
}

SweepReport SweepReport::from_json(const nlohmann::ordered_json& j) {
  SweepReport r;
  r.selection_rule = j.at("selection_rule").get<std::string>();
  r.b_star = j.at("b_star").get<double>();
  for (const auto& ej : j.at("entries")) {
    SweepEntry e;
    e.bias = ej.at("bias").get<double>();
    e.mean = metrics::CerMatrix::from_json(ej.at("matrix"));
    e.diagnosis.label = ej.at("diagnosis").at("label").get<std::string>();
    e.diagnosis.tau = ej.at("diagnosis").at("tau").get<double>();
    e.diagnosis.evidence = ej.at("diagnosis").at("evidence").get<std::vector<std::string>>();
    for (const auto& mj : ej.at("per_seed")) e.per_seed.push_back(metrics::CerMatrix::from_json(mj));
    r.entries.push_back(std::move(e));
  }
  for (size_t i = 1; i < r.entries.size(); ++i) {
    if (r.entries[i].bias <= r.entries[i - 1].bias) {
      throw std::runtime_error("sweep report: biases not strictly increasing");
    }
  }
  const bool present = std::any_of(r.entries.begin(), r.entries.end(),
                                   [&](const SweepEntry& e) { return e.bias == r.b_star; });
  if (!r.entries.empty() && !present) throw std::runtime_error("sweep report: b* not in the grid");
  return r;
}

// --- sweep ---

namespace {

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

void write_json_file(const std::string& path, const ordered_json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

void write_samples(const std::string& path, std::span<const ink::StrokeSample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  ink::write_jsonl(out, samples);
}

double slice_cer(const std::vector<recognizer::Prediction>& preds,
                 const std::set<std::string>& ids) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const recognizer::Prediction& p : preds) {
    if (ids.contains(p.id)) pairs.emplace_back(p.ref, p.hyp);
  }
  return pairs.empty() ? 0.0 : metrics::cer(pairs);
}

struct StageClock {
  std::chrono::steady_clock::time_point last = std::chrono::steady_clock::now();
  ordered_json timings = ordered_json::object();
  void lap(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    timings[name] = std::chrono::duration<double>(now - last).count();
    last = now;
  }
};

}  // namespace

SweepReport run_sweep(const IncubConfig& cfg_in, const std::string& run_dir) {
  IncubConfig cfg = cfg_in;
  apply_seeds(cfg);
  if (fs::exists(run_dir)) throw std::runtime_error("run directory already exists: " + run_dir);
  if (cfg.sweep.bias_grid.empty()) throw std::invalid_argument("sweep: empty bias grid");
  for (size_t i = 1; i < cfg.sweep.bias_grid.size(); ++i) {
    if (cfg.sweep.bias_grid[i] <= cfg.sweep.bias_grid[i - 1]) {
      throw std::invalid_argument("sweep: bias grid must be strictly increasing");
    }
  }
  if (cfg.seeds.recognizer.empty()) throw std::invalid_argument("sweep: no recognizer seeds");
  if (!cfg.sweep.synth_ckpt.empty() && !fs::exists(cfg.sweep.synth_ckpt)) {
    throw std::runtime_error("sweep: missing synthesizer checkpoint " + cfg.sweep.synth_ckpt);
  }

  fs::create_directories(fs::path(run_dir) / "data");
  fs::create_directories(fs::path(run_dir) / "ckpt");
  fs::create_directories(fs::path(run_dir) / "metrics");
  const auto under = [&](const std::string& rel) { return (fs::path(run_dir) / rel).string(); };

  StageClock clock;
  std::vector<std::string> dataset_files, ckpt_files, metric_files;

  write_json_file(under("config.json"), config_json(cfg));

  // Toy data.
  const toyworld::ToyDataset ds = toyworld::build_dataset(cfg.toyworld);
  const ink::Alphabet alpha = toyworld::make_alphabet(cfg.toyworld.alphabet_size);
  const std::string& alpha_str = alpha.chars();
  write_samples(under("data/train.jsonl"), ds.train);
  write_samples(under("data/val.jsonl"), ds.val);
  write_samples(under("data/test.jsonl"), ds.test);
  write_samples(under("data/real_test.jsonl"), ds.real_test);
  write_corpus(under("data/corpus.txt"), ds.corpus);
  write_json_file(under("data/gap_report.json"), ds.gap_report);
  for (const char* f : {"data/train.jsonl", "data/val.jsonl", "data/test.jsonl",
                        "data/real_test.jsonl", "data/corpus.txt", "data/gap_report.json"}) {
    dataset_files.push_back(f);
  }
  clock.lap("toygen_s");

  // Synthesizer.
  synth::SynthModel smodel = [&] {
    if (!cfg.sweep.synth_ckpt.empty()) {
      synth::SynthModel m = synth::synth_from_checkpoint(numerics::load_checkpoint(cfg.sweep.synth_ckpt));
      if (m.alphabet != alpha_str) {
        throw std::runtime_error("sweep: checkpoint alphabet does not match the toy world");
      }
      return m;
    }
    return synth::train_synth(ds.train, ds.val, alpha_str, cfg.synth).model;
  }();
  numerics::save_checkpoint(under("ckpt/synth.bin"), synth::to_checkpoint(smodel));
  ckpt_files.push_back("ckpt/synth.bin");
  clock.lap("train_synth_s");

  // Synthesis corpus (the collected texts, or their gap-covering expansion).
  std::vector<std::string> syn_corpus = ds.corpus;
  if (cfg.sweep.corpus_mode == "expanded") {
    ExpandResult er = expand_corpus(ds.corpus, cfg.toyworld.excluded_bigrams,
                                    cfg.sweep.expand_n_min, cfg.toyworld,
                                    common::derive_seed(cfg.seeds.master, 201));
    syn_corpus = std::move(er.texts);
    write_json_file(under("data/expand_report.json"), er.report);
    dataset_files.push_back("data/expand_report.json");
  }
  write_corpus(under("data/corpus_used.txt"), syn_corpus);
  dataset_files.push_back("data/corpus_used.txt");

  StyleSpec style;
  style.prior = cfg.sweep.style == "prior";
  if (!style.prior) style.refs = ds.train;

  // Gap slice of the real test set: texts containing an excluded bigram.
  std::set<std::string> gap_ids;
  for (const ink::StrokeSample& s : ds.real_test) {
    for (const std::string& bg : cfg.toyworld.excluded_bigrams) {
      if (count_occurrences(s.text, bg) > 0) {
        gap_ids.insert(s.id);
        break;
      }
    }
  }

  const recognizer::DecodeSpec decode{cfg.sweep.beam_width};
  const size_t S = cfg.seeds.recognizer.size();

  // Real-only recognizers, one per seed, shared across the grid.
  std::vector<recognizer::RecModel> r_models;
  std::vector<double> rr_cer(S), gap_rr(S);
  std::vector<recognizer::EvalResult> rr_eval(S);
  for (size_t j = 0; j < S; ++j) {
    recognizer::RecConfig rcfg = cfg.recognizer;
    rcfg.seed = cfg.seeds.recognizer[j];
    recognizer::TrainRecResult tr = recognizer::train_rec(ds.train, ds.val, alpha_str, rcfg);
    const std::string rel = "ckpt/rec_r_seed" + std::to_string(rcfg.seed) + ".bin";
    numerics::save_checkpoint(under(rel), recognizer::to_checkpoint(tr.model));
    ckpt_files.push_back(rel);
    rr_eval[j] = recognizer::evaluate(tr.model, ds.real_test, decode);
    rr_cer[j] = rr_eval[j].cer;
    gap_rr[j] = slice_cer(rr_eval[j].predictions, gap_ids);
    r_models.push_back(std::move(tr.model));
  }
  clock.lap("train_real_recognizers_s");

  SweepReport report;
  report.selection_rule = "argmin over the bias grid of mean m[b][r] across seeds";
  double best_mean_br = std::numeric_limits<double>::infinity();

  for (size_t i = 0; i < cfg.sweep.bias_grid.size(); ++i) {
    const double bias = cfg.sweep.bias_grid[i];
    const std::string btag = format_number(bias);

    const SynthesisResult strain =
        synthesize(smodel, syn_corpus, bias, cfg.sweep.synth_count, style,
                   common::derive_seed(cfg.seeds.master, 300 + static_cast<uint64_t>(i)));
    const SynthesisResult seval =
        synthesize(smodel, syn_corpus, bias, cfg.sweep.synth_eval_count, style,
                   common::derive_seed(cfg.seeds.master, 400 + static_cast<uint64_t>(i)));
    write_samples(under("data/synth_train_b" + btag + ".jsonl"), strain.samples);
    write_samples(under("data/synth_eval_b" + btag + ".jsonl"), seval.samples);
    dataset_files.push_back("data/synth_train_b" + btag + ".jsonl");
    dataset_files.push_back("data/synth_eval_b" + btag + ".jsonl");

    MixPolicy policy;
    policy.real_count = -1;
    policy.synth_count = -1;
    const std::vector<ink::StrokeSample> mixed =
        mix_datasets(ds.train, strain.samples, policy,
                     common::derive_seed(cfg.seeds.master, 500 + static_cast<uint64_t>(i)));

    SweepEntry entry;
    entry.bias = bias;
    for (size_t j = 0; j < S; ++j) {
      const uint64_t seed = cfg.seeds.recognizer[j];
      recognizer::RecConfig rcfg = cfg.recognizer;
      rcfg.seed = seed;

      recognizer::TrainRecResult ts = recognizer::train_rec(strain.samples, ds.val, alpha_str, rcfg);
      recognizer::TrainRecResult tb = recognizer::train_rec(mixed, ds.val, alpha_str, rcfg);
      const std::string srel = "ckpt/rec_s_b" + btag + "_seed" + std::to_string(seed) + ".bin";
      const std::string brel = "ckpt/rec_b_b" + btag + "_seed" + std::to_string(seed) + ".bin";
      numerics::save_checkpoint(under(srel), recognizer::to_checkpoint(ts.model));
      numerics::save_checkpoint(under(brel), recognizer::to_checkpoint(tb.model));
      ckpt_files.push_back(srel);
      ckpt_files.push_back(brel);

      const recognizer::EvalResult sr = recognizer::evaluate(ts.model, ds.real_test, decode);
      const recognizer::EvalResult ss = recognizer::evaluate(ts.model, seval.samples, decode);
      const recognizer::EvalResult br = recognizer::evaluate(tb.model, ds.real_test, decode);
      const recognizer::EvalResult bs = recognizer::evaluate(tb.model, seval.samples, decode);
      const recognizer::EvalResult rs = recognizer::evaluate(r_models[j], seval.samples, decode);

      metrics::CerMatrix m;
      m.m_rr = rr_cer[j];
      m.m_rs = rs.cer;
      m.m_sr = sr.cer;
      m.m_ss = ss.cer;
      m.m_br = br.cer;
      m.m_bs = bs.cer;
      m.meta["bias"] = bias;
      m.meta["seed"] = seed;
      m.meta["gap_count"] = static_cast<int>(gap_ids.size());
      m.meta["gap_rr"] = gap_rr[j];
      m.meta["gap_sr"] = slice_cer(sr.predictions, gap_ids);
      m.meta["gap_br"] = slice_cer(br.predictions, gap_ids);
      const std::string mrel = "metrics/bias_" + btag + "_seed_" + std::to_string(seed) + ".json";
      write_json_file(under(mrel), m.to_json());
      metric_files.push_back(mrel);
      entry.per_seed.push_back(std::move(m));
    }

    metrics::CerMatrix mean;
    double gap_rr_m = 0, gap_sr_m = 0, gap_br_m = 0;
    for (const metrics::CerMatrix& m : entry.per_seed) {
      mean.m_rr += m.m_rr / S;
      mean.m_rs += m.m_rs / S;
      mean.m_sr += m.m_sr / S;
      mean.m_ss += m.m_ss / S;
      mean.m_br += m.m_br / S;
      mean.m_bs += m.m_bs / S;
      gap_rr_m += m.meta["gap_rr"].get<double>() / S;
      gap_sr_m += m.meta["gap_sr"].get<double>() / S;
      gap_br_m += m.meta["gap_br"].get<double>() / S;
    }
    mean.meta["bias"] = bias;
    mean.meta["seeds"] = cfg.seeds.recognizer;
    mean.meta["gap_count"] = static_cast<int>(gap_ids.size());
    mean.meta["gap_rr"] = gap_rr_m;
    mean.meta["gap_sr"] = gap_sr_m;
    mean.meta["gap_br"] = gap_br_m;
    mean.meta["synth_budget_hits"] = strain.budget_hits + seval.budget_hits;
    entry.mean = mean;
    entry.diagnosis = metrics::diagnose(mean, cfg.sweep.tau);
    const std::string meanrel = "metrics/bias_" + btag + "_mean.json";
    write_json_file(under(meanrel), mean.to_json());
    metric_files.push_back(meanrel);

    if (mean.m_br < best_mean_br) {
      best_mean_br = mean.m_br;
      report.b_star = bias;
    }
    report.entries.push_back(std::move(entry));
    clock.lap("bias_" + btag + "_s");
  }

  write_json_file(under("metrics/sweep_report.json"), report.to_json());
  metric_files.push_back("metrics/sweep_report.json");

  // Manifest: every referenced file hashed from disk at write time.
  ordered_json manifest;
  manifest["tool"] = std::string(kToolVersion);
  manifest["master_seed"] = cfg.seeds.master;
  manifest["config"] = config_json(cfg);
  auto digest_map = [&](std::vector<std::string>& files) {
    std::sort(files.begin(), files.end());
    ordered_json m = ordered_json::object();
    for (const std::string& rel : files) m[rel] = common::sha256_file(under(rel));
    return m;
  };
  manifest["datasets"] = digest_map(dataset_files);
  manifest["checkpoints"] = digest_map(ckpt_files);
  manifest["metrics"] = digest_map(metric_files);
  write_json_file(under("manifest.json"), manifest);

  clock.lap("finalize_s");
  write_json_file(under("timings.json"), clock.timings);
  return report;
}

// --- report rendering ---

namespace {

struct PlotSeries {
  std::string name;
  std::string color;
  std::vector<double> ys;
};

std::string render_plot(const std::vector<double>& xs, const std::vector<PlotSeries>& series,
                        const std::string& x_label, const std::string& y_label) {
  const double W = 640, H = 420, L = 64, R = 200, T = 24, B = 48;
  double y_max = 0.0;
  for (const PlotSeries& s : series) {
    for (double v : s.ys) y_max = std::max(y_max, v);
  }
  if (y_max <= 0) y_max = 1.0;
  y_max *= 1.05;
  const double x_min = xs.front(), x_max = xs.back();
  const double span = x_max > x_min ? x_max - x_min : 1.0;
  auto px = [&](double x) { return L + (x - x_min) / span * (W - L - R); };
  auto py = [&](double y) { return H - B - y / y_max * (H - T - B); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  for (double x : xs) {
    svg << "<line x1=\"" << px(x) << "\" y1=\"" << H - B << "\" x2=\"" << px(x) << "\" y2=\""
        << H - B + 5 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << px(x) << "\" y=\"" << H - B + 20
        << "\" text-anchor=\"middle\" font-size=\"12\">" << format_number(x) << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double y = y_max * k / 4.0;
    svg << "<line x1=\"" << L - 5 << "\" y1=\"" << py(y) << "\" x2=\"" << L << "\" y2=\"" << py(y)
        << "\" stroke=\"black\"/>\n";
    char lbl[32];
    std::snprintf(lbl, sizeof(lbl), "%.3f", y);
    svg << "<text x=\"" << L - 8 << "\" y=\"" << py(y) + 4
        << "\" text-anchor=\"end\" font-size=\"12\">" << lbl << "</text>\n";
  }
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10
      << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label << "</text>\n";
  svg << "<text x=\"16\" y=\"" << (T + H - B) / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
  double legend_y = T + 10;
  for (const PlotSeries& s : series) {
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < xs.size(); ++i) {
      svg << px(xs[i]) << "," << py(s.ys[i]);
      if (i + 1 < xs.size()) svg << " ";
    }
    svg << "\"/>\n";
    for (size_t i = 0; i < xs.size(); ++i) {
      svg << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(s.ys[i])
          << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
    }
    svg << "<line x1=\"" << W - R + 16 << "\" y1=\"" << legend_y << "\" x2=\"" << W - R + 40
        << "\" y2=\"" << legend_y << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << W - R + 46 << "\" y=\"" << legend_y + 4 << "\" font-size=\"12\">"
        << s.name << "</text>\n";
    legend_y += 18;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace

void write_report(const std::string& run_dir) {
  const auto under = [&](const std::string& rel) { return (fs::path(run_dir) / rel).string(); };
  auto read_json = [&](const std::string& rel) {
    std::ifstream in(under(rel));
    if (!in) throw std::runtime_error("incomplete run: missing " + rel + " in " + run_dir);
    ordered_json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw std::runtime_error("incomplete run: unreadable " + rel + ": " + e.what());
    }
    return j;
  };

  const ordered_json manifest = read_json("manifest.json");
  const SweepReport report = SweepReport::from_json(read_json("metrics/sweep_report.json"));
  if (report.entries.empty()) throw std::runtime_error("incomplete run: empty sweep report");

  fs::create_directories(fs::path(run_dir) / "report" / "gallery");

  // One CSV row per (bias, seed, matrix entry).
  std::ostringstream csv;
  csv << "bias,seed,train,eval,cer\n";
  const std::array<std::pair<char, char>, 6> cells = {
      {{'r', 'r'}, {'r', 's'}, {'s', 'r'}, {'s', 's'}, {'b', 'r'}, {'b', 's'}}};
  for (const SweepEntry& e : report.entries) {
    for (size_t k = 0; k < e.per_seed.size(); ++k) {
      const metrics::CerMatrix& m = e.per_seed[k];
      const std::string seed = m.meta.contains("seed")
                                   ? std::to_string(m.meta["seed"].get<uint64_t>())
                                   : std::to_string(k);
      for (const auto& [train, eval] : cells) {
        csv << format_number(e.bias) << "," << seed << "," << train << "," << eval << ","
            << format_number(m.at(train, eval)) << "\n";
      }
    }
  }
  write_text_file(under("report/cer_curves.csv"), csv.str());

  // Mean CER per matrix entry against bias.
  std::vector<double> xs;
  for (const SweepEntry& e : report.entries) xs.push_back(e.bias);
  std::vector<PlotSeries> series = {
      {"train real / eval real", "#1f77b4", {}},   {"train real / eval synth", "#aec7e8", {}},
      {"train synth / eval real", "#d62728", {}},  {"train synth / eval synth", "#ff9896", {}},
      {"train mixed / eval real", "#2ca02c", {}},  {"train mixed / eval synth", "#98df8a", {}}};
  for (const SweepEntry& e : report.entries) {
    for (size_t c = 0; c < cells.size(); ++c) {
      series[c].ys.push_back(e.mean.at(cells[c].first, cells[c].second));
    }
  }
  write_text_file(under("report/cer_plot.svg"),
                  render_plot(xs, series, "sampling bias", "character error rate"));

  // Markdown summary with the diagnosis narrative.
  std::ostringstream md;
  md << "# Bias sweep summary\n\n";
  md << "Tool: " << manifest.value("tool", std::string("unknown")) << "\n\n";
  md << "Chosen bias b\\* = **" << format_number(report.b_star) << "** ("
     << report.selection_rule << ").\n\n";
  md << "## Mean CER by bias\n\n";
  md << "| bias | m[r][r] | m[r][s] | m[s][r] | m[s][s] | m[b][r] | m[b][s] | diagnosis |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  for (const SweepEntry& e : report.entries) {
    char row[256];
    std::snprintf(row, sizeof(row), "| %s | %.4f | %.4f | %.4f | %.4f | %.4f | %.4f | %s |\n",
                  format_number(e.bias).c_str(), e.mean.m_rr, e.mean.m_rs, e.mean.m_sr,
                  e.mean.m_ss, e.mean.m_br, e.mean.m_bs, e.diagnosis.label.c_str());
    md << row;
  }
  md << "\n## Content-gap slice (real test samples with excluded bigrams)\n\n";
  md << "| bias | gap m[r][r] | gap m[s][r] | gap m[b][r] |\n|---|---|---|---|\n";
  for (const SweepEntry& e : report.entries) {
    char row[160];
    std::snprintf(row, sizeof(row), "| %s | %.4f | %.4f | %.4f |\n",
                  format_number(e.bias).c_str(), e.mean.meta.value("gap_rr", 0.0),
                  e.mean.meta.value("gap_sr", 0.0), e.mean.meta.value("gap_br", 0.0));
    md << row;
  }
  md << "\n## Diagnosis narrative\n\n";
  for (const SweepEntry& e : report.entries) {
    md << "### bias " << format_number(e.bias) << ": " << e.diagnosis.label << "\n\n";
    for (const std::string& ev : e.diagnosis.evidence) md << "- " << ev << "\n";
    md << "\n";
  }
  md << "## Gallery\n\n";
  md << "Synthetic renders per bias under `report/gallery/`.\n";
  write_text_file(under("report/summary.md"), md.str());

  // A few synthetic renders per bias.
  for (const SweepEntry& e : report.entries) {
    const std::string btag = format_number(e.bias);
    const std::string rel = "data/synth_eval_b" + btag + ".jsonl";
    if (!fs::exists(under(rel))) throw std::runtime_error("incomplete run: missing " + rel);
    const ink::ReadResult rr = ink::read_jsonl_file(under(rel));
    const size_t n = std::min<size_t>(4, rr.samples.size());
    for (size_t k = 0; k < n; ++k) {
      write_text_file(under("report/gallery/bias_" + btag + "_" + std::to_string(k) + ".svg"),
                      ink::render_svg(rr.samples[k]));
    }
  }
}

}  // namespace incubator
