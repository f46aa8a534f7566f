#include <CLI11.hpp>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "incubator/incubator.hpp"
#include "ink/codec.hpp"
#include "metrics/metrics.hpp"
#include "numerics/checkpoint.hpp"
#include "recognizer/recognizer.hpp"
#include "synth/synth.hpp"
#include "toyworld/toyworld.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::vector<ink::StrokeSample> read_samples(const std::string& path, const ink::Alphabet* alpha) {
  const ink::ReadResult rr = ink::read_jsonl_file(path, alpha);
  for (const std::string& w : rr.warnings) std::cerr << "warning: " << w << "\n";
  if (rr.samples.empty()) throw std::runtime_error("no samples in " + path);
  return rr.samples;
}

void write_samples(const std::string& path, std::span<const ink::StrokeSample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  ink::write_jsonl(out, samples);
}

ordered_json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  ordered_json j;
  in >> j;
  return j;
}

recognizer::DecodeSpec parse_decode(const std::string& spec) {
  if (spec == "greedy") return {0};
  if (spec.rfind("beam:", 0) == 0) {
    const std::string digits = spec.substr(5);
    int w = 0;
    const auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), w);
    if (ec != std::errc{} || end != digits.data() + digits.size() || w < 1) {
      throw std::runtime_error("beam width must be a positive integer, got '" + digits + "'");
    }
    return {w};
  }
  throw std::runtime_error("decode must be 'greedy' or 'beam:<w>', got '" + spec + "'");
}

incubator::StyleSpec parse_style(const std::string& spec, const synth::SynthModel& model) {
  incubator::StyleSpec style;
  if (spec == "prior") return style;
  if (spec.rfind("ref:", 0) == 0) {
    style.prior = false;
    const ink::Alphabet alpha(model.alphabet);
    style.refs = read_samples(spec.substr(4), &alpha);
    return style;
  }
  throw std::runtime_error("style must be 'prior' or 'ref:<jsonl>', got '" + spec + "'");
}

int cmd_toygen(const std::string& config_path, const std::string& out_dir) {
  const incubator::IncubConfig cfg = incubator::load_config(config_path);
  const toyworld::ToyDataset ds = toyworld::build_dataset(cfg.toyworld);
  fs::create_directories(out_dir);
  const auto under = [&](const std::string& rel) { return (fs::path(out_dir) / rel).string(); };
  write_samples(under("train.jsonl"), ds.train);
  write_samples(under("val.jsonl"), ds.val);
  write_samples(under("test.jsonl"), ds.test);
  write_samples(under("real_test.jsonl"), ds.real_test);
  incubator::write_corpus(under("corpus.txt"), ds.corpus);
  std::ofstream gap(under("gap_report.json"), std::ios::binary);
  gap << ds.gap_report.dump(2) << "\n";
  std::cout << "wrote " << ds.train.size() << " train / " << ds.val.size() << " val / "
            << ds.test.size() << " test / " << ds.real_test.size() << " real-test samples and "
            << ds.corpus.size() << " corpus texts to " << out_dir << "\n";
  return 0;
}

int cmd_train_synth(const std::string& data_path, const std::string& config_path,
                    const std::string& out_path) {
  const incubator::IncubConfig cfg = incubator::load_config(config_path);
  const ink::Alphabet alpha = toyworld::make_alphabet(cfg.toyworld.alphabet_size);
  const std::vector<ink::StrokeSample> train = read_samples(data_path, &alpha);
  const synth::TrainSynthResult r = synth::train_synth(train, {}, alpha.chars(), cfg.synth);
  for (const std::string& w : r.stats.warnings) std::cerr << "warning: " << w << "\n";
  numerics::save_checkpoint(out_path, synth::to_checkpoint(r.model));
  std::cout << "trained synthesizer for " << cfg.synth.epochs << " epochs (final recon "
            << r.stats.epoch_recon.back() << ", kl " << r.stats.epoch_kl.back() << "); saved "
            << out_path << "\n";
  return 0;
}

int cmd_synth(const std::string& ckpt, const std::string& corpus_path, double bias, int count,
              const std::string& style_spec, uint64_t seed, const std::string& out_path) {
  const synth::SynthModel model = synth::synth_from_checkpoint(numerics::load_checkpoint(ckpt));
  const std::vector<std::string> corpus = incubator::read_corpus(corpus_path);
  const incubator::StyleSpec style = parse_style(style_spec, model);
  const incubator::SynthesisResult r = incubator::synthesize(model, corpus, bias, count, style, seed);
  write_samples(out_path, r.samples);
  std::cout << "synthesized " << r.samples.size() << " samples at bias " << bias;
  if (r.budget_hits > 0) std::cout << " (" << r.budget_hits << " hit the step budget)";
  std::cout << "; wrote " << out_path << "\n";
  return 0;
}

int cmd_train_rec(const std::string& data_path, const std::string& config_path,
                  const std::string& out_path) {
  const incubator::IncubConfig cfg = incubator::load_config(config_path);
  const ink::Alphabet alpha = toyworld::make_alphabet(cfg.toyworld.alphabet_size);
  const std::vector<ink::StrokeSample> train = read_samples(data_path, &alpha);
  const recognizer::TrainRecResult r =
      recognizer::train_rec(train, {}, alpha.chars(), cfg.recognizer);
  for (const std::string& w : r.stats.warnings) std::cerr << "warning: " << w << "\n";
  numerics::save_checkpoint(out_path, recognizer::to_checkpoint(r.model));
  std::cout << "trained recognizer for " << cfg.recognizer.epochs << " epochs (final loss "
            << r.stats.epoch_loss.back() << "); saved " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path, const std::string& decode_spec,
             const std::string& out_path) {
  const recognizer::RecModel model =
      recognizer::rec_from_checkpoint(numerics::load_checkpoint(ckpt));
  const ink::Alphabet alpha(model.alphabet);
  const std::vector<ink::StrokeSample> samples = read_samples(data_path, &alpha);
  const recognizer::EvalResult r =
      recognizer::evaluate(model, samples, parse_decode(decode_spec));
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << recognizer::predictions_jsonl(r.predictions);
  std::cout << "cer " << r.cer << " over " << r.predictions.size() << " samples; wrote "
            << out_path << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir) {
  const incubator::IncubConfig cfg = incubator::load_config(config_path);
  const incubator::SweepReport report = incubator::run_sweep(cfg, out_dir);
  std::cout << "sweep finished: b* = " << incubator::format_number(report.b_star) << " ("
            << report.selection_rule << "); run directory " << out_dir << "\n";
  return 0;
}

int cmd_diagnose(const std::string& matrix_path, double tau) {
  const metrics::CerMatrix m = metrics::CerMatrix::from_json(read_json_file(matrix_path));
  const metrics::CaseDiagnosis d = metrics::diagnose(m, tau);
  std::cout << d.to_json().dump(2) << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  incubator::write_report(run_dir);
  std::cout << "wrote report bundle under " << (fs::path(run_dir) / "report").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy-world handwriting data incubation"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, ckpt_path, corpus_path, run_dir;
  std::string style_spec = "prior", decode_spec = "greedy", matrix_path;
  double bias = 0.0, tau = 0.1;
  int count = 0;
  uint64_t seed = 1;

  CLI::App* toygen = app.add_subcommand("toygen", "Generate the toy dataset");
  toygen->add_option("--config", config_path)->required();
  toygen->add_option("--out", out_path)->required();

  CLI::App* tsynth = app.add_subcommand("train-synth", "Train the handwriting synthesizer");
  tsynth->add_option("--data", data_path)->required();
  tsynth->add_option("--config", config_path)->required();
  tsynth->add_option("--out", out_path)->required();

  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate synthetic handwriting");
  synth_cmd->add_option("--ckpt", ckpt_path)->required();
  synth_cmd->add_option("--corpus", corpus_path)->required();
  synth_cmd->add_option("--bias", bias)->required();
  synth_cmd->add_option("--count", count)->required();
  synth_cmd->add_option("--style", style_spec)->capture_default_str();
  synth_cmd->add_option("--seed", seed)->capture_default_str();
  synth_cmd->add_option("--out", out_path)->required();

  CLI::App* trec = app.add_subcommand("train-rec", "Train the recognizer");
  trec->add_option("--data", data_path)->required();
  trec->add_option("--config", config_path)->required();
  trec->add_option("--out", out_path)->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a recognizer checkpoint");
  eval_cmd->add_option("--ckpt", ckpt_path)->required();
  eval_cmd->add_option("--data", data_path)->required();
  eval_cmd->add_option("--decode", decode_spec)->capture_default_str();
  eval_cmd->add_option("--out", out_path)->required();

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Run the full bias sweep");
  sweep_cmd->add_option("--config", config_path)->required();
  sweep_cmd->add_option("--out", out_path)->required();

  CLI::App* diag = app.add_subcommand("diagnose", "Classify a CER matrix");
  diag->add_option("--matrix", matrix_path)->required();
  diag->add_option("--tau", tau)->capture_default_str();

  CLI::App* report_cmd = app.add_subcommand("report", "Render the report bundle for a run");
  report_cmd->add_option("--run", run_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (toygen->parsed()) return cmd_toygen(config_path, out_path);
    if (tsynth->parsed()) return cmd_train_synth(data_path, config_path, out_path);
    if (synth_cmd->parsed())
      return cmd_synth(ckpt_path, corpus_path, bias, count, style_spec, seed, out_path);
    if (trec->parsed()) return cmd_train_rec(data_path, config_path, out_path);
    if (eval_cmd->parsed()) return cmd_eval(ckpt_path, data_path, decode_spec, out_path);
    if (sweep_cmd->parsed()) return cmd_sweep(config_path, out_path);
    if (diag->parsed()) return cmd_diagnose(matrix_path, tau);
    if (report_cmd->parsed()) return cmd_report(run_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
