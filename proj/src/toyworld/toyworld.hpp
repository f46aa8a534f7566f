#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "common/rng.hpp"
#include "ink/ink.hpp"
#include "toyworld/glyphs.hpp"

namespace toyworld {

struct WriterStyle {
  int cluster_id = 0;        // in [0, K)
  double slant = 0.0;        // shear, in [-0.5, 0.5]
  double scale = 1.0;        // in [0.5, 2.0]
  double jitter_sigma = 0.0; // >= 0
  double spacing = 0.3;      // > 0, gap between glyph boxes in glyph widths
  double cursive_prob = 0.0; // in [0, 1]
  int speed = 5;             // resample points per unit length, >= 2
};

struct ToyConfig {
  int alphabet_size = 10; // first n glyphs, 2..10
  int clusters = 5;       // K, 2..5 (fixed center table)
  std::vector<int> collected_clusters = {0, 1, 2};
  std::vector<std::string> excluded_bigrams; // two-char strings over the alphabet
  int train_count = 200;
  int val_count = 40;
  int test_count = 40;
  int real_test_count = 60;
  int corpus_size = 120;
  int writers_per_cluster = 4;
  int word_len_min = 2;
  int word_len_max = 6;
  uint64_t master_seed = 1;
};

struct ToyDataset {
  std::vector<ink::StrokeSample> train;
  std::vector<ink::StrokeSample> val;
  std::vector<ink::StrokeSample> test;
  std::vector<ink::StrokeSample> real_test;
  std::vector<std::string> corpus;
  nlohmann::ordered_json gap_report;
};

/// Alphabet over the first config.alphabet_size glyphs.
ink::Alphabet make_alphabet(int alphabet_size);

/// Throws std::invalid_argument describing the first violated field.
void validate(const ToyConfig& config);
void validate(const WriterStyle& style);

/// Style drawn around the cluster center, clipped to the legal ranges.
WriterStyle sample_writer(int cluster_id, int clusters, common::Rng& rng);

/// Renders text with the given style. Consumes rng for jitter and
/// cursive connector decisions even when their effect is zero, so a
/// fixed rng state always maps to a fixed sample.
ink::StrokeSample write_text(const std::string& text, const WriterStyle& style, common::Rng& rng);

/// One word from the bigram language model. When `collected` is true the
/// excluded bigrams are removed and the row renormalized.
std::string sample_text(const ToyConfig& config, bool collected, common::Rng& rng);

/// Unnormalized transition weight of the fixed bigram model,
/// prev/next as alphabet indices.
double bigram_weight(int prev, int next);

/// Fully materialized dataset. Each sample is generated from its own rng
/// seeded with splitmix64(master_seed XOR sample_index), so any subset is
/// reproducible independent of generation order.
ToyDataset build_dataset(const ToyConfig& config);

}  // namespace toyworld
