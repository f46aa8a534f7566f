#include "toyworld/toyworld.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

namespace toyworld {

namespace {

// Disjoint seed-index spaces. Sample indices stay below 1<<20 per split;
// writer identities live far above so style draws never collide with
// sample streams.
constexpr uint64_t kTrainBase = 0ull << 20;
constexpr uint64_t kValBase = 1ull << 20;
constexpr uint64_t kTestBase = 2ull << 20;
constexpr uint64_t kRealBase = 3ull << 20;
constexpr uint64_t kCorpusBase = 4ull << 20;
constexpr uint64_t kWriterBase = 1ull << 40;
constexpr int kMaxSplitCount = 1 << 20;

struct ClusterCenter {
  double slant, scale, jitter, spacing, cursive;
  int speed;
};

// Clusters 0..2 are the "collected" defaults; 3 and 4 sit inside the
// coordinate-wise hull of 0..2 so held-out styles are interpolations,
// not extrapolations.
constexpr std::array<ClusterCenter, 5> kCenters = {{
    {-0.30, 0.8, 0.010, 0.25, 0.10, 5},
    {0.00, 1.2, 0.035, 0.35, 0.70, 5},
    {0.32, 1.0, 0.020, 0.30, 0.40, 5},
    {0.15, 1.1, 0.028, 0.32, 0.55, 5},
    {-0.14, 0.9, 0.015, 0.28, 0.25, 5},
}};

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

[[noreturn]] void fail(const std::string& what) {
  throw std::invalid_argument("toyworld: " + what);
}

std::vector<Vec2> resample_polyline(const std::vector<Vec2>& pts, double step) {
  std::vector<Vec2> out;
  out.push_back(pts.front());
  auto push_distinct = [&out](Vec2 v) {
    const Vec2& b = out.back();
    if (std::hypot(v.x - b.x, v.y - b.y) > 1e-9) out.push_back(v);
  };
  double acc = 0.0;
  double next_at = step;
  for (size_t e = 0; e + 1 < pts.size(); ++e) {
    const Vec2 a = pts[e];
    const Vec2 b = pts[e + 1];
    const double el = std::hypot(b.x - a.x, b.y - a.y);
    if (el <= 1e-12) continue;
    while (next_at <= acc + el + 1e-12) {
      double t = std::min(1.0, (next_at - acc) / el);
      push_distinct({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
      next_at += step;
    }
    acc += el;
  }
  push_distinct(pts.back());
  return out;
}

std::string pad6(int n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", n);
  return buf;
}

}  // namespace

ink::Alphabet make_alphabet(int alphabet_size) {
  if (alphabet_size < 2 || alphabet_size > 10) fail("alphabet_size must be in [2,10]");
  std::string chars;
  for (int i = 0; i < alphabet_size; ++i) chars.push_back(glyph_chars()[static_cast<size_t>(i)]);
  return ink::Alphabet(chars);
}

void validate(const WriterStyle& style) {
  if (style.cluster_id < 0) fail("style cluster_id must be >= 0");
  if (style.slant < -0.5 || style.slant > 0.5) fail("style slant out of [-0.5,0.5]");
  if (style.scale < 0.5 || style.scale > 2.0) fail("style scale out of [0.5,2.0]");
  if (!(style.jitter_sigma >= 0.0)) fail("style jitter_sigma must be >= 0");
  if (!(style.spacing > 0.0)) fail("style spacing must be > 0");
  if (style.cursive_prob < 0.0 || style.cursive_prob > 1.0) fail("style cursive_prob out of [0,1]");
  if (style.speed < 2) fail("style speed must be >= 2");
}

void validate(const ToyConfig& config) {
  if (config.alphabet_size < 2 || config.alphabet_size > 10) fail("alphabet_size must be in [2,10]");
  if (config.clusters < 2 || config.clusters > static_cast<int>(kCenters.size())) {
    fail("clusters must be in [2,5]");
  }
  if (config.collected_clusters.empty()) fail("collected_clusters must be non-empty");
  std::set<int> seen;
  for (int c : config.collected_clusters) {
    if (c < 0 || c >= config.clusters) fail("collected cluster id out of [0,K)");
    if (!seen.insert(c).second) fail("duplicate collected cluster id");
  }
  const ink::Alphabet alpha = make_alphabet(config.alphabet_size);
  for (const std::string& bg : config.excluded_bigrams) {
    if (bg.size() != 2) fail("excluded bigram '" + bg + "' is not two characters");
    if (alpha.index_of(bg[0]) < 0 || alpha.index_of(bg[1]) < 0) {
      fail("excluded bigram '" + bg + "' leaves the alphabet");
    }
  }
  // Every character must keep at least one continuation, otherwise text
  // generation can paint itself into a corner.
  for (int prev = 0; prev < config.alphabet_size; ++prev) {
    bool open = false;
    for (int next = 0; next < config.alphabet_size && !open; ++next) {
      std::string bg;
      bg.push_back(alpha.at(prev));
      bg.push_back(alpha.at(next));
      open = std::find(config.excluded_bigrams.begin(), config.excluded_bigrams.end(), bg) ==
             config.excluded_bigrams.end();
    }
    if (!open) fail(std::string("no bigram left after '") + alpha.at(prev) + "'");
  }
  for (int n : {config.train_count, config.val_count, config.test_count, config.real_test_count,
                config.corpus_size}) {
    if (n < 0 || n >= kMaxSplitCount) fail("split count out of range");
  }
  if (config.writers_per_cluster < 1 || config.writers_per_cluster > 4096) {
    fail("writers_per_cluster out of range");
  }
  if (config.word_len_min < 2 || config.word_len_max < config.word_len_min) {
    fail("word length range invalid (need 2 <= min <= max)");
  }
}

WriterStyle sample_writer(int cluster_id, int clusters, common::Rng& rng) {
  if (clusters < 1 || clusters > static_cast<int>(kCenters.size())) fail("clusters out of range");
  if (cluster_id < 0 || cluster_id >= clusters) fail("cluster_id out of range");
  const ClusterCenter& c = kCenters[static_cast<size_t>(cluster_id)];
  WriterStyle s;
  s.cluster_id = cluster_id;
  s.slant = clip(c.slant + 0.03 * rng.normal(), -0.5, 0.5);
  s.scale = clip(c.scale + 0.05 * rng.normal(), 0.5, 2.0);
  s.jitter_sigma = clip(c.jitter + 0.004 * rng.normal(), 0.0, 0.08);
  s.spacing = clip(c.spacing + 0.02 * rng.normal(), 0.05, 1.0);
  s.cursive_prob = clip(c.cursive + 0.05 * rng.normal(), 0.0, 1.0);
  s.speed = static_cast<int>(clip(std::lround(c.speed + 0.5 * rng.normal()), 4, 6));
  return s;
}

ink::StrokeSample write_text(const std::string& text, const WriterStyle& style, common::Rng& rng) {
  validate(style);
  if (text.empty()) fail("write_text: empty text");
  const double step = 1.0 / style.speed;
  const double advance = style.scale * (1.0 + style.spacing);

  std::vector<ink::AbsPoint> pts;
  auto push = [&pts](Vec2 v, int pen) { pts.push_back({v.x, v.y, pen}); };

  double x_off = 0.0;
  for (size_t gi = 0; gi < text.size(); ++gi) {
    const GlyphSkeleton& sk = glyph(text[gi]);
    const bool join = gi > 0 && rng.bernoulli(style.cursive_prob);
    for (size_t pi = 0; pi < sk.polylines.size(); ++pi) {
      std::vector<Vec2> poly;
      poly.reserve(sk.polylines[pi].size());
      for (const Vec2& p : sk.polylines[pi]) {
        poly.push_back({style.scale * (p.x + style.slant * p.y) + x_off, style.scale * p.y});
      }
      std::vector<Vec2> rp = resample_polyline(poly, step);
      size_t start = 0;
      if (pts.empty()) {
        push(rp[0], 0);  // pen-up travel from the origin
        start = 1;
      } else if (pi == 0 && join) {
        // Cursive connector: drawn segment from the previous glyph's end
        // to this glyph's entry point.
        const Vec2 from = {pts.back().x, pts.back().y};
        std::vector<Vec2> conn = resample_polyline({from, rp[0]}, step);
        for (size_t k = 1; k < conn.size(); ++k) push(conn[k], 1);
        // The connector ends on rp[0] (or never left `from` when the two
        // coincide); either way the polyline continues from its second point.
        start = 1;
      } else {
        push(rp[0], 0);
        start = 1;
      }
      for (size_t k = start; k < rp.size(); ++k) push(rp[k], 1);
    }
    x_off += advance;
  }

  // Jitter is a post-pass so the rng draw order is: one connector decision
  // per boundary, then two normals per point. Draws happen even at
  // jitter_sigma = 0 to keep downstream consumption aligned across styles.
  for (ink::AbsPoint& p : pts) {
    p.x += style.jitter_sigma * rng.normal();
    p.y += style.jitter_sigma * rng.normal();
  }

  ink::StrokeSample out;
  out.text = text;
  out.moves = ink::moves_from_absolute(pts);
  return out;
}

double bigram_weight(int prev, int next) {
  return 1.0 + static_cast<double>((prev * 7 + next * 3) % 5);
}

std::string sample_text(const ToyConfig& config, bool collected, common::Rng& rng) {
  const ink::Alphabet alpha = make_alphabet(config.alphabet_size);
  const int a = config.alphabet_size;
  auto excluded = [&](int prev, int next) {
    if (!collected) return false;
    std::string bg;
    bg.push_back(alpha.at(prev));
    bg.push_back(alpha.at(next));
    return std::find(config.excluded_bigrams.begin(), config.excluded_bigrams.end(), bg) !=
           config.excluded_bigrams.end();
  };
  const int len = config.word_len_min +
                  static_cast<int>(rng.uniform_index(
                      static_cast<uint64_t>(config.word_len_max - config.word_len_min + 1)));
  std::string text;
  int prev = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(a)));
  text.push_back(alpha.at(prev));
  std::vector<double> probs(static_cast<size_t>(a));
  while (static_cast<int>(text.size()) < len) {
    double total = 0.0;
    for (int j = 0; j < a; ++j) {
      probs[static_cast<size_t>(j)] = excluded(prev, j) ? 0.0 : bigram_weight(prev, j);
      total += probs[static_cast<size_t>(j)];
    }
    for (double& p : probs) p /= total;
    prev = rng.categorical(probs);
    text.push_back(alpha.at(prev));
  }
  return text;
}

namespace {

ink::StrokeSample generate_sample(const ToyConfig& config, bool collected, uint64_t base, int index,
                                  const std::string& id_prefix, const std::string& split) {
  common::Rng rng(common::derive_seed(config.master_seed, base + static_cast<uint64_t>(index)));
  int cluster;
  if (collected) {
    cluster = config.collected_clusters[rng.uniform_index(config.collected_clusters.size())];
  } else {
    cluster = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(config.clusters)));
  }
  const int widx = static_cast<int>(
      rng.uniform_index(static_cast<uint64_t>(config.writers_per_cluster)));
  common::Rng writer_rng(common::derive_seed(
      config.master_seed,
      kWriterBase + static_cast<uint64_t>(cluster) * 4096ull + static_cast<uint64_t>(widx)));
  const WriterStyle style = sample_writer(cluster, config.clusters, writer_rng);
  const std::string text = sample_text(config, collected, rng);
  ink::StrokeSample s = write_text(text, style, rng);
  s.id = id_prefix + pad6(index);
  s.writer = "w" + std::to_string(cluster) + "_" + std::to_string(widx);
  s.lang = "toy";
  s.split = split;
  return s;
}

}  // namespace

ToyDataset build_dataset(const ToyConfig& config) {
  validate(config);
  ToyDataset d;
  d.train.reserve(static_cast<size_t>(config.train_count));
  for (int i = 0; i < config.train_count; ++i) {
    d.train.push_back(generate_sample(config, true, kTrainBase, i, "col-train-", "train"));
  }
  for (int i = 0; i < config.val_count; ++i) {
    d.val.push_back(generate_sample(config, true, kValBase, i, "col-val-", "val"));
  }
  for (int i = 0; i < config.test_count; ++i) {
    d.test.push_back(generate_sample(config, true, kTestBase, i, "col-test-", "test"));
  }
  for (int i = 0; i < config.real_test_count; ++i) {
    d.real_test.push_back(generate_sample(config, false, kRealBase, i, "real-test-", "test"));
  }
  for (int i = 0; i < config.corpus_size; ++i) {
    common::Rng rng(common::derive_seed(config.master_seed, kCorpusBase + static_cast<uint64_t>(i)));
    d.corpus.push_back(sample_text(config, true, rng));
  }

  // Gap report: which part of the content/style space the collected data
  // actually covers.
  const ink::Alphabet alpha = make_alphabet(config.alphabet_size);
  std::set<std::string> observed;
  std::map<int, int> cluster_hist;
  auto scan = [&](const std::vector<ink::StrokeSample>& split) {
    for (const ink::StrokeSample& s : split) {
      for (size_t i = 0; i + 1 < s.text.size(); ++i) observed.insert(s.text.substr(i, 2));
      const std::string& w = *s.writer;  // "w<cluster>_<idx>"
      cluster_hist[std::stoi(w.substr(1, w.find('_') - 1))] += 1;
    }
  };
  scan(d.train);
  scan(d.val);
  scan(d.test);
  std::vector<std::string> missing;
  for (int p = 0; p < config.alphabet_size; ++p) {
    for (int n = 0; n < config.alphabet_size; ++n) {
      std::string bg;
      bg.push_back(alpha.at(p));
      bg.push_back(alpha.at(n));
      const bool exc = std::find(config.excluded_bigrams.begin(), config.excluded_bigrams.end(),
                                 bg) != config.excluded_bigrams.end();
      if (!exc && observed.find(bg) == observed.end()) missing.push_back(bg);
    }
  }
  nlohmann::ordered_json rep;
  rep["alphabet"] = alpha.chars();
  rep["clusters"] = config.clusters;
  rep["collected_clusters"] = config.collected_clusters;
  rep["excluded_bigrams"] = config.excluded_bigrams;
  rep["counts"] = {{"train", config.train_count},
                   {"val", config.val_count},
                   {"test", config.test_count},
                   {"real_test", config.real_test_count},
                   {"corpus", config.corpus_size}};
  nlohmann::ordered_json cov;
  cov["possible"] = config.alphabet_size * config.alphabet_size;
  cov["excluded"] = static_cast<int>(config.excluded_bigrams.size());
  cov["observed"] = static_cast<int>(observed.size());
  cov["missing_not_excluded"] = missing;
  rep["collected_bigram_coverage"] = cov;
  nlohmann::ordered_json hist;
  for (const auto& [k, v] : cluster_hist) hist[std::to_string(k)] = v;
  rep["collected_cluster_histogram"] = hist;
  d.gap_report = rep;
  return d;
}

}  // namespace toyworld
