#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "common/digest.hpp"
#include "common/rng.hpp"
#include "ink/codec.hpp"
#include "ink/ink.hpp"
#include "nn/nn.hpp"
#include "numerics/checkpoint.hpp"
#include "numerics/graph.hpp"
#include "synth/synth.hpp"
#include "toyworld/toyworld.hpp"

namespace {

using numerics::Graph;
using numerics::NodeId;
using numerics::Tensor;
using synth::SynthConfig;
using synth::SynthModel;

SynthConfig tiny_cfg() {
  SynthConfig cfg;
  cfg.d_c = 6;
  cfg.d_h = 8;
  cfg.d_z = 3;
  cfg.d_e = 5;
  cfg.components = 2;
  cfg.att_components = 2;
  cfg.seed = 11;
  return cfg;
}

ink::StrokeSample toy_sample(const std::string& text, uint64_t seed) {
  toyworld::WriterStyle s;
  s.cluster_id = 0;
  s.slant = 0.1;
  s.scale = 1.0;
  s.jitter_sigma = 0.01;
  s.spacing = 0.3;
  s.cursive_prob = 0.0;
  s.speed = 5;
  common::Rng rng(seed);
  ink::StrokeSample out = toyworld::write_text(text, s, rng);
  out.id = "t-" + text;
  out.lang = "toy";
  return out;
}

/// Hand-built sample with exactly n moves (for length-sensitive cases).
ink::StrokeSample fixed_sample(const std::string& text, int n) {
  ink::StrokeSample s;
  s.id = "f-" + text;
  s.text = text;
  for (int i = 0; i < n; ++i) {
    s.moves.push_back({0.1 * (i + 1), -0.05 * i, i % 3 == 0 ? 0 : 1});
  }
  return s;
}

std::string checkpoint_digest(const SynthModel& m, const std::string& tag) {
  const std::string path = "/tmp/synth_ckpt_" + tag + ".bin";
  numerics::save_checkpoint(path, synth::to_checkpoint(m));
  const std::string d = common::sha256_file(path);
  std::remove(path.c_str());
  return d;
}

double kl_diag(double mu_q, double sigma_q, double mu_p, double sigma_p) {
  return std::log(sigma_p / sigma_q) +
         (sigma_q * sigma_q + (mu_q - mu_p) * (mu_q - mu_p)) / (2 * sigma_p * sigma_p) - 0.5;
}

}  // namespace

TEST_CASE("encode_content maps characters and spaces to classes") {
  const std::vector<int> ids = synth::encode_content("ba a", "ab");
  CHECK(ids == std::vector<int>{1, 0, 2, 0});  // separator class is 2
  CHECK_THROWS_AS(synth::encode_content("", "ab"), std::invalid_argument);
  CHECK_THROWS_AS(synth::encode_content("ax", "ab"), std::invalid_argument);
}

TEST_CASE("init rejects degenerate configs") {
  SynthConfig cfg = tiny_cfg();
  cfg.d_z = 0;
  CHECK_THROWS_AS(synth::init_synth(cfg, "ab"), std::invalid_argument);
  cfg = tiny_cfg();
  cfg.components = 0;
  CHECK_THROWS_AS(synth::init_synth(cfg, "ab"), std::invalid_argument);
  cfg = tiny_cfg();
  cfg.kappa_rate = 0.0;
  CHECK_THROWS_AS(synth::init_synth(cfg, "ab"), std::invalid_argument);
  CHECK_THROWS_AS(synth::init_synth(tiny_cfg(), ""), std::invalid_argument);
}

TEST_CASE("fresh prior head is the unit Gaussian") {
  const SynthModel m = synth::init_synth(tiny_cfg(), "ab");
  synth::DecoderState st = synth::decoder_init(m);
  const std::array<double, 3> x0 = {0.0, 0.0, 0.0};
  const std::vector<int> content = synth::encode_content("ab", m.alphabet);
  synth::decoder_advance(m, st, x0.data(), content);
  const std::vector<double> pr = synth::prior_raw(m, st);
  REQUIRE(pr.size() == 6);
  for (double v : pr) CHECK(v == 0.0);  // mu 0, log sigma 0 -> sigma 1
}

TEST_CASE("kl matches the closed form for constant heads") {
  // Zeroed posterior/prior weights make both heads constant, so the graph's
  // KL must equal T * sum_d kl(q_d || p_d) for hand-picked head biases.
  SynthConfig cfg = tiny_cfg();
  SynthModel m = synth::init_synth(cfg, "ab");
  Tensor& post_w = m.store.get("post_w");
  for (int64_t i = 0; i < post_w.size(); ++i) post_w.data()[i] = 0.0;
  Tensor& post_b = m.store.get("post_b");

  const ink::StrokeSample s = fixed_sample("ab", 4);  // T = 4
  common::Rng rng(5);

  // q = p = N(0, I): zero divergence.
  for (int64_t i = 0; i < post_b.size(); ++i) post_b.data()[i] = 0.0;
  CHECK(synth::training_loss(m, s, 0.0, rng).kl == doctest::Approx(0.0).epsilon(1e-12));

  // q = N(1, 1), p = N(0, 1): one half per dimension.
  for (int d = 0; d < cfg.d_z; ++d) post_b.at(0, d) = 1.0;
  CHECK(synth::training_loss(m, s, 0.0, rng).kl ==
        doctest::Approx(4 * cfg.d_z * 0.5).epsilon(1e-12));

  // Arbitrary diagonal Gaussians against the scalar formula.
  Tensor& prior_b = m.store.get("prior_b");
  const std::vector<double> qm = {0.3, -1.1, 0.7}, ql = {-0.2, 0.4, 0.0};
  const std::vector<double> pm = {-0.5, 0.2, 1.3}, pl = {0.1, -0.3, 0.25};
  double expect = 0.0;
  for (int d = 0; d < cfg.d_z; ++d) {
    post_b.at(0, d) = qm[static_cast<size_t>(d)];
    post_b.at(0, cfg.d_z + d) = ql[static_cast<size_t>(d)];
    prior_b.at(0, d) = pm[static_cast<size_t>(d)];
    prior_b.at(0, cfg.d_z + d) = pl[static_cast<size_t>(d)];
    expect += kl_diag(qm[static_cast<size_t>(d)], std::exp(ql[static_cast<size_t>(d)]),
                      pm[static_cast<size_t>(d)], std::exp(pl[static_cast<size_t>(d)]));
  }
  CHECK(synth::training_loss(m, s, 0.0, rng).kl == doctest::Approx(4 * expect).epsilon(1e-10));
}

TEST_CASE("beta zero makes the total the reconstruction term") {
  const SynthModel m = synth::init_synth(tiny_cfg(), "ab");
  const ink::StrokeSample s = toy_sample("ab", 3);
  common::Rng rng(7);
  const synth::LossParts at0 = synth::training_loss(m, s, 0.0, rng);
  CHECK(at0.total == at0.recon);
  CHECK(at0.kl >= 0.0);

  common::Rng rng2(7);
  const synth::LossParts at7 = synth::training_loss(m, s, 0.7, rng2);
  CHECK(at7.recon == doctest::Approx(at0.recon).epsilon(1e-12));
  CHECK(at7.total == doctest::Approx(at7.recon + 0.7 * at7.kl).epsilon(1e-12));
}

TEST_CASE("graph decoder gradients match central differences") {
  SynthConfig cfg = tiny_cfg();
  SynthModel m = synth::init_synth(cfg, "ab");

  const ink::StrokeSample a = fixed_sample("ab", 5);
  const ink::StrokeSample b = fixed_sample("a", 3);
  const std::vector<const ink::StrokeSample*> samples = {&a, &b};
  common::Rng noise_rng(21);
  const synth::SynthBatch batch = synth::make_batch(samples, m.alphabet, cfg.d_z, noise_rng);

  auto run = [&](bool want_grads, std::vector<Tensor>* grads) {
    Graph g;
    nn::BoundParams p = nn::bind(g, m.store);
    const synth::SynthGraphOut out = synth::synth_graph(g, p, cfg, batch, 0.7);
    if (!want_grads) return g.value(out.total).item();
    const double lv = g.backward(out.total);
    *grads = nn::collect_grads(g, p, m.store);
    return lv;
  };

  std::vector<Tensor> analytic;
  run(true, &analytic);

  std::vector<double> point, grad_flat;
  for (const auto& [name, t] : m.store.entries()) {
    for (int64_t i = 0; i < t.size(); ++i) point.push_back(t.data()[i]);
  }
  for (const Tensor& t : analytic) {
    for (int64_t i = 0; i < t.size(); ++i) grad_flat.push_back(t.data()[i]);
  }
  auto f = [&](std::span<const double> flat) {
    size_t off = 0;
    for (numerics::Tensor* t : m.store.tensors()) {
      for (int64_t i = 0; i < t->size(); ++i) t->data()[i] = flat[off++];
    }
    return run(false, nullptr);
  };
  // Central differences on a loss of this depth carry ~1e-10 absolute noise
  // (cancellation in (f+ - f-)/2eps), so the relative comparison floors the
  // denominator at 1e-5; disagreements >= 1e-9 absolute still register.
  double err = 0.0;
  const double eps = 1e-5;
  std::vector<double> pp(point);
  for (size_t i = 0; i < point.size(); ++i) {
    pp[i] = point[i] + eps;
    const double fp = f(pp);
    pp[i] = point[i] - eps;
    const double fm = f(pp);
    pp[i] = point[i];
    const double fd = (fp - fm) / (2 * eps);
    const double rel =
        std::abs(fd - grad_flat[i]) / std::max({std::abs(fd), std::abs(grad_flat[i]), 1e-5});
    err = std::max(err, rel);
  }
  CHECK(err < 1e-4);
}

TEST_CASE("batched loss equals the mean of single-sample losses") {
  SynthConfig cfg = tiny_cfg();
  const SynthModel m = synth::init_synth(cfg, "ab");

  const ink::StrokeSample s0 = fixed_sample("ab", 6);
  const ink::StrokeSample s1 = fixed_sample("b", 3);
  const ink::StrokeSample s2 = fixed_sample("aba", 8);
  const std::vector<const ink::StrokeSample*> samples = {&s0, &s1, &s2};
  common::Rng rng(13);
  const synth::SynthBatch batch = synth::make_batch(samples, m.alphabet, cfg.d_z, rng);
  const int B = 3;
  const int T = batch.x.rows() / B - 1;

  Graph g;
  const nn::BoundParams p = nn::bind(g, m.store);
  const synth::SynthGraphOut out = synth::synth_graph(g, p, cfg, batch, 0.3);
  const double batched_recon = g.value(out.recon).item();
  const double batched_kl = g.value(out.kl).item();

  double recon_sum = 0.0, kl_sum = 0.0;
  for (int b = 0; b < B; ++b) {
    const int Tb = batch.lens[static_cast<size_t>(b)];
    synth::SynthBatch single;
    single.lens = {Tb};
    single.content = {batch.content[static_cast<size_t>(b)]};
    single.x = Tensor(Tb + 1, 3);
    single.noise = Tensor(Tb, cfg.d_z);
    for (int t = 0; t <= Tb; ++t) {
      for (int c = 0; c < 3; ++c) single.x.at(t, c) = batch.x.at(t * B + b, c);
    }
    for (int t = 0; t < Tb; ++t) {
      for (int d = 0; d < cfg.d_z; ++d) single.noise.at(t, d) = batch.noise.at(t * B + b, d);
    }
    Graph gs;
    const nn::BoundParams ps = nn::bind(gs, m.store);
    const synth::SynthGraphOut os = synth::synth_graph(gs, ps, cfg, single, 0.3);
    recon_sum += gs.value(os.recon).item();
    kl_sum += gs.value(os.kl).item();
  }
  CHECK(batched_recon == doctest::Approx(recon_sum / B).epsilon(1e-9));
  CHECK(batched_kl == doctest::Approx(kl_sum / B).epsilon(1e-9));

  // Window positions only move forward, and frozen rows stay put.
  REQUIRE(static_cast<int>(out.kappa.size()) == T);
  for (int t = 0; t < T; ++t) {
    const Tensor& k = g.value(out.kappa[static_cast<size_t>(t)]);
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < cfg.att_components; ++c) {
        const double prev = t == 0 ? 0.0 : g.value(out.kappa[static_cast<size_t>(t - 1)]).at(b, c);
        if (t < batch.lens[static_cast<size_t>(b)]) {
          CHECK(k.at(b, c) > prev);
        } else {
          CHECK(k.at(b, c) == prev);
        }
      }
    }
  }
}

TEST_CASE("graph and plain decoders agree step for step") {
  SynthConfig cfg = tiny_cfg();
  const SynthModel m = synth::init_synth(cfg, "ab");
  const std::vector<int> content = synth::encode_content("ab", m.alphabet);
  const int M = static_cast<int>(content.size());
  const int T = 4;

  common::Rng rng(31);
  std::vector<std::array<double, 3>> xs(T + 1, {0.0, 0.0, 0.0});
  for (int t = 1; t <= T; ++t) {
    xs[static_cast<size_t>(t)] = {rng.uniform(-1, 1), rng.uniform(-1, 1),
                                  rng.uniform() < 0.5 ? 0.0 : 1.0};
  }
  std::vector<std::vector<double>> zs(static_cast<size_t>(T),
                                      std::vector<double>(static_cast<size_t>(cfg.d_z)));
  for (auto& z : zs) {
    for (double& v : z) v = rng.normal();
  }

  // Graph side: B = 1, no step mask.
  Graph g;
  const nn::BoundParams p = nn::bind(g, m.store);
  std::vector<int> idx(content.begin(), content.end());
  const NodeId rows = g.gather_concat_rows(p("embed"), idx, 1);
  Tensor mask_t(1, M);
  for (int j = 0; j < M; ++j) mask_t.at(0, j) = 1.0;
  const NodeId cmask = g.constant(std::move(mask_t));
  synth::GraphDecoderState gst = synth::decoder_graph_init(g, cfg, 1);

  synth::DecoderState pst = synth::decoder_init(m);

  for (int t = 0; t < T; ++t) {
    Tensor xt(1, 3);
    for (int c = 0; c < 3; ++c) xt.at(0, c) = xs[static_cast<size_t>(t)][static_cast<size_t>(c)];
    const NodeId x_in = g.constant(std::move(xt));
    synth::decoder_graph_advance(g, p, cfg, gst, x_in, rows, cmask, M, -1);
    const NodeId prior = synth::prior_graph(g, p, cfg, gst);
    Tensor zt(1, cfg.d_z);
    for (int d = 0; d < cfg.d_z; ++d) zt.at(0, d) = zs[static_cast<size_t>(t)][static_cast<size_t>(d)];
    const NodeId raw = synth::decoder_graph_output(g, p, cfg, gst, x_in, g.constant(std::move(zt)),
                                                   -1);

    synth::decoder_advance(m, pst, xs[static_cast<size_t>(t)].data(), content);
    const std::vector<double> ppr = synth::prior_raw(m, pst);
    const std::vector<double> praw =
        synth::decoder_output(m, pst, xs[static_cast<size_t>(t)].data(), zs[static_cast<size_t>(t)]);

    for (int k = 0; k < cfg.att_components; ++k) {
      CHECK(g.value(gst.kappa).at(0, k) ==
            doctest::Approx(pst.kappa[static_cast<size_t>(k)]).epsilon(1e-12));
    }
    for (int c = 0; c < cfg.d_c; ++c) {
      CHECK(g.value(gst.w).at(0, c) == doctest::Approx(pst.w[static_cast<size_t>(c)]).epsilon(1e-12));
    }
    for (int d = 0; d < 2 * cfg.d_z; ++d) {
      CHECK(g.value(prior).at(0, d) == doctest::Approx(ppr[static_cast<size_t>(d)]).epsilon(1e-12));
    }
    const Tensor& graw = g.value(raw);
    REQUIRE(graw.cols() == static_cast<int>(praw.size()));
    for (int c = 0; c < graw.cols(); ++c) {
      CHECK(graw.at(0, c) == doctest::Approx(praw[static_cast<size_t>(c)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("generate is deterministic and emits valid samples") {
  const SynthModel m = synth::init_synth(tiny_cfg(), "ab");

  common::Rng r1(42), r2(42), r3(43);
  const ink::StrokeSample g1 = synth::generate(m, "ab", synth::PriorSample{}, 0.0, r1);
  const ink::StrokeSample g2 = synth::generate(m, "ab", synth::PriorSample{}, 0.0, r2);
  const ink::StrokeSample g3 = synth::generate(m, "ab", synth::PriorSample{}, 0.0, r3);
  REQUIRE(g1.moves.size() == g2.moves.size());
  for (size_t i = 0; i < g1.moves.size(); ++i) {
    CHECK(g1.moves[i].dx == g2.moves[i].dx);
    CHECK(g1.moves[i].dy == g2.moves[i].dy);
    CHECK(g1.moves[i].pen_down == g2.moves[i].pen_down);
  }
  bool differs = g1.moves.size() != g3.moves.size();
  for (size_t i = 0; !differs && i < g1.moves.size(); ++i) {
    differs = g1.moves[i].dx != g3.moves[i].dx;
  }
  CHECK(differs);

  CHECK(g1.text == "ab");
  CHECK(static_cast<int>(g1.moves.size()) <= synth::default_t_max(2));
  CHECK(synth::default_t_max(2) == 130);

  ink::StrokeSample out = g1;
  out.id = "gen-1";
  const ink::Alphabet alpha("ab");
  ink::validate(out, &alpha);
  std::stringstream buf;
  const std::vector<ink::StrokeSample> one = {out};
  ink::write_jsonl(buf, one);
  const ink::ReadResult rr = ink::read_jsonl(buf, &alpha);
  REQUIRE(rr.samples.size() == 1);
  REQUIRE(rr.samples[0].moves.size() == out.moves.size());
  for (size_t i = 0; i < out.moves.size(); ++i) {
    CHECK(rr.samples[0].moves[i].dx == doctest::Approx(out.moves[i].dx).epsilon(1e-12));
  }

  // A tight budget truncates generation.
  common::Rng r4(42);
  const ink::StrokeSample g4 = synth::generate(m, "ab", synth::PriorSample{}, 0.0, r4, 3);
  CHECK(g4.moves.size() == 3);

  common::Rng r5(42);
  CHECK_THROWS_AS(synth::generate(m, "ab", synth::PriorSample{}, -1.0, r5),
                  std::invalid_argument);
  CHECK_THROWS_AS(synth::generate(m, "ab", synth::Reference{{0.0}}, 0.0, r5),
                  std::invalid_argument);  // wrong style width
}

TEST_CASE("encode_style is deterministic with the latent width") {
  const SynthModel m = synth::init_synth(tiny_cfg(), "ab");
  const ink::StrokeSample s = toy_sample("ab", 9);
  const std::vector<double> v1 = synth::encode_style(m, s);
  const std::vector<double> v2 = synth::encode_style(m, s);
  REQUIRE(static_cast<int>(v1.size()) == m.cfg.d_z);
  CHECK(v1 == v2);

  const std::vector<double> v3 = synth::encode_style(m, toy_sample("ba", 10));
  CHECK(v1 != v3);

  ink::StrokeSample tiny;
  tiny.id = "tiny";
  tiny.text = "a";
  tiny.moves = {{0.1, 0.0, 1}};
  CHECK_THROWS_AS(synth::encode_style(m, tiny), std::invalid_argument);

  // Style vectors steer generation.
  common::Rng ra(3), rb(3);
  const ink::StrokeSample from_v1 = synth::generate(m, "ab", synth::Reference{v1}, 0.0, ra);
  const ink::StrokeSample from_v3 = synth::generate(m, "ab", synth::Reference{v3}, 0.0, rb);
  bool differs = from_v1.moves.size() != from_v3.moves.size();
  for (size_t i = 0; !differs && i < from_v1.moves.size(); ++i) {
    differs = from_v1.moves[i].dx != from_v3.moves[i].dx;
  }
  CHECK(differs);
}

TEST_CASE("checkpoint round trip preserves the model") {
  SynthConfig cfg = tiny_cfg();
  cfg.components = 3;
  const SynthModel m = synth::init_synth(cfg, "abc");
  const numerics::Checkpoint ckpt = synth::to_checkpoint(m);
  CHECK(ckpt.meta["kind"] == "synthesizer");
  const SynthModel m2 = synth::synth_from_checkpoint(ckpt);
  CHECK(m2.alphabet == "abc");
  CHECK(m2.cfg.components == 3);
  CHECK(checkpoint_digest(m, "a") == checkpoint_digest(m2, "b"));

  numerics::Checkpoint bad = ckpt;
  bad.meta["kind"] = "recognizer";
  CHECK_THROWS_AS(synth::synth_from_checkpoint(bad), std::invalid_argument);
}

TEST_CASE("train_synth is deterministic and tracks validation") {
  std::vector<ink::StrokeSample> train, val;
  const std::vector<std::string> texts = {"ab", "ba", "aa", "bb"};
  for (size_t i = 0; i < texts.size(); ++i) train.push_back(toy_sample(texts[i], 100 + i));
  val.push_back(toy_sample("ab", 200));
  val.push_back(toy_sample("ba", 201));

  SynthConfig cfg = tiny_cfg();
  cfg.epochs = 2;
  cfg.epoch_steps = 3;
  cfg.batch_size = 4;
  cfg.lr = 1e-3;

  const auto r1 = synth::train_synth(train, val, "ab", cfg);
  const auto r2 = synth::train_synth(train, val, "ab", cfg);
  CHECK(r1.stats.epoch_recon == r2.stats.epoch_recon);
  CHECK(r1.stats.epoch_kl == r2.stats.epoch_kl);
  CHECK(checkpoint_digest(r1.model, "r1") == checkpoint_digest(r2.model, "r2"));
  REQUIRE(r1.stats.epoch_val_recon.size() == 2);
  CHECK(r1.stats.best_epoch >= 0);

  SynthConfig other = cfg;
  other.seed = 12;
  const auto r3 = synth::train_synth(train, val, "ab", other);
  CHECK(checkpoint_digest(r1.model, "r1b") != checkpoint_digest(r3.model, "r3"));

  SynthConfig zcfg = cfg;
  zcfg.d_z = 0;
  CHECK_THROWS_AS(synth::train_synth(train, val, "ab", zcfg), std::invalid_argument);

  SynthConfig lang_cfg = cfg;
  lang_cfg.langs = {"xx"};
  CHECK_THROWS_AS(synth::train_synth(train, val, "ab", lang_cfg), std::runtime_error);

  // Unusable samples are skipped with a warning, not fatal.
  std::vector<ink::StrokeSample> with_bad = train;
  ink::StrokeSample bad;
  bad.id = "bad";
  bad.text = "ab";
  with_bad.push_back(bad);  // no moves
  const auto r4 = synth::train_synth(with_bad, val, "ab", cfg);
  REQUIRE(!r4.stats.warnings.empty());
  CHECK(r4.stats.warnings[0].find("bad") != std::string::npos);
}

TEST_CASE("repeated optimization of one sample halves its loss") {
  SynthConfig cfg;
  cfg.d_c = 8;
  cfg.d_h = 16;
  cfg.d_z = 2;
  cfg.d_e = 8;
  cfg.components = 3;
  cfg.att_components = 2;
  cfg.epochs = 8;
  cfg.epoch_steps = 25;  // 200 optimizer steps
  cfg.batch_size = 1;
  cfg.lr = 3e-3;
  cfg.seed = 5;

  const ink::StrokeSample s = toy_sample("ab", 77);
  const std::vector<ink::StrokeSample> train = {s};

  const SynthModel fresh = synth::init_synth(cfg, "ab");
  common::Rng e1(91);
  const double before = synth::training_loss(fresh, s, 1.0, e1).total;

  const auto r = synth::train_synth(train, {}, "ab", cfg);
  common::Rng e2(91);
  const double after = synth::training_loss(r.model, s, 1.0, e2).total;
  CHECK(after < 0.5 * before);

  // Validation recon falls over training on the same data.
  SynthConfig vcfg = cfg;
  vcfg.epochs = 4;
  const auto rv = synth::train_synth(train, train, "ab", vcfg);
  CHECK(rv.stats.epoch_val_recon.back() < rv.stats.epoch_val_recon.front());
}
