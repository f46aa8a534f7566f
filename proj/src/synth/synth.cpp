#include "synth/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mdn/mdn.hpp"
#include "metrics/metrics.hpp"
#include "numerics/adam.hpp"

namespace synth {

using numerics::Graph;
using numerics::NodeId;
using numerics::Tensor;

namespace {

void check_cfg(const SynthConfig& cfg) {
  if (cfg.d_z < 1) throw std::invalid_argument("synth: d_z must be >= 1");
  if (cfg.d_c < 1 || cfg.d_h < 1 || cfg.d_e < 1) {
    throw std::invalid_argument("synth: hidden sizes must be positive");
  }
  if (cfg.components < 1) throw std::invalid_argument("synth: mixture needs >= 1 component");
  if (cfg.att_components < 1) throw std::invalid_argument("synth: attention needs >= 1 component");
  if (!(cfg.kappa_rate > 0.0)) throw std::invalid_argument("synth: kappa_rate must be > 0");
  if (cfg.eps_z < 0.0) throw std::invalid_argument("synth: eps_z must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("synth: batch_size must be positive");
  if (cfg.beta_warmup_frac < 0.0 || cfg.beta_warmup_frac > 1.0) {
    throw std::invalid_argument("synth: beta_warmup_frac must be in [0,1]");
  }
}

int raw_width(const SynthConfig& cfg) { return 6 * cfg.components + 1; }

}  // namespace

std::vector<int> encode_content(const std::string& text, const std::string& alphabet) {
  if (text.empty()) throw std::invalid_argument("synth: empty content");
  const ink::Alphabet alpha(alphabet);
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == ' ') {
      out.push_back(alpha.size());  // separator class
      continue;
    }
    const int idx = alpha.index_of(c);
    if (idx < 0) throw std::invalid_argument(std::string("synth: unknown character '") + c + "'");
    out.push_back(idx);
  }
  return out;
}

SynthModel init_synth(const SynthConfig& cfg, const std::string& alphabet) {
  check_cfg(cfg);
  if (alphabet.empty()) throw std::invalid_argument("synth: empty alphabet");
  SynthModel m;
  m.cfg = cfg;
  m.alphabet = alphabet;
  const int classes = static_cast<int>(alphabet.size()) + 1;
  const int dc = cfg.d_c, dh = cfg.d_h, dz = cfg.d_z, de = cfg.d_e;
  const int K = cfg.att_components;
  auto& s = m.store;
  s.create("embed", classes, dc);
  s.create("lstm1_w", 3 + dc + dh, 4 * dh);
  s.create("lstm1_b", 1, 4 * dh);
  s.create("att_w", dh, 3 * K);
  s.create("att_b", 1, 3 * K);
  s.create("prior_w", dh + dc, 2 * dz);
  s.create("prior_b", 1, 2 * dz);
  s.create("enc_fwd_w", 3 + dc + de, 4 * de);
  s.create("enc_fwd_b", 1, 4 * de);
  s.create("enc_bwd_w", 3 + dc + de, 4 * de);
  s.create("enc_bwd_b", 1, 4 * de);
  s.create("post_w", 2 * de, 2 * dz);
  s.create("post_b", 1, 2 * dz);
  s.create("lstm2_w", 3 + dh + dc + dz + dh, 4 * dh);
  s.create("lstm2_b", 1, 4 * dh);
  s.create("out_w", dh + dc, raw_width(cfg));
  s.create("out_b", 1, raw_width(cfg));

  common::Rng rng(common::derive_seed(cfg.seed, 1));
  Tensor& emb = s.get("embed");
  for (int64_t i = 0; i < emb.size(); ++i) emb.data()[i] = rng.uniform(-0.1, 0.1);
  nn::init_lstm(rng, s.get("lstm1_w"), s.get("lstm1_b"), dh);
  nn::init_linear(rng, s.get("att_w"), s.get("att_b"));
  // prior head stays zero: the initial latent prior is the unit Gaussian.
  nn::init_lstm(rng, s.get("enc_fwd_w"), s.get("enc_fwd_b"), de);
  nn::init_lstm(rng, s.get("enc_bwd_w"), s.get("enc_bwd_b"), de);
  nn::init_linear(rng, s.get("post_w"), s.get("post_b"));
  nn::init_lstm(rng, s.get("lstm2_w"), s.get("lstm2_b"), dh);
  nn::init_linear(rng, s.get("out_w"), s.get("out_b"));
  return m;
}

numerics::Checkpoint to_checkpoint(const SynthModel& model) {
  numerics::Checkpoint ckpt = model.store.to_checkpoint();
  ckpt.meta["kind"] = "synthesizer";
  ckpt.meta["alphabet"] = model.alphabet;
  ckpt.meta["d_c"] = model.cfg.d_c;
  ckpt.meta["d_h"] = model.cfg.d_h;
  ckpt.meta["d_z"] = model.cfg.d_z;
  ckpt.meta["d_e"] = model.cfg.d_e;
  ckpt.meta["components"] = model.cfg.components;
  ckpt.meta["att_components"] = model.cfg.att_components;
  ckpt.meta["kappa_rate"] = model.cfg.kappa_rate;
  ckpt.meta["eps_z"] = model.cfg.eps_z;
  return ckpt;
}

SynthModel synth_from_checkpoint(const numerics::Checkpoint& ckpt) {
  if (!ckpt.meta.contains("kind") || ckpt.meta["kind"] != "synthesizer") {
    throw std::invalid_argument("synth: checkpoint is not a synthesizer checkpoint");
  }
  SynthConfig cfg;
  cfg.d_c = ckpt.meta["d_c"].get<int>();
  cfg.d_h = ckpt.meta["d_h"].get<int>();
  cfg.d_z = ckpt.meta["d_z"].get<int>();
  cfg.d_e = ckpt.meta["d_e"].get<int>();
  cfg.components = ckpt.meta["components"].get<int>();
  cfg.att_components = ckpt.meta["att_components"].get<int>();
  cfg.kappa_rate = ckpt.meta["kappa_rate"].get<double>();
  cfg.eps_z = ckpt.meta["eps_z"].get<double>();
  SynthModel m = init_synth(cfg, ckpt.meta["alphabet"].get<std::string>());
  m.store.load(ckpt);
  return m;
}

// --- graph decoder ---

GraphDecoderState decoder_graph_init(Graph& g, const SynthConfig& cfg, int B) {
  GraphDecoderState st;
  const NodeId zh = g.constant(Tensor(B, cfg.d_h));
  st.s1 = {zh, zh};
  st.s2 = {zh, zh};
  st.kappa = g.constant(Tensor(B, cfg.att_components));
  st.w = g.constant(Tensor(B, cfg.d_c));
  return st;
}

void decoder_graph_advance(Graph& g, const nn::BoundParams& p, const SynthConfig& cfg,
                           GraphDecoderState& st, NodeId x_in, NodeId content_rows,
                           NodeId content_mask, int M, NodeId step_mask) {
  const int K = cfg.att_components;
  const std::array<NodeId, 2> in1 = {x_in, st.w};
  const NodeId x1 = g.concat_cols(in1);
  if (step_mask >= 0) {
    st.s1 = nn::lstm_step_masked(g, x1, st.s1, p("lstm1_w"), p("lstm1_b"), cfg.d_h, step_mask);
  } else {
    st.s1 = nn::lstm_step(g, x1, st.s1, p("lstm1_w"), p("lstm1_b"), cfg.d_h);
  }

  const NodeId att = nn::linear(g, st.s1.h, p("att_w"), p("att_b"));
  const NodeId alpha = g.exp(g.slice_cols(att, 0, K));
  const NodeId beta = g.exp(g.slice_cols(att, K, 2 * K));
  NodeId inc = g.scale(g.exp(g.slice_cols(att, 2 * K, 3 * K)), cfg.kappa_rate);
  if (step_mask >= 0) inc = g.mul_colvec(inc, step_mask);
  st.kappa = g.add(st.kappa, inc);

  // Window weights over 1-based character positions.
  std::vector<NodeId> phis(static_cast<size_t>(M));
  for (int m = 1; m <= M; ++m) {
    const NodeId d = g.add_scalar(st.kappa, -static_cast<double>(m));
    const NodeId q = g.mul(beta, g.mul(d, d));
    phis[static_cast<size_t>(m - 1)] = g.row_sum(g.mul(alpha, g.exp(g.scale(q, -1.0))));
  }
  const NodeId phi = g.mul(g.concat_cols(phis), content_mask);
  st.w = g.weighted_block_sum(phi, content_rows);
}

NodeId prior_graph(Graph& g, const nn::BoundParams& p, const SynthConfig& cfg,
                   const GraphDecoderState& st) {
  (void)cfg;
  const std::array<NodeId, 2> in = {st.s1.h, st.w};
  return nn::linear(g, g.concat_cols(in), p("prior_w"), p("prior_b"));
}

NodeId decoder_graph_output(Graph& g, const nn::BoundParams& p, const SynthConfig& cfg,
                            GraphDecoderState& st, NodeId x_in, NodeId z, NodeId step_mask) {
  const std::array<NodeId, 4> in2 = {x_in, st.s1.h, st.w, z};
  const NodeId x2 = g.concat_cols(in2);
  if (step_mask >= 0) {
    st.s2 = nn::lstm_step_masked(g, x2, st.s2, p("lstm2_w"), p("lstm2_b"), cfg.d_h, step_mask);
  } else {
    st.s2 = nn::lstm_step(g, x2, st.s2, p("lstm2_w"), p("lstm2_b"), cfg.d_h);
  }
  const std::array<NodeId, 2> ino = {st.s2.h, st.w};
  return nn::linear(g, g.concat_cols(ino), p("out_w"), p("out_b"));
}

// --- batching ---

SynthBatch make_batch(const std::vector<const ink::StrokeSample*>& samples,
                      const std::string& alphabet, int d_z, common::Rng& rng) {
  if (samples.empty()) throw std::invalid_argument("synth: empty batch");
  const int B = static_cast<int>(samples.size());
  SynthBatch batch;
  batch.lens.resize(static_cast<size_t>(B));
  batch.content.resize(static_cast<size_t>(B));
  int T = 1;
  for (int b = 0; b < B; ++b) {
    const ink::StrokeSample& s = *samples[static_cast<size_t>(b)];
    if (s.moves.empty()) throw std::invalid_argument("synth: sample without moves");
    batch.lens[static_cast<size_t>(b)] = static_cast<int>(s.moves.size());
    batch.content[static_cast<size_t>(b)] = encode_content(s.text, alphabet);
    T = std::max(T, static_cast<int>(s.moves.size()));
  }
  batch.x = Tensor((T + 1) * B, 3);
  for (int b = 0; b < B; ++b) {
    const auto& moves = samples[static_cast<size_t>(b)]->moves;
    for (size_t t = 0; t < moves.size(); ++t) {
      const int row = static_cast<int>(t + 1) * B + b;
      batch.x.at(row, 0) = moves[t].dx;
      batch.x.at(row, 1) = moves[t].dy;
      batch.x.at(row, 2) = moves[t].pen_down;
    }
  }
  batch.noise = Tensor(T * B, d_z);
  for (int64_t i = 0; i < batch.noise.size(); ++i) batch.noise.data()[i] = rng.normal();
  return batch;
}

// --- training graph ---

namespace {

struct ContentNodes {
  NodeId rows;  // [B*M, d_c]
  NodeId mask;  // [B, M]
  NodeId csum;  // [B, d_c]
  int M = 0;
};

ContentNodes build_content(Graph& g, const nn::BoundParams& p, const SynthBatch& batch) {
  const int B = static_cast<int>(batch.lens.size());
  int M = 1;
  for (const auto& c : batch.content) M = std::max(M, static_cast<int>(c.size()));
  std::vector<int> idx(static_cast<size_t>(B) * M, -1);
  Tensor mask(B, M);
  Tensor mean_w(B, M);
  for (int b = 0; b < B; ++b) {
    const auto& c = batch.content[static_cast<size_t>(b)];
    for (size_t m = 0; m < c.size(); ++m) {
      idx[static_cast<size_t>(b) * M + m] = c[m];
      mask.at(b, static_cast<int>(m)) = 1.0;
      mean_w.at(b, static_cast<int>(m)) = 1.0 / static_cast<double>(c.size());
    }
  }
  ContentNodes out;
  out.M = M;
  out.rows = g.gather_concat_rows(p("embed"), idx, 1);
  out.mask = g.constant(std::move(mask));
  out.csum = g.weighted_block_sum(g.constant(std::move(mean_w)), out.rows);
  return out;
}

/// Per-step posterior rows [B, 2*d_z] from the bidirectional encoder.
std::vector<NodeId> posterior_rows(Graph& g, const nn::BoundParams& p, const SynthConfig& cfg,
                                   const std::vector<NodeId>& x_steps, NodeId csum,
                                   const std::vector<NodeId>& masks) {
  const int T = static_cast<int>(x_steps.size());
  const int B = static_cast<int>(g.value(csum).rows());
  const NodeId zero = g.constant(Tensor(B, cfg.d_e));
  std::vector<NodeId> ins(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    const std::array<NodeId, 2> parts = {x_steps[static_cast<size_t>(t)], csum};
    ins[static_cast<size_t>(t)] = g.concat_cols(parts);
  }
  std::vector<NodeId> hf(static_cast<size_t>(T)), hb(static_cast<size_t>(T));
  nn::StepState st{zero, zero};
  for (int t = 0; t < T; ++t) {
    st = nn::lstm_step_masked(g, ins[static_cast<size_t>(t)], st, p("enc_fwd_w"), p("enc_fwd_b"),
                              cfg.d_e, masks[static_cast<size_t>(t)]);
    hf[static_cast<size_t>(t)] = st.h;
  }
  st = {zero, zero};
  for (int t = T - 1; t >= 0; --t) {
    st = nn::lstm_step_masked(g, ins[static_cast<size_t>(t)], st, p("enc_bwd_w"), p("enc_bwd_b"),
                              cfg.d_e, masks[static_cast<size_t>(t)]);
    hb[static_cast<size_t>(t)] = st.h;
  }
  std::vector<NodeId> rows(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    const std::array<NodeId, 2> parts = {hf[static_cast<size_t>(t)], hb[static_cast<size_t>(t)]};
    rows[static_cast<size_t>(t)] = nn::linear(g, g.concat_cols(parts), p("post_w"), p("post_b"));
  }
  return rows;
}

/// Closed-form KL between diagonal Gaussians given [mu | log sigma] rows.
NodeId kl_rows(Graph& g, NodeId posterior, NodeId prior, int d_z) {
  const NodeId mu_q = g.slice_cols(posterior, 0, d_z);
  const NodeId lq = g.slice_cols(posterior, d_z, 2 * d_z);
  const NodeId mu_p = g.slice_cols(prior, 0, d_z);
  const NodeId lp = g.slice_cols(prior, d_z, 2 * d_z);
  const NodeId dl = g.sub(lp, lq);
  const NodeId var_ratio = g.scale(g.exp(g.scale(dl, -2.0)), 0.5);  // 0.5 sigma_q^2/sigma_p^2
  const NodeId dm = g.sub(mu_q, mu_p);
  const NodeId mean_term =
      g.scale(g.mul(g.mul(dm, dm), g.exp(g.scale(lp, -2.0))), 0.5);
  return g.row_sum(g.add_scalar(g.add(g.add(dl, var_ratio), mean_term), -0.5));
}

}  // namespace

SynthGraphOut synth_graph(Graph& g, const nn::BoundParams& p, const SynthConfig& cfg,
                          const SynthBatch& batch, double beta) {
  const int B = static_cast<int>(batch.lens.size());
  const int T = static_cast<int>(batch.x.rows()) / B - 1;
  const int dz = cfg.d_z;

  ContentNodes content = build_content(g, p, batch);

  // Step masks (1-based step t is real when t <= lens[b]).
  std::vector<NodeId> masks(static_cast<size_t>(T));
  for (int t = 1; t <= T; ++t) {
    Tensor m(B, 1);
    for (int b = 0; b < B; ++b) m.at(b, 0) = t <= batch.lens[static_cast<size_t>(b)] ? 1.0 : 0.0;
    masks[static_cast<size_t>(t - 1)] = g.constant(std::move(m));
  }

  // Teacher-forced rows.
  std::vector<NodeId> x_rows(static_cast<size_t>(T + 1));
  for (int t = 0; t <= T; ++t) {
    Tensor xt(B, 3);
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < 3; ++c) xt.at(b, c) = batch.x.at(t * B + b, c);
    }
    x_rows[static_cast<size_t>(t)] = g.constant(std::move(xt));
  }

  const std::vector<NodeId> x_steps(x_rows.begin() + 1, x_rows.end());
  const std::vector<NodeId> post = posterior_rows(g, p, cfg, x_steps, content.csum, masks);

  GraphDecoderState st = decoder_graph_init(g, cfg, B);
  NodeId recon_col = g.constant(Tensor(B, 1));
  NodeId kl_col = g.constant(Tensor(B, 1));
  SynthGraphOut out;
  out.kappa.reserve(static_cast<size_t>(T));
  for (int t = 1; t <= T; ++t) {
    const NodeId mask = masks[static_cast<size_t>(t - 1)];
    const NodeId x_in = x_rows[static_cast<size_t>(t - 1)];
    decoder_graph_advance(g, p, cfg, st, x_in, content.rows, content.mask, content.M, mask);
    out.kappa.push_back(st.kappa);

    const NodeId prior = prior_graph(g, p, cfg, st);
    const NodeId posterior = post[static_cast<size_t>(t - 1)];
    const NodeId mu_q = g.slice_cols(posterior, 0, dz);
    const NodeId lq = g.slice_cols(posterior, dz, 2 * dz);
    Tensor eps(B, dz);
    for (int b = 0; b < B; ++b) {
      for (int d = 0; d < dz; ++d) eps.at(b, d) = batch.noise.at((t - 1) * B + b, d);
    }
    const NodeId z = g.add(mu_q, g.mul(g.exp(lq), g.constant(std::move(eps))));

    const NodeId raw = decoder_graph_output(g, p, cfg, st, x_in, z, mask);
    const NodeId xt = x_rows[static_cast<size_t>(t)];
    const mdn::GraphNll nll = mdn::nll_graph(g, raw, cfg.components, g.slice_cols(xt, 0, 1),
                                             g.slice_cols(xt, 1, 2), g.slice_cols(xt, 2, 3));
    recon_col = g.add(recon_col, g.mul_colvec(g.add(nll.position, nll.pen), mask));
    kl_col = g.add(kl_col, g.mul_colvec(kl_rows(g, posterior, prior, dz), mask));
  }
  out.recon = g.mean(recon_col);
  out.kl = g.mean(kl_col);
  out.total = g.add(out.recon, g.scale(out.kl, beta));
  return out;
}

LossParts training_loss(const SynthModel& model, const ink::StrokeSample& sample, double beta,
                        common::Rng& rng) {
  ink::validate(sample);
  const ink::StrokeSample norm = ink::normalize(sample);
  const std::vector<const ink::StrokeSample*> one = {&norm};
  const SynthBatch batch = make_batch(one, model.alphabet, model.cfg.d_z, rng);
  Graph g;
  const nn::BoundParams p = nn::bind(g, model.store);
  const SynthGraphOut out = synth_graph(g, p, model.cfg, batch, beta);
  LossParts parts;
  parts.recon = g.value(out.recon).item();
  parts.kl = g.value(out.kl).item();
  parts.total = g.value(out.total).item();
  return parts;
}

std::vector<double> encode_style(const SynthModel& model, const ink::StrokeSample& reference) {
  ink::validate(reference);
  if (reference.moves.size() < 2) {
    throw std::invalid_argument("synth: style reference needs at least 2 moves");
  }
  const ink::StrokeSample norm = ink::normalize(reference);
  const int T = static_cast<int>(norm.moves.size());
  const int dz = model.cfg.d_z;

  Graph g;
  const nn::BoundParams p = nn::bind(g, model.store);
  SynthBatch batch;
  batch.lens = {T};
  batch.content = {encode_content(norm.text, model.alphabet)};
  batch.x = Tensor(T + 1, 3);
  for (int t = 0; t < T; ++t) {
    batch.x.at(t + 1, 0) = norm.moves[static_cast<size_t>(t)].dx;
    batch.x.at(t + 1, 1) = norm.moves[static_cast<size_t>(t)].dy;
    batch.x.at(t + 1, 2) = norm.moves[static_cast<size_t>(t)].pen_down;
  }
  ContentNodes content = build_content(g, p, batch);
  std::vector<NodeId> masks(static_cast<size_t>(T));
  std::vector<NodeId> x_steps(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    Tensor m(1, 1);
    m.at(0, 0) = 1.0;
    masks[static_cast<size_t>(t)] = g.constant(std::move(m));
    Tensor xt(1, 3);
    for (int c = 0; c < 3; ++c) xt.at(0, c) = batch.x.at(t + 1, c);
    x_steps[static_cast<size_t>(t)] = g.constant(std::move(xt));
  }
  const std::vector<NodeId> post = posterior_rows(g, p, model.cfg, x_steps, content.csum, masks);
  std::vector<double> style(static_cast<size_t>(dz), 0.0);
  for (const NodeId row : post) {
    const Tensor& v = g.value(row);
    for (int d = 0; d < dz; ++d) style[static_cast<size_t>(d)] += v.at(0, d);
  }
  for (double& v : style) v /= static_cast<double>(T);
  return style;
}

// --- plain-math decoder ---

DecoderState decoder_init(const SynthModel& model) {
  DecoderState st;
  st.h1.assign(static_cast<size_t>(model.cfg.d_h), 0.0);
  st.c1.assign(static_cast<size_t>(model.cfg.d_h), 0.0);
  st.h2.assign(static_cast<size_t>(model.cfg.d_h), 0.0);
  st.c2.assign(static_cast<size_t>(model.cfg.d_h), 0.0);
  st.kappa.assign(static_cast<size_t>(model.cfg.att_components), 0.0);
  st.w.assign(static_cast<size_t>(model.cfg.d_c), 0.0);
  return st;
}

void decoder_advance(const SynthModel& model, DecoderState& st, const double* x_prev,
                     const std::vector<int>& content) {
  const SynthConfig& cfg = model.cfg;
  const int K = cfg.att_components;
  const int dc = cfg.d_c;
  std::vector<double> in1;
  in1.reserve(3 + st.w.size());
  in1.insert(in1.end(), x_prev, x_prev + 3);
  in1.insert(in1.end(), st.w.begin(), st.w.end());
  nn::lstm_cell_step(model.store.get("lstm1_w"), model.store.get("lstm1_b"), in1, st.h1, st.c1);

  std::vector<double> att(static_cast<size_t>(3 * K));
  nn::linear_apply(model.store.get("att_w"), model.store.get("att_b"), st.h1, att);
  for (int k = 0; k < K; ++k) {
    st.kappa[static_cast<size_t>(k)] += cfg.kappa_rate * std::exp(att[static_cast<size_t>(2 * K + k)]);
  }
  const int M = static_cast<int>(content.size());
  const Tensor& emb = model.store.get("embed");
  std::fill(st.w.begin(), st.w.end(), 0.0);
  for (int m = 1; m <= M; ++m) {
    double phi = 0.0;
    for (int k = 0; k < K; ++k) {
      const double alpha = std::exp(att[static_cast<size_t>(k)]);
      const double beta = std::exp(att[static_cast<size_t>(K + k)]);
      const double d = st.kappa[static_cast<size_t>(k)] - static_cast<double>(m);
      phi += alpha * std::exp(-(beta * (d * d)));
    }
    const int row = content[static_cast<size_t>(m - 1)];
    for (int c = 0; c < dc; ++c) st.w[static_cast<size_t>(c)] += phi * emb.at(row, c);
  }
}

std::vector<double> prior_raw(const SynthModel& model, const DecoderState& st) {
  std::vector<double> in;
  in.reserve(st.h1.size() + st.w.size());
  in.insert(in.end(), st.h1.begin(), st.h1.end());
  in.insert(in.end(), st.w.begin(), st.w.end());
  std::vector<double> out(static_cast<size_t>(2 * model.cfg.d_z));
  nn::linear_apply(model.store.get("prior_w"), model.store.get("prior_b"), in, out);
  return out;
}

std::vector<double> decoder_output(const SynthModel& model, DecoderState& st, const double* x_prev,
                                   const std::vector<double>& z) {
  std::vector<double> in2;
  in2.reserve(3 + st.h1.size() + st.w.size() + z.size());
  in2.insert(in2.end(), x_prev, x_prev + 3);
  in2.insert(in2.end(), st.h1.begin(), st.h1.end());
  in2.insert(in2.end(), st.w.begin(), st.w.end());
  in2.insert(in2.end(), z.begin(), z.end());
  nn::lstm_cell_step(model.store.get("lstm2_w"), model.store.get("lstm2_b"), in2, st.h2, st.c2);

  std::vector<double> ino;
  ino.reserve(st.h2.size() + st.w.size());
  ino.insert(ino.end(), st.h2.begin(), st.h2.end());
  ino.insert(ino.end(), st.w.begin(), st.w.end());
  std::vector<double> raw(static_cast<size_t>(raw_width(model.cfg)));
  nn::linear_apply(model.store.get("out_w"), model.store.get("out_b"), ino, raw);
  return raw;
}

int default_t_max(int content_len) { return 40 * content_len + 50; }

ink::StrokeSample generate(const SynthModel& model, const std::string& text,
                           const StyleSource& style, double bias, common::Rng& rng, int t_max) {
  if (bias < 0.0) throw std::invalid_argument("synth: bias must be >= 0");
  const std::vector<int> content = encode_content(text, model.alphabet);
  const int M = static_cast<int>(content.size());
  if (t_max < 0) t_max = default_t_max(M);
  const int dz = model.cfg.d_z;

  DecoderState st = decoder_init(model);
  std::array<double, 3> x_prev = {0.0, 0.0, 0.0};
  ink::StrokeSample out;
  out.text = text;
  for (int t = 1; t <= t_max; ++t) {
    decoder_advance(model, st, x_prev.data(), content);

    std::vector<double> z(static_cast<size_t>(dz));
    if (std::holds_alternative<Reference>(style)) {
      const Reference& ref = std::get<Reference>(style);
      if (static_cast<int>(ref.style.size()) != dz) {
        throw std::invalid_argument("synth: style vector has the wrong width");
      }
      for (int d = 0; d < dz; ++d) {
        if (!std::isfinite(ref.style[static_cast<size_t>(d)])) {
          throw std::invalid_argument("synth: style vector must be finite");
        }
        z[static_cast<size_t>(d)] = ref.style[static_cast<size_t>(d)] + model.cfg.eps_z * rng.normal();
      }
    } else {
      const std::vector<double> pr = prior_raw(model, st);
      for (int d = 0; d < dz; ++d) {
        z[static_cast<size_t>(d)] =
            pr[static_cast<size_t>(d)] + std::exp(pr[static_cast<size_t>(dz + d)]) * rng.normal();
      }
    }

    const std::vector<double> raw_row = decoder_output(model, st, x_prev.data(), z);
    const mdn::MixtureParams params =
        mdn::activate(mdn::unpack_raw(raw_row, model.cfg.components), bias);
    const mdn::SampledMove mv = mdn::sample(params, rng);
    out.moves.push_back({mv.dx, mv.dy, mv.pen_down});
    x_prev = {mv.dx, mv.dy, static_cast<double>(mv.pen_down)};

    double mean_kappa = 0.0;
    for (double k : st.kappa) mean_kappa += k;
    mean_kappa /= static_cast<double>(st.kappa.size());
    if (mean_kappa > static_cast<double>(M) + 0.5) break;
  }
  return out;
}

// --- training ---

namespace {

struct SynthItem {
  ink::StrokeSample norm;
};

std::vector<SynthItem> prepare_synth(const std::vector<ink::StrokeSample>& samples,
                                     const std::string& alphabet, const SynthConfig& cfg,
                                     std::vector<std::string>* warnings) {
  const ink::Alphabet alpha(alphabet);
  std::vector<SynthItem> items;
  for (const ink::StrokeSample& s : samples) {
    if (!cfg.langs.empty()) {
      const std::string lang = s.lang.value_or("");
      if (std::find(cfg.langs.begin(), cfg.langs.end(), lang) == cfg.langs.end()) continue;
    }
    try {
      ink::validate(s, &alpha);
      SynthItem it;
      it.norm = ink::normalize(s);
      if (it.norm.moves.size() < it.norm.text.size()) {
        if (warnings) {
          warnings->push_back("content of " + s.id + " is longer than its " +
                              std::to_string(it.norm.moves.size()) +
                              " steps; attention cannot cover it");
        }
      }
      items.push_back(std::move(it));
    } catch (const std::exception& e) {
      if (warnings) warnings->push_back("skipping " + s.id + ": " + e.what());
    }
  }
  return items;
}

}  // namespace

TrainSynthResult train_synth(const std::vector<ink::StrokeSample>& train,
                             const std::vector<ink::StrokeSample>& val,
                             const std::string& alphabet, const SynthConfig& cfg) {
  check_cfg(cfg);
  SynthTrainStats stats;
  const std::vector<SynthItem> items = prepare_synth(train, alphabet, cfg, &stats.warnings);
  if (items.empty()) throw std::runtime_error("synth: no trainable samples");
  const std::vector<SynthItem> val_items = prepare_synth(val, alphabet, cfg, &stats.warnings);

  SynthModel model = init_synth(cfg, alphabet);
  numerics::Adam opt(numerics::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm});
  common::Rng batch_rng(common::derive_seed(cfg.seed, 2));

  numerics::Checkpoint best = model.store.to_checkpoint();
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  const int n = static_cast<int>(items.size());
  const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * cfg.epoch_steps;
  const double warm = cfg.beta_warmup_frac * static_cast<double>(total_steps);
  int64_t global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double recon_sum = 0.0;
    double kl_sum = 0.0;
    for (int step = 0; step < cfg.epoch_steps; ++step, ++global_step) {
      const double beta =
          warm <= 0.0 ? 1.0 : std::min(1.0, static_cast<double>(global_step) / warm);
      std::vector<const ink::StrokeSample*> pick;
      if (n <= cfg.batch_size) {
        for (const SynthItem& it : items) pick.push_back(&it.norm);
      } else {
        for (int i = 0; i < cfg.batch_size; ++i) {
          pick.push_back(&items[batch_rng.uniform_index(static_cast<uint64_t>(n))].norm);
        }
      }
      const SynthBatch batch = make_batch(pick, alphabet, cfg.d_z, batch_rng);
      try {
        Graph g;
        const nn::BoundParams p = nn::bind(g, model.store);
        const SynthGraphOut out = synth_graph(g, p, cfg, batch, beta);
        recon_sum += g.value(out.recon).item();
        kl_sum += g.value(out.kl).item();
        g.backward(out.total);
        nn::adam_update(opt, model.store, g, p);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("synth: training diverged at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(step) + ": " + e.what());
      }
    }
    stats.epoch_recon.push_back(recon_sum / cfg.epoch_steps);
    stats.epoch_kl.push_back(kl_sum / cfg.epoch_steps);

    double val_recon = std::numeric_limits<double>::quiet_NaN();
    if (!val_items.empty()) {
      // Fixed per-epoch noise keeps the validation estimate comparable
      // across epochs.
      common::Rng val_rng(common::derive_seed(cfg.seed, 3));
      double sum = 0.0;
      for (const SynthItem& it : val_items) {
        const std::vector<const ink::StrokeSample*> one = {&it.norm};
        const SynthBatch batch = make_batch(one, alphabet, cfg.d_z, val_rng);
        Graph g;
        const nn::BoundParams p = nn::bind(g, model.store);
        const SynthGraphOut out = synth_graph(g, p, cfg, batch, 1.0);
        sum += g.value(out.recon).item();
      }
      val_recon = sum / static_cast<double>(val_items.size());
      if (val_recon < best_val) {
        best_val = val_recon;
        best_epoch = epoch;
        best = model.store.to_checkpoint();
      }
    }
    stats.epoch_val_recon.push_back(val_recon);
  }

  if (val_items.empty()) {
    best = model.store.to_checkpoint();
    best_epoch = cfg.epochs - 1;
    best_val = std::numeric_limits<double>::quiet_NaN();
  }
  model.store.load(best);
  stats.best_epoch = best_epoch;
  stats.best_val_recon = best_val;
  return {std::move(model), std::move(stats)};
}

}  // namespace synth
