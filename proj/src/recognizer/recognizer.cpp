#include "recognizer/recognizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "common/rng.hpp"
#include "ctc/ctc.hpp"
#include "metrics/metrics.hpp"
#include "numerics/adam.hpp"
#include "numerics/graph.hpp"

namespace recognizer {

using numerics::Graph;
using numerics::NodeId;
using numerics::Tensor;

namespace {

int half_up(int n) { return (n + 1) / 2; }

void check_cfg(const RecConfig& cfg) {
  if (cfg.kernel < 1 || cfg.kernel % 2 == 0) {
    throw std::invalid_argument("recognizer: kernel must be odd and positive");
  }
  if (cfg.conv1_channels < 1 || cfg.conv2_channels < 1 || cfg.hidden < 1) {
    throw std::invalid_argument("recognizer: channel and hidden sizes must be positive");
  }
  if (cfg.batch_size < 1) throw std::invalid_argument("recognizer: batch_size must be positive");
}

/// Gather indices for a stride-2 same-padding convolution on the
/// t-major/batch-minor row layout. Out-of-range taps map to -1 (zero row).
std::vector<int> conv_indices(int T_in, int T_out, int B, int kernel) {
  const int pad = (kernel - 1) / 2;
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(T_out) * B * kernel);
  for (int t = 0; t < T_out; ++t) {
    for (int b = 0; b < B; ++b) {
      for (int j = 0; j < kernel; ++j) {
        const int tau = 2 * t + j - pad;
        idx.push_back(tau >= 0 && tau < T_in ? tau * B + b : -1);
      }
    }
  }
  return idx;
}

/// Column mask [T*B,1] with 1 where t < len(b) after downsampling.
Tensor time_mask(const std::vector<int>& lens, int T, int B) {
  Tensor m(T * B, 1);
  for (int t = 0; t < T; ++t) {
    for (int b = 0; b < B; ++b) m.at(t * B + b, 0) = t < lens[static_cast<size_t>(b)] ? 1.0 : 0.0;
  }
  return m;
}

NodeId conv_layer(Graph& g, NodeId x, NodeId w, NodeId b, int T_in, int T_out, int B, int kernel,
                  const std::vector<int>& out_lens) {
  NodeId cols = g.gather_concat_rows(x, conv_indices(T_in, T_out, B, kernel), kernel);
  NodeId y = g.tanh(g.add_rowvec(g.matmul(cols, w), b));
  // Padded rows must be exact zeros so the next layer sees them as padding.
  return g.mul_colvec(y, g.constant(time_mask(out_lens, T_out, B)));
}

struct BiLstmNames {
  std::string fw, fb, bw, bb;
};

NodeId bilstm_layer(Graph& g, const nn::BoundParams& p, const BiLstmNames& names, NodeId x, int T,
                    int B, int hidden, const std::vector<NodeId>& masks) {
  const NodeId zero = g.constant(Tensor(B, hidden));
  std::vector<NodeId> xs(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) xs[static_cast<size_t>(t)] = g.slice_rows(x, t * B, (t + 1) * B);

  std::vector<NodeId> hf(static_cast<size_t>(T)), hb(static_cast<size_t>(T));
  nn::StepState st{zero, zero};
  for (int t = 0; t < T; ++t) {
    st = nn::lstm_step_masked(g, xs[static_cast<size_t>(t)], st, p(names.fw), p(names.fb), hidden,
                              masks[static_cast<size_t>(t)]);
    hf[static_cast<size_t>(t)] = st.h;
  }
  st = {zero, zero};
  for (int t = T - 1; t >= 0; --t) {
    st = nn::lstm_step_masked(g, xs[static_cast<size_t>(t)], st, p(names.bw), p(names.bb), hidden,
                              masks[static_cast<size_t>(t)]);
    hb[static_cast<size_t>(t)] = st.h;
  }
  std::vector<NodeId> rows(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    const std::array<NodeId, 2> parts = {hf[static_cast<size_t>(t)], hb[static_cast<size_t>(t)]};
    rows[static_cast<size_t>(t)] = g.concat_cols(parts);
  }
  return g.concat_rows(rows);
}

struct Item {
  std::string id;
  std::string text;
  Tensor feats;
  std::vector<int> label;
};

std::vector<Item> prepare(const std::vector<ink::StrokeSample>& samples,
                          const ink::Alphabet& alpha, std::vector<std::string>* warnings) {
  std::vector<Item> items;
  for (const ink::StrokeSample& s : samples) {
    try {
      ink::validate(s, &alpha);
      Item it;
      it.id = s.id;
      it.text = s.text;
      it.feats = ink::extract_features(ink::normalize(s));
      it.label = alpha.encode(s.text);
      const int frames = out_len(static_cast<int>(it.feats.rows()));
      const int need = ctc::min_feasible_frames(it.label);
      if (frames < need) {
        if (warnings) {
          warnings->push_back("skipping " + s.id + ": " + std::to_string(frames) +
                              " frames cannot carry a " + std::to_string(it.label.size()) +
                              "-char label (needs " + std::to_string(need) + ")");
        }
        continue;
      }
      items.push_back(std::move(it));
    } catch (const std::exception& e) {
      if (warnings) warnings->push_back("skipping " + s.id + ": " + e.what());
    }
  }
  return items;
}

}  // namespace

int out_len(int T) {
  if (T < 1) throw std::invalid_argument("recognizer: empty input");
  return half_up(half_up(T));
}

RecModel init_rec(const RecConfig& cfg, const std::string& alphabet) {
  check_cfg(cfg);
  if (alphabet.empty()) throw std::invalid_argument("recognizer: empty alphabet");
  RecModel m;
  m.cfg = cfg;
  m.alphabet = alphabet;
  const int classes = static_cast<int>(alphabet.size()) + 1;
  const int k = cfg.kernel;
  const int c1 = cfg.conv1_channels;
  const int c2 = cfg.conv2_channels;
  const int h = cfg.hidden;
  auto& s = m.store;
  s.create("conv1_w", k * 4, c1);
  s.create("conv1_b", 1, c1);
  s.create("conv2_w", k * c1, c2);
  s.create("conv2_b", 1, c2);
  s.create("lstm1_fwd_w", c2 + h, 4 * h);
  s.create("lstm1_fwd_b", 1, 4 * h);
  s.create("lstm1_bwd_w", c2 + h, 4 * h);
  s.create("lstm1_bwd_b", 1, 4 * h);
  s.create("lstm2_fwd_w", 2 * h + h, 4 * h);
  s.create("lstm2_fwd_b", 1, 4 * h);
  s.create("lstm2_bwd_w", 2 * h + h, 4 * h);
  s.create("lstm2_bwd_b", 1, 4 * h);
  s.create("out_w", 2 * h, classes);
  s.create("out_b", 1, classes);

  common::Rng rng(common::derive_seed(cfg.seed, 1));
  nn::init_linear(rng, s.get("conv1_w"), s.get("conv1_b"));
  nn::init_linear(rng, s.get("conv2_w"), s.get("conv2_b"));
  nn::init_lstm(rng, s.get("lstm1_fwd_w"), s.get("lstm1_fwd_b"), h);
  nn::init_lstm(rng, s.get("lstm1_bwd_w"), s.get("lstm1_bwd_b"), h);
  nn::init_lstm(rng, s.get("lstm2_fwd_w"), s.get("lstm2_fwd_b"), h);
  nn::init_lstm(rng, s.get("lstm2_bwd_w"), s.get("lstm2_bwd_b"), h);
  nn::init_linear(rng, s.get("out_w"), s.get("out_b"));
  return m;
}

numerics::Checkpoint to_checkpoint(const RecModel& model) {
  numerics::Checkpoint ckpt = model.store.to_checkpoint();
  ckpt.meta["kind"] = "recognizer";
  ckpt.meta["alphabet"] = model.alphabet;
  ckpt.meta["conv1_channels"] = model.cfg.conv1_channels;
  ckpt.meta["conv2_channels"] = model.cfg.conv2_channels;
  ckpt.meta["kernel"] = model.cfg.kernel;
  ckpt.meta["hidden"] = model.cfg.hidden;
  return ckpt;
}

RecModel rec_from_checkpoint(const numerics::Checkpoint& ckpt) {
  if (!ckpt.meta.contains("kind") || ckpt.meta["kind"] != "recognizer") {
    throw std::invalid_argument("recognizer: checkpoint is not a recognizer checkpoint");
  }
  RecConfig cfg;
  cfg.conv1_channels = ckpt.meta["conv1_channels"].get<int>();
  cfg.conv2_channels = ckpt.meta["conv2_channels"].get<int>();
  cfg.kernel = ckpt.meta["kernel"].get<int>();
  cfg.hidden = ckpt.meta["hidden"].get<int>();
  RecModel m = init_rec(cfg, ckpt.meta["alphabet"].get<std::string>());
  m.store.load(ckpt);
  return m;
}

std::vector<NodeId> rec_graph(Graph& g, const nn::BoundParams& p, const RecConfig& cfg, int classes,
                              NodeId features, const std::vector<int>& lens) {
  const int B = static_cast<int>(lens.size());
  if (B < 1) throw std::invalid_argument("recognizer: empty batch");
  const int T = static_cast<int>(g.value(features).rows()) / B;
  std::vector<int> lens1(lens.size()), lens2(lens.size());
  for (size_t b = 0; b < lens.size(); ++b) {
    if (lens[b] < 1 || lens[b] > T) throw std::invalid_argument("recognizer: bad sample length");
    lens1[b] = half_up(lens[b]);
    lens2[b] = half_up(lens1[b]);
  }
  const int T1 = half_up(T);
  const int T2 = half_up(T1);

  NodeId h1 = conv_layer(g, features, p("conv1_w"), p("conv1_b"), T, T1, B, cfg.kernel, lens1);
  NodeId h2 = conv_layer(g, h1, p("conv2_w"), p("conv2_b"), T1, T2, B, cfg.kernel, lens2);

  std::vector<NodeId> masks(static_cast<size_t>(T2));
  for (int t = 0; t < T2; ++t) {
    Tensor m(B, 1);
    for (int b = 0; b < B; ++b) m.at(b, 0) = t < lens2[static_cast<size_t>(b)] ? 1.0 : 0.0;
    masks[static_cast<size_t>(t)] = g.constant(std::move(m));
  }
  NodeId r1 = bilstm_layer(g, p, {"lstm1_fwd_w", "lstm1_fwd_b", "lstm1_bwd_w", "lstm1_bwd_b"}, h2,
                           T2, B, cfg.hidden, masks);
  NodeId r2 = bilstm_layer(g, p, {"lstm2_fwd_w", "lstm2_fwd_b", "lstm2_bwd_w", "lstm2_bwd_b"}, r1,
                           T2, B, cfg.hidden, masks);
  NodeId logits = nn::linear(g, r2, p("out_w"), p("out_b"));
  if (g.value(logits).cols() != classes) {
    throw std::invalid_argument("recognizer: class count mismatch");
  }
  NodeId logp = g.log_softmax_rows(logits);

  std::vector<NodeId> lattices(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    lattices[static_cast<size_t>(b)] = g.slice_rows_strided(logp, b, B, lens2[static_cast<size_t>(b)]);
  }
  return lattices;
}

numerics::Tensor rec_forward(const RecModel& model, const numerics::Tensor& features) {
  if (features.rows() < 1 || features.cols() != 4) {
    throw std::invalid_argument("recognizer: features must be [T,4] with T >= 1");
  }
  Graph g;
  nn::BoundParams p = nn::bind(g, model.store);
  NodeId x = g.constant(features);
  const std::vector<int> lens = {static_cast<int>(features.rows())};
  const int classes = static_cast<int>(model.alphabet.size()) + 1;
  std::vector<NodeId> lat = rec_graph(g, p, model.cfg, classes, x, lens);
  return g.value(lat[0]);
}

TrainRecResult train_rec(const std::vector<ink::StrokeSample>& train,
                         const std::vector<ink::StrokeSample>& val, const std::string& alphabet,
                         const RecConfig& cfg) {
  check_cfg(cfg);
  const ink::Alphabet alpha(alphabet);
  TrainStats stats;
  std::vector<Item> items = prepare(train, alpha, &stats.warnings);
  if (items.empty()) throw std::runtime_error("recognizer: no trainable samples");
  std::vector<Item> val_items = prepare(val, alpha, &stats.warnings);

  RecModel model = init_rec(cfg, alphabet);
  const int classes = static_cast<int>(alphabet.size()) + 1;
  numerics::Adam opt(numerics::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm});
  common::Rng batch_rng(common::derive_seed(cfg.seed, 2));

  numerics::Checkpoint best = model.store.to_checkpoint();
  double best_cer = std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  const int n = static_cast<int>(items.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (int step = 0; step < cfg.epoch_steps; ++step) {
      std::vector<int> pick;
      if (n <= cfg.batch_size) {
        for (int i = 0; i < n; ++i) pick.push_back(i);
      } else {
        for (int i = 0; i < cfg.batch_size; ++i) {
          pick.push_back(static_cast<int>(batch_rng.uniform_index(static_cast<uint64_t>(n))));
        }
      }
      const int B = static_cast<int>(pick.size());
      int T = 1;
      for (int i : pick) T = std::max(T, static_cast<int>(items[static_cast<size_t>(i)].feats.rows()));
      Tensor feats(T * B, 4);
      std::vector<int> lens(static_cast<size_t>(B));
      for (int b = 0; b < B; ++b) {
        const Item& it = items[static_cast<size_t>(pick[static_cast<size_t>(b)])];
        const int Tb = static_cast<int>(it.feats.rows());
        lens[static_cast<size_t>(b)] = Tb;
        for (int t = 0; t < Tb; ++t) {
          for (int c = 0; c < 4; ++c) feats.at(t * B + b, c) = it.feats.at(t, c);
        }
      }
      Graph g;
      nn::BoundParams p = nn::bind(g, model.store);
      NodeId x = g.constant(std::move(feats));
      std::vector<NodeId> lat = rec_graph(g, p, cfg, classes, x, lens);
      std::vector<NodeId> losses(static_cast<size_t>(B));
      for (int b = 0; b < B; ++b) {
        losses[static_cast<size_t>(b)] =
            ctc::loss_node(g, lat[static_cast<size_t>(b)],
                           items[static_cast<size_t>(pick[static_cast<size_t>(b)])].label);
      }
      NodeId loss = g.mean(g.concat_rows(losses));
      loss_sum += g.backward(loss);
      nn::adam_update(opt, model.store, g, p);
    }
    stats.epoch_loss.push_back(loss_sum / cfg.epoch_steps);

    double epoch_cer = std::numeric_limits<double>::quiet_NaN();
    if (!val_items.empty()) {
      std::vector<std::pair<std::string, std::string>> pairs;
      for (const Item& it : val_items) {
        const Tensor lat = rec_forward(model, it.feats);
        pairs.emplace_back(it.text, ctc::greedy_decode(lat, alpha));
      }
      epoch_cer = metrics::cer(pairs);
      if (epoch_cer < best_cer) {
        best_cer = epoch_cer;
        best_epoch = epoch;
        best = model.store.to_checkpoint();
      }
    }
    stats.epoch_val_cer.push_back(epoch_cer);
  }

  if (val_items.empty()) {
    best = model.store.to_checkpoint();
    best_epoch = cfg.epochs - 1;
    best_cer = std::numeric_limits<double>::quiet_NaN();
  }
  model.store.load(best);
  stats.best_epoch = best_epoch;
  stats.best_val_cer = best_cer;
  return {std::move(model), std::move(stats)};
}

EvalResult evaluate_with(const std::vector<ink::StrokeSample>& samples,
                         const std::function<std::string(const ink::StrokeSample&)>& predict) {
  EvalResult res;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const ink::StrokeSample& s : samples) {
    Prediction p;
    p.id = s.id;
    p.ref = s.text;
    p.hyp = predict(s);
    pairs.emplace_back(p.ref, p.hyp);
    res.predictions.push_back(std::move(p));
  }
  res.cer = pairs.empty() ? 0.0 : metrics::cer(pairs);
  return res;
}

EvalResult evaluate(const RecModel& model, const std::vector<ink::StrokeSample>& samples,
                    const DecodeSpec& decode) {
  const ink::Alphabet alpha(model.alphabet);
  return evaluate_with(samples, [&](const ink::StrokeSample& s) {
    const Tensor lat = rec_forward(model, ink::extract_features(ink::normalize(s)));
    return decode.beam_width > 0 ? ctc::beam_decode(lat, alpha, decode.beam_width)
                                 : ctc::greedy_decode(lat, alpha);
  });
}

std::string predictions_jsonl(const std::vector<Prediction>& preds) {
  std::string out;
  for (const Prediction& p : preds) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["ref"] = p.ref;
    j["hyp"] = p.hyp;
    out += j.dump();
    out += "\n";
  }
  return out;
}

}  // namespace recognizer
