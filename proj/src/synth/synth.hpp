#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "common/rng.hpp"
#include "ink/ink.hpp"
#include "nn/nn.hpp"
#include "numerics/checkpoint.hpp"
#include "numerics/graph.hpp"
#include "numerics/tensor.hpp"

namespace synth {

struct SynthConfig {
  int d_c = 24;             // content embedding width
  int d_h = 48;             // decoder LSTM hidden per layer
  int d_z = 8;              // latent style width
  int d_e = 32;             // posterior encoder hidden per direction
  int components = 20;      // bivariate Gaussians in the output mixture
  int att_components = 3;   // attention window mixture size
  double kappa_rate = 0.05; // window advance per unit of exp(kappa_hat)
  double eps_z = 0.1;       // per-step noise std around a reference style
  int epochs = 20;
  int epoch_steps = 25;
  int batch_size = 16;
  double lr = 1e-3;
  double clip_norm = 5.0;
  double beta_warmup_frac = 0.2; // share of steps ramping the KL weight 0 -> 1
  std::vector<std::string> langs; // train on these languages; empty = all
  uint64_t seed = 1;
};

struct SynthModel {
  SynthConfig cfg;
  std::string alphabet; // content classes = alphabet.size() + 1 (separator)
  nn::ParamStore store;
};

SynthModel init_synth(const SynthConfig& cfg, const std::string& alphabet);

numerics::Checkpoint to_checkpoint(const SynthModel& model);
SynthModel synth_from_checkpoint(const numerics::Checkpoint& ckpt);

/// Content token ids for a text; the separator class is alphabet.size().
std::vector<int> encode_content(const std::string& text, const std::string& alphabet);

// --- decoder step, graph form (training) ---

struct GraphDecoderState {
  nn::StepState s1;
  nn::StepState s2;
  numerics::NodeId kappa; // [B, att_components]
  numerics::NodeId w;     // [B, d_c]
};

GraphDecoderState decoder_graph_init(numerics::Graph& g, const SynthConfig& cfg, int B);

/// First half of a decoder step: LSTM1 over [x_in, w_prev] and the window
/// update. x_in [B,3]; content_rows [B*M,d_c] are per-sample embedding rows
/// (padded rows zero), content_mask [B,M] marks real positions, step_mask
/// [B,1] freezes finished samples (pass -1 for none).
void decoder_graph_advance(numerics::Graph& g, const nn::BoundParams& p, const SynthConfig& cfg,
                           GraphDecoderState& st, numerics::NodeId x_in,
                           numerics::NodeId content_rows, numerics::NodeId content_mask, int M,
                           numerics::NodeId step_mask);

/// Latent prior from the advanced state: [B, 2*d_z] as [mu | log sigma].
numerics::NodeId prior_graph(numerics::Graph& g, const nn::BoundParams& p, const SynthConfig& cfg,
                             const GraphDecoderState& st);

/// Second half: LSTM2 over [x_in, h1, w, z] and the output head.
/// Returns the raw mixture row [B, 6J+1].
numerics::NodeId decoder_graph_output(numerics::Graph& g, const nn::BoundParams& p,
                                      const SynthConfig& cfg, GraphDecoderState& st,
                                      numerics::NodeId x_in, numerics::NodeId z,
                                      numerics::NodeId step_mask);

// --- training graph ---

struct SynthBatch {
  // Teacher-forced inputs/targets on the t-major layout: row t*B + b holds
  // step t of sample b. x has T+1 step rows (step 0 is the zero start token).
  numerics::Tensor x;     // [(T+1)*B, 3]
  std::vector<int> lens;  // predicted steps per sample, 1..T
  std::vector<std::vector<int>> content;
  numerics::Tensor noise; // [T*B, d_z] reparameterization draws
};

/// Packs normalized samples into a batch; draws the latent noise from rng.
SynthBatch make_batch(const std::vector<const ink::StrokeSample*>& samples,
                      const std::string& alphabet, int d_z, common::Rng& rng);

struct SynthGraphOut {
  numerics::NodeId recon; // [1,1] mean over batch of per-sample summed NLL
  numerics::NodeId kl;    // [1,1] mean over batch of per-sample summed KL
  numerics::NodeId total; // recon + beta * kl
  std::vector<numerics::NodeId> kappa; // per-step [B,att_components]
};

SynthGraphOut synth_graph(numerics::Graph& g, const nn::BoundParams& p, const SynthConfig& cfg,
                          const SynthBatch& batch, double beta);

struct LossParts {
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

/// Single-sample ELBO parts; normalizes the sample, then runs the training
/// graph without touching parameters. rng supplies the posterior noise.
LossParts training_loss(const SynthModel& model, const ink::StrokeSample& sample, double beta,
                        common::Rng& rng);

// --- style handling ---

struct PriorSample {};
struct Reference {
  std::vector<double> style; // d_z
};
using StyleSource = std::variant<PriorSample, Reference>;

/// Mean posterior mean over the reference's steps. Deterministic.
std::vector<double> encode_style(const SynthModel& model, const ink::StrokeSample& reference);

// --- generation (plain math, no graph) ---

struct DecoderState {
  std::vector<double> h1, c1;
  std::vector<double> h2, c2;
  std::vector<double> kappa; // att_components
  std::vector<double> w;     // d_c
};

DecoderState decoder_init(const SynthModel& model);

/// Plain-math twins of the graph step halves.
void decoder_advance(const SynthModel& model, DecoderState& st, const double* x_prev,
                     const std::vector<int>& content);
std::vector<double> prior_raw(const SynthModel& model, const DecoderState& st);
std::vector<double> decoder_output(const SynthModel& model, DecoderState& st, const double* x_prev,
                                   const std::vector<double>& z);

/// Default step budget for a content of M characters.
int default_t_max(int content_len);

/// Autoregressive sampling with sampling bias b. Stops when the mean window
/// position passes the last character (kappa > M + 0.5) or at t_max.
/// Offsets are in the normalized coordinate scale of the training data.
ink::StrokeSample generate(const SynthModel& model, const std::string& text,
                           const StyleSource& style, double bias, common::Rng& rng,
                           int t_max = -1);

// --- training ---

struct SynthTrainStats {
  std::vector<double> epoch_recon;
  std::vector<double> epoch_kl;
  std::vector<double> epoch_val_recon; // NaN without a validation set
  std::vector<std::string> warnings;
  int best_epoch = -1;
  double best_val_recon = 0.0;
};

struct TrainSynthResult {
  SynthModel model;
  SynthTrainStats stats;
};

TrainSynthResult train_synth(const std::vector<ink::StrokeSample>& train,
                             const std::vector<ink::StrokeSample>& val,
                             const std::string& alphabet, const SynthConfig& cfg);

}  // namespace synth
