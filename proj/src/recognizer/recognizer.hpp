#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ink/ink.hpp"
#include "nn/nn.hpp"
#include "numerics/checkpoint.hpp"
#include "numerics/tensor.hpp"

namespace recognizer {

struct RecConfig {
  int conv1_channels = 32;
  int conv2_channels = 64;
  int kernel = 5;  // odd, same padding
  int hidden = 64; // per direction
  int epochs = 30;
  int epoch_steps = 25;
  int batch_size = 16;
  double lr = 1e-3;
  double clip_norm = 5.0;
  uint64_t seed = 1;
};

/// Parameters plus the static shape information needed to run them.
struct RecModel {
  RecConfig cfg;
  std::string alphabet; // characters; class count is alphabet.size()+1
  nn::ParamStore store;
};

/// Output frames after the two stride-2 convolutions.
int out_len(int T);

RecModel init_rec(const RecConfig& cfg, const std::string& alphabet);

numerics::Checkpoint to_checkpoint(const RecModel& model);
RecModel rec_from_checkpoint(const numerics::Checkpoint& ckpt);

/// Log-probability lattice [out_len(T), Q+1] for one feature sequence [T,4].
/// Rows are log-softmax over the alphabet plus blank (last column).
numerics::Tensor rec_forward(const RecModel& model, const numerics::Tensor& features);

/// Builds the batched training graph. Features of sample b occupy rows
/// t*B + b of the input; shorter samples are zero padded and masked.
/// Returns one lattice node per sample, each [out_len(T_b), Q+1].
std::vector<numerics::NodeId> rec_graph(numerics::Graph& g, const nn::BoundParams& p,
                                        const RecConfig& cfg, int classes,
                                        numerics::NodeId features, const std::vector<int>& lens);

struct TrainStats {
  std::vector<double> epoch_loss;    // mean CTC loss per epoch
  std::vector<double> epoch_val_cer; // NaN entries when no val set given
  std::vector<std::string> warnings; // skipped samples and other notes
  int best_epoch = -1;
  double best_val_cer = 0.0;
};

struct TrainRecResult {
  RecModel model; // best-validation parameters
  TrainStats stats;
};

/// CTC training with Adam. Deterministic for a fixed config (seed included).
/// Samples whose downsampled length cannot carry their label are skipped
/// with a warning; an empty or fully infeasible training set is an error.
TrainRecResult train_rec(const std::vector<ink::StrokeSample>& train,
                         const std::vector<ink::StrokeSample>& val,
                         const std::string& alphabet, const RecConfig& cfg);

struct Prediction {
  std::string id;
  std::string ref;
  std::string hyp;
};

struct EvalResult {
  std::vector<Prediction> predictions;
  double cer = 0.0;
};

/// Decode selection for evaluate: width 0 = greedy, otherwise beam width.
struct DecodeSpec {
  int beam_width = 0;
};

EvalResult evaluate(const RecModel& model, const std::vector<ink::StrokeSample>& samples,
                    const DecodeSpec& decode);

/// Evaluation core shared with tests: any sample -> hypothesis function.
EvalResult evaluate_with(const std::vector<ink::StrokeSample>& samples,
                         const std::function<std::string(const ink::StrokeSample&)>& predict);

/// Serializes predictions as JSONL lines {"id","ref","hyp"}.
std::string predictions_jsonl(const std::vector<Prediction>& preds);

}  // namespace recognizer
