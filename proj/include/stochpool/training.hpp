// Desk-scale training: masked-frame regression pre-training and CTC
// fine-tuning, each in stochastic (sampled config per batch) or
// deterministic (one fixed config) mode. Runs at float64.
#pragma once

#include "stochpool/checkpoint.hpp"
#include "stochpool/data.hpp"
#include "stochpool/encoder.hpp"
#include "stochpool/stochastic.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace stochpool {

enum class TrainMode { Stochastic, Deterministic };

struct TrainPlan {
  TrainMode mode = TrainMode::Stochastic;
  FactorSets sets;                           // stochastic mode
  std::optional<CompressionConfig> fixed;    // deterministic mode
  int steps = 200;
  int batch = 8;
  double lr = 1e-3;
  double warmup_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double max_grad_norm = 0.0;
  std::uint64_t seed = 0;
  bool freeze_feature_extractor = false;
  // Pre-training masking.
  double mask_fraction = 0.3;
  int mask_span = 3;
  // Fine-tuning model selection.
  int eval_every = 0;                        // 0: every steps/10 (at least 1)
  std::optional<CompressionConfig> validation_config;
  bool random_validation = false;
  /// Stop early after this many completed steps (0 = run to `steps`); the
  /// result then carries a resumable state.
  int stop_after = 0;

  void validate(int depth) const;
  /// Learning rate for 1-based step t: linear warmup over the first
  /// warmup_fraction of steps, then constant.
  double learning_rate(int step) const;
  /// Config used at 0-based step `step`.
  CompressionConfig config_for_step(int step, int depth) const;
};

struct TrainLogRecord {
  int step = 0;
  std::string config;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;

  std::string to_json() const;
};

using LogSink = std::function<void(const TrainLogRecord&)>;

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  EncoderModel<double> model;
  std::vector<TrainLogRecord> log;
  /// Mean loss over the first / last min(10, steps) logged steps.
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t skipped_infeasible = 0;
  std::optional<int> best_step;
  double best_validation_loss = 0.0;
  TrainState state;
};

TrainResult pretrain_toy(EncoderModel<double> model, const TrainPlan& plan, const std::vector<Utterance>& data,
                         const LogSink& sink = {}, const TrainState* resume = nullptr);

/// Adds a fresh `vocab`-label CTC head (unless resuming) and fine-tunes.
/// With a non-empty validation set the returned model is the one with the
/// lowest validation loss.
TrainResult finetune(EncoderModel<double> model, const TrainPlan& plan, int vocab, const std::vector<Utterance>& train,
                     const std::vector<Utterance>& validation, const LogSink& sink = {},
                     const TrainState* resume = nullptr);

struct EvalResult {
  double loss = 0.0;          // mean CTC loss over feasible utterances
  double symbol_error = 0.0;  // total edit distance / total reference length
  double wall_ms = 0.0;
  std::size_t utterances = 0;
  std::size_t skipped_infeasible = 0;
};

/// Fixed-config inference with greedy decoding; `threads` workers split the
/// utterances (results are independent of the worker count).
EvalResult evaluate(const EncoderModel<double>& model, const CompressionConfig& config,
                    const std::vector<Utterance>& data, int threads = 1);

/// Input features of one utterance (runs the feature extractor on audio).
Tensor<double> utterance_features(const EncoderModel<double>& model, const ParamSet<double>& p, const Utterance& u);

Eigen::Index utterance_frames(const EncoderModel<double>& model, const Utterance& u);

/// Contiguous spans of `span` frames until at least `fraction` of the frames are masked.
std::vector<bool> draw_frame_mask(Eigen::Index frames, double fraction, int span, Rng& rng);

/// Worker cap from STOCHPOOL_THREADS (defaults to hardware concurrency, at least 1).
int worker_threads();

}  // namespace stochpool
