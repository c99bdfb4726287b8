// Analytic multiply-accumulate model and a serial wall-time harness.
//
// Per transformer layer with T' = ceil(T / S_f):
//   projections      4·T'·E²
//   scores + values  2·ceil(T'/s_q)·ceil(T'/s_k)·E
//   FFN              2·T'·E·ffn
// plus T·E² for the upsample projection when S_f > 1. The feature extractor
// bucket holds the conv stack, its output projection and the positional conv.
// Softmax, normalisation, activations and biases are not counted.
#pragma once

#include "stochpool/data.hpp"
#include "stochpool/encoder.hpp"
#include "stochpool/mac_counter.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace stochpool {

struct MacBreakdown {
  std::uint64_t feature_extractor = 0;
  std::uint64_t attn_projection = 0;
  std::uint64_t attn_scores = 0;
  std::uint64_t ffn = 0;
  std::uint64_t upsample = 0;

  std::uint64_t total() const { return feature_extractor + attn_projection + attn_scores + ffn + upsample; }
  MacBreakdown& operator+=(const MacBreakdown& o);
  friend bool operator==(const MacBreakdown&, const MacBreakdown&) = default;
};

/// Buckets of an instrumented run (the Other category is not part of the model).
MacBreakdown from_counter(const MacCounter& counter);

struct Timing {
  double median_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  int repeats = 0;
  /// Items whose median lasted fewer than 100 timer ticks.
  std::size_t low_resolution_items = 0;
};

struct CostReport {
  std::string config;
  std::string preset;
  std::int64_t frames = 0;
  MacBreakdown macs;
  std::optional<Timing> encoder;  // absent when not measured
  std::optional<Timing> decode;
  std::optional<double> symbol_error;
};

/// Analytic MACs for `frames` feature frames. The conv stack is charged for
/// `samples` audio samples, by default the shortest audio yielding `frames`.
CostReport analytic_cost(const CompressionConfig& config, const EncoderConfig& encoder, std::int64_t frames,
                         std::optional<std::int64_t> samples = std::nullopt);

/// Counts every MAC of a real forward pass from audio through the encoder.
MacBreakdown instrumented_cost(const EncoderModel<double>& model, const CompressionConfig& config, std::int64_t frames);

struct MeasureOptions {
  int repeats = 5;
  bool include_feature_extractor = true;  // for audio utterances
};

/// Serial timing of the float32 model: one warm-up pass per utterance, then
/// the median of `repeats` passes, summed over the dataset (min / max are
/// summed the same way). Decoding (head + greedy) is timed separately when
/// the model has a head.
CostReport measure(const EncoderModel<float>& model, const CompressionConfig& config, const std::vector<Utterance>& data,
                   const MeasureOptions& options = {});
/// Several configs timed together: per utterance, repeat r of every config
/// runs before repeat r+1 of any, so slow drifts in machine speed hit all
/// configs alike.
std::vector<CostReport> measure(const EncoderModel<float>& model, const std::vector<CompressionConfig>& configs,
                                const std::vector<Utterance>& data, const MeasureOptions& options = {});

struct SweepOptions {
  bool measure = true;
  MeasureOptions timing;
  /// Timing inputs when `data` is empty: one random utterance of this length.
  std::int64_t frames = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// One row per config. Analytic MACs are summed over the utterances;
/// symbol error is filled when every utterance carries labels and the model has a head.
std::vector<CostReport> sweep(const EncoderModel<double>& model, const std::vector<CompressionConfig>& configs,
                              const std::vector<Utterance>& data, const SweepOptions& options = {});

extern const char* const kCsvHeader;
void write_csv(std::ostream& out, const std::vector<CostReport>& rows);
/// Rows with exactly the CSV field names; unmeasured fields are null.
std::string to_json(const std::vector<CostReport>& rows);
/// Encoder and decode timings per row, including low-resolution flags.
std::string timing_json(const std::vector<CostReport>& rows);

/// The four standard operating points for a model of `depth` layers.
std::vector<CompressionConfig> standard_configs(int depth);

}  // namespace stochpool
