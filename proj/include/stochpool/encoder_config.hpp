// Topology of the compact feature extractor and the transformer encoder.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stochpool {

struct ConvLayerSpec {
  int kernel = 1;
  int stride = 1;
  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

/// Compact wave feature extractor: a strided conv stack whose channel width
/// starts at base_channels and doubles every time the cumulative downsample
/// (relative to the first layer) grows by another factor of 4.
///
/// Default table (kernel, stride): (10,5) (3,2) (3,2) (3,2) (3,2) (2,2) (2,2),
/// total stride 320, i.e. 50 Hz frames from 16 kHz audio. With c = 64 the
/// widths are 64 64 128 128 256 256 512.
struct FeatureExtractorConfig {
  static constexpr int kSampleRate = 16000;

  int base_channels = 64;
  std::vector<ConvLayerSpec> layers{{10, 5}, {3, 2}, {3, 2}, {3, 2}, {3, 2}, {2, 2}, {2, 2}};

  int total_stride() const;
  int channels(std::size_t layer) const;
  int output_channels() const { return channels(layers.size() - 1); }
  /// Frames produced from `samples` audio samples (valid convolutions); 0 if too short.
  std::int64_t frames_for_samples(std::int64_t samples) const;
  /// Smallest audio length producing exactly `frames` frames.
  std::int64_t samples_for_frames(std::int64_t frames) const;
  std::int64_t receptive_field() const { return samples_for_frames(1); }
  void validate() const;

  friend bool operator==(const FeatureExtractorConfig&, const FeatureExtractorConfig&) = default;
};

struct EncoderConfig {
  std::string name = "custom";
  int model_dim = 64;
  int depth = 2;
  int heads = 4;
  int ffn_dim = 256;
  int pos_conv_kernel = 15;
  int pos_conv_groups = 4;
  // Largest factors this instance accepts.
  int max_squeeze = 4;
  int max_kv = 4;
  int max_q = 4;
  /// Number of output labels for the CTC head (blank excluded); 0 = no head.
  int vocab_size = 0;
  FeatureExtractorConfig feature_extractor;

  /// The squeeze upsampling projection exists only when squeezing is possible.
  bool has_squeeze() const { return max_squeeze > 1; }
  bool has_head() const { return vocab_size > 0; }
  void validate() const;

  /// Deterministic "key=value" lines, used by checkpoints and config echoes.
  std::string serialize() const;
  static EncoderConfig deserialize(const std::string& text);

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Named presets: "B" and "L" mirror the base/large model shapes (E=768, D=12;
/// E=1024, D=24) with factor ceilings {1,2}; "tiny" (E=64, D=2, H=4) and
/// "small" (E=128, D=4, H=4) are desk-scale defaults.
EncoderConfig preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace stochpool
