// Utterances, manifests and seeded synthetic corpora.
#pragma once

#include "stochpool/ctc.hpp"
#include "stochpool/rng.hpp"
#include "stochpool/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace stochpool {

/// One example: either raw 16 kHz audio or precomputed [T×E] features,
/// plus an optional label sequence.
struct Utterance {
  std::string id;
  std::vector<double> audio;
  Matrix<double> features;
  LabelSeq labels;

  bool has_audio() const { return !audio.empty(); }
};

/// Transcripts are space-separated single-letter tokens: "a" is label 1, "b" is 2, ...
LabelSeq parse_transcript(const std::string& text, int vocab_size);
std::string format_transcript(const LabelSeq& labels);

/// Reads `path<TAB>transcript` lines; relative paths resolve against the
/// manifest's directory. Blank lines and lines starting with '#' are skipped.
std::vector<Utterance> load_manifest(const std::filesystem::path& manifest, int vocab_size);

/// Multi-sine feature sequences for masked-frame pre-training: every
/// dimension mixes three slow sinusoids shared across the utterance.
std::vector<Utterance> multi_sine_features(std::size_t count, int dim, std::uint64_t seed, int min_frames = 40,
                                           int max_frames = 80);

/// Toy labelled task: each symbol is a segment of 6-10 frames around a fixed
/// random prototype vector, separated by 2-4 frame gaps around a silence
/// prototype. Prototypes depend only on (task_seed, dim, vocab).
struct SymbolTask {
  int vocab = 4;
  int dim = 64;
  std::uint64_t task_seed = 1;
  int min_symbols = 2;
  int max_symbols = 5;
  double noise = 0.5;

  std::vector<Utterance> features(std::size_t count, std::uint64_t seed) const;
  /// The same task rendered as audio: each symbol is a tone, gaps are low noise.
  std::vector<Utterance> audio(std::size_t count, std::uint64_t seed) const;
};

}  // namespace stochpool
