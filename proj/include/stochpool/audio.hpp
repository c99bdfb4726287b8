// RIFF/WAVE ingestion: PCM 16-bit, mono, 16 kHz only. No resampling.
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace stochpool {

class AudioFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kAudioSampleRate = 16000;

/// Samples scaled to [-1, 1).
std::vector<double> decode_wav(const std::string& bytes);
std::vector<double> read_wav(const std::filesystem::path& path);

/// Encodes with the given format; only used to build fixtures and synthetic corpora.
std::string encode_wav(const std::vector<double>& samples, int sample_rate = kAudioSampleRate, int channels = 1);
void write_wav(const std::filesystem::path& path, const std::vector<double>& samples);

}  // namespace stochpool
