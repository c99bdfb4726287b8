#include "stochpool/audio.hpp"

#include "stochpool/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace stochpool {

namespace {

std::uint32_t le32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

std::uint16_t le16(const std::string& b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    (static_cast<unsigned char>(b[at + 1]) << 8));
}

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace

std::vector<double> decode_wav(const std::string& b) {
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
    throw AudioFormatError("not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::string id = b.substr(pos, 4);
    const std::size_t size = le32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw AudioFormatError("chunk '" + id + "' runs past end of file");
    if (id == "fmt ") {
      if (size < 16) throw AudioFormatError("fmt chunk too short");
      const auto format = le16(b, body);
      const auto channels = le16(b, body + 2);
      const auto rate = le32(b, body + 4);
      const auto bits = le16(b, body + 14);
      if (format != 1) throw AudioFormatError("unsupported WAVE format tag " + std::to_string(format) + " (need PCM)");
      if (channels != 1) throw AudioFormatError("expected mono audio, got " + std::to_string(channels) + " channels");
      if (rate != kAudioSampleRate) {
        throw AudioFormatError("expected 16000 Hz audio, got " + std::to_string(rate) + " Hz (no resampling)");
      }
      if (bits != 16) throw AudioFormatError("expected 16-bit samples, got " + std::to_string(bits));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw AudioFormatError("data chunk before fmt chunk");
      std::vector<double> samples(size / 2);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        samples[i] = static_cast<std::int16_t>(le16(b, body + 2 * i)) / 32768.0;
      }
      return samples;
    }
    pos = body + size + (size & 1);
  }
  throw AudioFormatError(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

std::vector<double> read_wav(const std::filesystem::path& path) {
  try {
    return decode_wav(read_file(path));
  } catch (const AudioFormatError& e) {
    throw AudioFormatError("'" + path.string() + "': " + e.what());
  }
}

std::string encode_wav(const std::vector<double>& samples, int sample_rate, int channels) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out = "RIFF";
  put32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, 1);
  put16(out, static_cast<std::uint16_t>(channels));
  put32(out, static_cast<std::uint32_t>(sample_rate));
  put32(out, static_cast<std::uint32_t>(sample_rate * channels * 2));
  put16(out, static_cast<std::uint16_t>(channels * 2));
  put16(out, 16);
  out += "data";
  put32(out, data_bytes);
  for (double s : samples) {
    const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0))));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const std::vector<double>& samples) {
  write_file(path, encode_wav(samples));
}

}  // namespace stochpool
