#include "stochpool/data.hpp"

#include "stochpool/audio.hpp"
#include "stochpool/encoder_config.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace stochpool {

LabelSeq parse_transcript(const std::string& text, int vocab_size) {
  LabelSeq out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    if (tok.size() != 1 || tok[0] < 'a' || tok[0] - 'a' >= vocab_size) {
      throw std::invalid_argument("transcript token '" + tok + "' is not one of the " + std::to_string(vocab_size) +
                                  " symbols starting at 'a'");
    }
    out.push_back(tok[0] - 'a' + 1);
  }
  return out;
}

std::string format_transcript(const LabelSeq& labels) {
  std::string out;
  for (int l : labels) {
    if (!out.empty()) out += ' ';
    out += static_cast<char>('a' + l - 1);
  }
  return out;
}

std::vector<Utterance> load_manifest(const std::filesystem::path& manifest, int vocab_size) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest '" + manifest.string() + "'");
  std::vector<Utterance> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(lineno) + ": expected path<TAB>transcript");
    }
    std::filesystem::path p = line.substr(0, tab);
    if (p.is_relative()) p = manifest.parent_path() / p;
    Utterance u;
    u.id = p.filename().string();
    u.audio = read_wav(p);
    try {
      u.labels = parse_transcript(line.substr(tab + 1), vocab_size);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(u));
  }
  return out;
}

std::vector<Utterance> multi_sine_features(std::size_t count, int dim, std::uint64_t seed, int min_frames,
                                           int max_frames) {
  constexpr double kFrameRate = 50.0;
  Rng root = Rng(seed).fork("multi-sine");
  std::vector<Utterance> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    const auto frames = min_frames + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_frames - min_frames + 1)));
    double freq[3], amp[3];
    for (int j = 0; j < 3; ++j) {
      freq[j] = rng.uniform(0.5, 4.0);
      amp[j] = rng.uniform(0.5, 1.0);
    }
    Matrix<double> phase(3, dim);
    for (Eigen::Index k = 0; k < phase.size(); ++k) phase.data()[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Utterance u;
    u.id = "sine-" + std::to_string(i);
    u.features.resize(frames, dim);
    for (int t = 0; t < frames; ++t) {
      for (int d = 0; d < dim; ++d) {
        double v = 0.0;
        for (int j = 0; j < 3; ++j) v += amp[j] * std::sin(2.0 * std::numbers::pi * freq[j] * t / kFrameRate + phase(j, d));
        u.features(t, d) = v + 0.05 * rng.normal();
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

namespace {

struct Segment {
  int label;  // 0 = gap
  int frames;
};

std::vector<Segment> draw_layout(const SymbolTask& task, Rng& rng, LabelSeq& labels) {
  const int n = task.min_symbols +
                static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(task.max_symbols - task.min_symbols + 1)));
  std::vector<Segment> segs;
  segs.push_back({0, 2 + static_cast<int>(rng.uniform_index(3))});
  for (int i = 0; i < n; ++i) {
    const int label = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(task.vocab)));
    labels.push_back(label);
    segs.push_back({label, 6 + static_cast<int>(rng.uniform_index(5))});
    segs.push_back({0, 2 + static_cast<int>(rng.uniform_index(3))});
  }
  return segs;
}

}  // namespace

std::vector<Utterance> SymbolTask::features(std::size_t count, std::uint64_t seed) const {
  if (vocab < 1 || vocab > 26) throw std::invalid_argument("symbol task vocab must be in 1..26");
  Rng proto_rng = Rng(task_seed).fork("prototypes");
  Matrix<double> proto(vocab + 1, dim);
  for (Eigen::Index k = 0; k < proto.size(); ++k) proto.data()[k] = proto_rng.normal();
  proto.row(0) *= 0.2;
  Rng root = Rng(seed).fork("symbol-features");
  std::vector<Utterance> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    Utterance u;
    u.id = "sym-" + std::to_string(i);
    const auto segs = draw_layout(*this, rng, u.labels);
    int total = 0;
    for (const auto& s : segs) total += s.frames;
    u.features.resize(total, dim);
    int t = 0;
    for (const auto& s : segs) {
      for (int f = 0; f < s.frames; ++f, ++t) {
        for (int d = 0; d < dim; ++d) u.features(t, d) = proto(s.label, d) + noise * rng.normal();
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

std::vector<Utterance> SymbolTask::audio(std::size_t count, std::uint64_t seed) const {
  if (vocab < 1 || vocab > 26) throw std::invalid_argument("symbol task vocab must be in 1..26");
  const FeatureExtractorConfig fe;
  const int hop = fe.total_stride();
  Rng root = Rng(seed).fork("symbol-audio");
  std::vector<Utterance> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    Utterance u;
    u.id = "sym-audio-" + std::to_string(i);
    const auto segs = draw_layout(*this, rng, u.labels);
    for (const auto& s : segs) {
      const double hz = 250.0 * (s.label + 1);
      for (int n = 0; n < s.frames * hop; ++n) {
        const double tone = s.label == 0 ? 0.0 : 0.5 * std::sin(2.0 * std::numbers::pi * hz * n / kAudioSampleRate);
        u.audio.push_back(tone + 0.01 * noise * rng.normal());
      }
    }
    const auto pad = static_cast<std::size_t>(fe.receptive_field() - hop);
    u.audio.insert(u.audio.end(), pad, 0.0);
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace stochpool
