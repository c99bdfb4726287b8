// Binary model checkpoints and the float64 training-state sidecar.
//
// Checkpoint layout (all integers little-endian u32):
//   "STPL" | version | len + config text | tensor count |
//   per tensor: len + name | ndim | dims... | float32 data (row-major)
#pragma once

#include "stochpool/encoder.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace stochpool {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string encode_checkpoint(const EncoderModel<double>& model);
EncoderModel<double> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const EncoderModel<double>& model, const std::filesystem::path& path);
EncoderModel<double> load_checkpoint(const std::filesystem::path& path);

/// Everything needed to continue an optimisation run bit-identically:
/// float64 parameters, Adam moments and the step counter. Data order and
/// sampling are keyed on (seed, step), so no generator state is stored.
struct TrainState {
  EncoderConfig config;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  double initial_loss = 0.0;
  std::vector<std::pair<std::string, Matrix<double>>> params;
  std::vector<Matrix<double>> adam_m, adam_v;
  /// Model selection so far (fine-tuning); empty best_params means none yet.
  double best_loss = 0.0;
  std::uint64_t best_step = 0;
  std::vector<Matrix<double>> best_params;
};

void save_train_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace stochpool
