// Compression configurations and their uniform sampling during training.
#pragma once

#include "stochpool/attention.hpp"
#include "stochpool/rng.hpp"

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stochpool {

class ParseError : public std::invalid_argument {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::invalid_argument(what + " (at position " + std::to_string(position) + ")"), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Candidate factors drawn from during stochastic training.
struct FactorSets {
  std::vector<int> squeeze{1};
  std::vector<int> kv{1};
  std::vector<int> q{1};

  /// {1..max_sf}, {1..max_sk}, {1..max_sq}.
  static FactorSets up_to(int max_sf, int max_sk, int max_sq);
  void validate() const;
};

/// One squeeze factor plus an (s_k, s_q) pair per transformer layer.
struct CompressionConfig {
  int s_f = 1;
  std::vector<PoolFactors> per_layer;

  int depth() const { return static_cast<int>(per_layer.size()); }
  bool uniform() const;
  int max_kv() const;
  int max_q() const;

  /// "S_f-S_k-S_q" when all layers agree (e.g. "2-2-1"); otherwise the
  /// per-layer factors are comma-joined, e.g. "2-1,2-2,1".
  std::string to_string() const;
  /// Inverse of to_string(); a scalar k or q field is replicated to `depth` layers.
  static CompressionConfig parse(std::string_view text, int depth);

  friend bool operator==(const CompressionConfig&, const CompressionConfig&) = default;
};

CompressionConfig fixed_config(int s_f, int s_k, int s_q, int depth);

/// s_f uniform over sets.squeeze; each layer's (s_k, s_q) independently
/// uniform over kv × q.
CompressionConfig sample_config(const FactorSets& sets, int depth, Rng& rng);

/// The four operating points evaluated throughout: 1-1-1, 2-1-1, 2-2-1, 2-2-2,
/// as (s_f, s_k, s_q).
std::vector<std::array<int, 3>> standard_triplets();

}  // namespace stochpool
