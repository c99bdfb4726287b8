// Plain-text run configuration: "key = value" lines, '#' comments.
//
// Keys (defaults in brackets):
//   preset [tiny]            tiny | small | B | L
//   seed [0]
//   mode [stochastic]        stochastic | deterministic
//   config [1-1-1]           S_f-S_k-S_q for deterministic mode and decode
//   squeeze_set [1,2]        factor sets sampled in stochastic mode
//   kv_set [1,2]
//   q_set [1,2]
//   steps [200]
//   batch [8]
//   lr [0.001]
//   warmup [0.1]             fraction of steps with linear warmup
//   max_grad_norm [0]        0 disables clipping
//   freeze_feature_extractor [false]
//   random_validation [false]
//   validation_config []     overrides the validation config when set
//   dataset [synthetic]      synthetic | synthetic-audio | path to a manifest
//   validation_dataset []    manifest path; synthetic sets draw their own
//   train_utterances [200]   synthetic corpus sizes
//   validation_utterances [40]
//   vocab [4]
//   checkpoint []            input model
//   resume []                training-state file to continue from
//   output_dir [out]
//   frames [1000]            sweep / cost input length
//   repeats [5]
//   configs []               extra sweep triplets, whitespace separated
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace stochpool {

class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(const std::string& text, const std::string& source = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  /// Sets a known key; unknown keys and malformed values throw ConfigError.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_set(const std::string& key) const { return !get(key).empty(); }

  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<std::string> get_words(const std::string& key) const;

  /// Every key in schema order; parse(serialize()) reproduces the config.
  std::string serialize() const;

  static const std::vector<std::string>& keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace stochpool
