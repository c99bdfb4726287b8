#include "stochpool/encoder_config.hpp"

#include "stochpool/tensor.hpp"

#include <map>
#include <sstream>

namespace stochpool {

int FeatureExtractorConfig::total_stride() const {
  int s = 1;
  for (const auto& l : layers) s *= l.stride;
  return s;
}

int FeatureExtractorConfig::channels(std::size_t layer) const {
  // Cumulative downsample relative to the first layer; one doubling per 4x.
  long ratio = 1;
  for (std::size_t i = 1; i <= layer && i < layers.size(); ++i) ratio *= layers[i].stride;
  int c = base_channels;
  while (ratio >= 4) {
    ratio /= 4;
    c *= 2;
  }
  return c;
}

std::int64_t FeatureExtractorConfig::frames_for_samples(std::int64_t samples) const {
  std::int64_t n = samples;
  for (const auto& l : layers) {
    if (n < l.kernel) return 0;
    n = (n - l.kernel) / l.stride + 1;
  }
  return n;
}

std::int64_t FeatureExtractorConfig::samples_for_frames(std::int64_t frames) const {
  std::int64_t n = frames;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) n = (n - 1) * it->stride + it->kernel;
  return n;
}

void FeatureExtractorConfig::validate() const {
  if (layers.empty()) throw ConfigError("feature extractor needs at least one conv layer");
  if (base_channels < 1) throw ConfigError("feature extractor base_channels must be >= 1");
  for (const auto& l : layers) {
    if (l.kernel < 1 || l.stride < 1) throw ConfigError("feature extractor layer has kernel/stride < 1");
  }
}

void EncoderConfig::validate() const {
  if (model_dim < 1 || depth < 1 || heads < 1 || ffn_dim < 1) {
    throw ConfigError("encoder config: model_dim, depth, heads and ffn_dim must be >= 1");
  }
  if (model_dim % heads != 0) {
    throw ConfigError("encoder config: model_dim " + std::to_string(model_dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (pos_conv_kernel < 1 || pos_conv_kernel % 2 == 0) throw ConfigError("pos_conv_kernel must be odd and >= 1");
  if (pos_conv_groups < 1 || model_dim % pos_conv_groups != 0) {
    throw ConfigError("pos_conv_groups must divide model_dim");
  }
  if (max_squeeze < 1 || max_kv < 1 || max_q < 1) throw ConfigError("factor ceilings must be >= 1");
  if (vocab_size < 0) throw ConfigError("vocab_size must be >= 0");
  feature_extractor.validate();
}

std::string EncoderConfig::serialize() const {
  std::ostringstream out;
  out << "name=" << name << '\n'
      << "model_dim=" << model_dim << '\n'
      << "depth=" << depth << '\n'
      << "heads=" << heads << '\n'
      << "ffn_dim=" << ffn_dim << '\n'
      << "pos_conv_kernel=" << pos_conv_kernel << '\n'
      << "pos_conv_groups=" << pos_conv_groups << '\n'
      << "max_squeeze=" << max_squeeze << '\n'
      << "max_kv=" << max_kv << '\n'
      << "max_q=" << max_q << '\n'
      << "vocab_size=" << vocab_size << '\n'
      << "blank_id=0\n"
      << "fe_base_channels=" << feature_extractor.base_channels << '\n'
      << "fe_layers=";
  for (std::size_t i = 0; i < feature_extractor.layers.size(); ++i) {
    if (i > 0) out << ',';
    out << feature_extractor.layers[i].kernel << ':' << feature_extractor.layers[i].stride;
  }
  out << '\n';
  return out.str();
}

EncoderConfig EncoderConfig::deserialize(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("encoder config: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&kv](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("encoder config: missing key '" + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_int = [&](const std::string& key) {
    const auto v = take(key);
    try {
      return std::stoi(v);
    } catch (const std::exception&) {
      throw ConfigError("encoder config: key '" + key + "' is not an integer: '" + v + "'");
    }
  };
  EncoderConfig c;
  c.name = take("name");
  c.model_dim = take_int("model_dim");
  c.depth = take_int("depth");
  c.heads = take_int("heads");
  c.ffn_dim = take_int("ffn_dim");
  c.pos_conv_kernel = take_int("pos_conv_kernel");
  c.pos_conv_groups = take_int("pos_conv_groups");
  c.max_squeeze = take_int("max_squeeze");
  c.max_kv = take_int("max_kv");
  c.max_q = take_int("max_q");
  c.vocab_size = take_int("vocab_size");
  if (take_int("blank_id") != 0) throw ConfigError("encoder config: blank_id must be 0");
  c.feature_extractor.base_channels = take_int("fe_base_channels");
  c.feature_extractor.layers.clear();
  std::istringstream layers(take("fe_layers"));
  std::string item;
  while (std::getline(layers, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("encoder config: bad fe layer '" + item + "'");
    c.feature_extractor.layers.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
  }
  if (!kv.empty()) throw ConfigError("encoder config: unknown key '" + kv.begin()->first + "'");
  c.validate();
  return c;
}

EncoderConfig preset(const std::string& name) {
  EncoderConfig c;
  c.name = name;
  if (name == "tiny") {
    c.model_dim = 64;
    c.depth = 2;
    c.heads = 4;
    c.feature_extractor.base_channels = 16;
  } else if (name == "small") {
    c.model_dim = 128;
    c.depth = 4;
    c.heads = 4;
    c.feature_extractor.base_channels = 32;
  } else if (name == "B") {
    c.model_dim = 768;
    c.depth = 12;
    c.heads = 12;
    c.pos_conv_kernel = 127;
    c.pos_conv_groups = 16;
    c.max_squeeze = c.max_kv = c.max_q = 2;
    c.feature_extractor.base_channels = 64;
  } else if (name == "L") {
    c.model_dim = 1024;
    c.depth = 24;
    c.heads = 16;
    c.pos_conv_kernel = 127;
    c.pos_conv_groups = 16;
    c.max_squeeze = c.max_kv = c.max_q = 2;
    c.feature_extractor.base_channels = 64;
  } else {
    throw ConfigError("unknown preset '" + name + "' (known: tiny, small, B, L)");
  }
  c.ffn_dim = 4 * c.model_dim;
  c.validate();
  return c;
}

std::vector<std::string> preset_names() { return {"tiny", "small", "B", "L"}; }

}  // namespace stochpool
