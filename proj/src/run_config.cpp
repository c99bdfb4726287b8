#include "stochpool/run_config.hpp"

#include "stochpool/tensor.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace stochpool {

namespace {

struct KeySpec {
  const char* name;
  const char* fallback;
  enum Kind { Text, Int, Real, Bool, IntList, Choice } kind;
  const char* choices = "";
};

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> s{
      {"preset", "tiny", KeySpec::Choice, "tiny small B L"},
      {"seed", "0", KeySpec::Int},
      {"mode", "stochastic", KeySpec::Choice, "stochastic deterministic"},
      {"config", "1-1-1", KeySpec::Text},
      {"squeeze_set", "1,2", KeySpec::IntList},
      {"kv_set", "1,2", KeySpec::IntList},
      {"q_set", "1,2", KeySpec::IntList},
      {"steps", "200", KeySpec::Int},
      {"batch", "8", KeySpec::Int},
      {"lr", "0.001", KeySpec::Real},
      {"warmup", "0.1", KeySpec::Real},
      {"max_grad_norm", "0", KeySpec::Real},
      {"freeze_feature_extractor", "false", KeySpec::Bool},
      {"random_validation", "false", KeySpec::Bool},
      {"validation_config", "", KeySpec::Text},
      {"dataset", "synthetic", KeySpec::Text},
      {"validation_dataset", "", KeySpec::Text},
      {"train_utterances", "200", KeySpec::Int},
      {"validation_utterances", "40", KeySpec::Int},
      {"vocab", "4", KeySpec::Int},
      {"checkpoint", "", KeySpec::Text},
      {"resume", "", KeySpec::Text},
      {"output_dir", "out", KeySpec::Text},
      {"frames", "1000", KeySpec::Int},
      {"repeats", "5", KeySpec::Int},
      {"configs", "", KeySpec::Text},
  };
  return s;
}

const KeySpec& lookup(const std::string& key) {
  for (const auto& k : schema()) {
    if (key == k.name) return k;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : schema()) values_[k.name] = k.fallback;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const auto& spec = lookup(key);
  const std::string value = trim(raw);
  const auto bad = [&](const std::string& why) {
    return ConfigError("config key '" + key + "': " + why + ", got '" + value + "'");
  };
  switch (spec.kind) {
    case KeySpec::Int: {
      std::int64_t v;
      if (!parse_number(value, v)) throw bad("expected an integer");
      break;
    }
    case KeySpec::Real: {
      double v;
      if (!parse_number(value, v)) throw bad("expected a number");
      break;
    }
    case KeySpec::Bool:
      if (value != "true" && value != "false") throw bad("expected true or false");
      break;
    case KeySpec::IntList: {
      std::stringstream ss(value);
      std::string item;
      int n = 0;
      while (std::getline(ss, item, ',')) {
        int v;
        if (!parse_number(trim(item), v) || v < 1) throw bad("expected comma-separated integers >= 1");
        ++n;
      }
      if (n == 0) throw bad("expected a non-empty list");
      break;
    }
    case KeySpec::Choice: {
      std::istringstream ss(spec.choices);
      std::string c;
      bool ok = false;
      while (ss >> c) ok = ok || c == value;
      if (!ok) throw bad(std::string("expected one of: ") + spec.choices);
      break;
    }
    case KeySpec::Text:
      break;
  }
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  lookup(key);
  return values_.at(key);
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  std::int64_t v = 0;
  parse_number(get(key), v);
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0.0;
  parse_number(get(key), v);
  return v;
}

bool RunConfig::get_bool(const std::string& key) const { return get(key) == "true"; }

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    int v = 0;
    parse_number(trim(item), v);
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> RunConfig::get_words(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream ss(get(key));
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& k : schema()) out += std::string(k.name) + " = " + values_.at(k.name) + "\n";
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& k : schema()) v.emplace_back(k.name);
    return v;
  }();
  return names;
}

}  // namespace stochpool
