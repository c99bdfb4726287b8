#include "stochpool/stochastic.hpp"

#include <algorithm>
#include <cctype>

namespace stochpool {

namespace {

void check_set(const std::vector<int>& set, const char* name) {
  if (set.empty()) throw ConfigError(std::string("factor set '") + name + "' is empty");
  for (int f : set) {
    if (f < 1) throw ConfigError(std::string("factor set '") + name + "' contains " + std::to_string(f) + " < 1");
  }
}

std::vector<int> one_to(int n) {
  std::vector<int> v;
  for (int i = 1; i <= n; ++i) v.push_back(i);
  return v;
}

// Parses a comma-separated list of positive integers starting at `offset`.
std::vector<int> parse_list(std::string_view field, std::size_t offset) {
  std::vector<int> out;
  std::size_t i = 0;
  while (true) {
    if (i >= field.size() || !std::isdigit(static_cast<unsigned char>(field[i]))) {
      throw ParseError("expected a positive integer factor", offset + i);
    }
    int value = 0;
    while (i < field.size() && std::isdigit(static_cast<unsigned char>(field[i]))) {
      value = value * 10 + (field[i] - '0');
      if (value > 1'000'000) throw ParseError("factor too large", offset + i);
      ++i;
    }
    if (value < 1) throw ParseError("factor must be >= 1", offset + i - 1);
    out.push_back(value);
    if (i == field.size()) break;
    if (field[i] != ',') throw ParseError(std::string("unexpected character '") + field[i] + "'", offset + i);
    ++i;
  }
  return out;
}

}  // namespace

FactorSets FactorSets::up_to(int max_sf, int max_sk, int max_sq) {
  FactorSets s{one_to(max_sf), one_to(max_sk), one_to(max_sq)};
  s.validate();
  return s;
}

void FactorSets::validate() const {
  check_set(squeeze, "squeeze");
  check_set(kv, "kv");
  check_set(q, "q");
}

bool CompressionConfig::uniform() const {
  return std::all_of(per_layer.begin(), per_layer.end(), [&](const PoolFactors& f) { return f == per_layer.front(); });
}

int CompressionConfig::max_kv() const {
  int m = 1;
  for (const auto& f : per_layer) m = std::max(m, f.s_k);
  return m;
}

int CompressionConfig::max_q() const {
  int m = 1;
  for (const auto& f : per_layer) m = std::max(m, f.s_q);
  return m;
}

std::string CompressionConfig::to_string() const {
  std::string out = std::to_string(s_f) + "-";
  if (per_layer.empty()) return out + "1-1";
  if (uniform()) {
    return out + std::to_string(per_layer.front().s_k) + "-" + std::to_string(per_layer.front().s_q);
  }
  std::string k, q;
  for (std::size_t i = 0; i < per_layer.size(); ++i) {
    if (i > 0) {
      k += ',';
      q += ',';
    }
    k += std::to_string(per_layer[i].s_k);
    q += std::to_string(per_layer[i].s_q);
  }
  return out + k + "-" + q;
}

CompressionConfig CompressionConfig::parse(std::string_view text, int depth) {
  if (depth < 1) throw ConfigError("config depth must be >= 1");
  std::vector<std::string_view> fields;
  std::vector<std::size_t> offsets;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == '-') {
      fields.push_back(text.substr(start, i - start));
      offsets.push_back(start);
      start = i + 1;
    }
  }
  if (fields.size() != 3) {
    throw ParseError("expected three '-'-separated fields S_f-S_k-S_q, got " + std::to_string(fields.size()),
                     fields.size() < 3 ? text.size() : offsets[3] - 1);
  }
  const auto sf = parse_list(fields[0], offsets[0]);
  if (sf.size() != 1) throw ParseError("squeeze factor must be a single value", offsets[0]);
  auto k = parse_list(fields[1], offsets[1]);
  auto q = parse_list(fields[2], offsets[2]);
  const auto widen = [depth](std::vector<int>& v, std::size_t offset) {
    if (v.size() == 1) v.assign(static_cast<std::size_t>(depth), v.front());
    if (static_cast<int>(v.size()) != depth) {
      throw ParseError("per-layer list has " + std::to_string(v.size()) + " entries, model depth is " +
                           std::to_string(depth),
                       offset);
    }
  };
  widen(k, offsets[1]);
  widen(q, offsets[2]);
  CompressionConfig c;
  c.s_f = sf.front();
  for (int l = 0; l < depth; ++l) c.per_layer.push_back({q[static_cast<std::size_t>(l)], k[static_cast<std::size_t>(l)]});
  return c;
}

CompressionConfig fixed_config(int s_f, int s_k, int s_q, int depth) {
  if (depth < 1) throw ConfigError("config depth must be >= 1");
  if (s_f < 1) throw ConfigError("squeeze factor must be >= 1");
  PoolFactors f{s_q, s_k};
  f.validate();
  return {s_f, std::vector<PoolFactors>(static_cast<std::size_t>(depth), f)};
}

CompressionConfig sample_config(const FactorSets& sets, int depth, Rng& rng) {
  sets.validate();
  if (depth < 1) throw ConfigError("config depth must be >= 1");
  auto pick = [&rng](const std::vector<int>& set) { return set[rng.uniform_index(set.size())]; };
  CompressionConfig c;
  c.s_f = pick(sets.squeeze);
  c.per_layer.reserve(static_cast<std::size_t>(depth));
  for (int l = 0; l < depth; ++l) {
    const int k = pick(sets.kv);
    const int q = pick(sets.q);
    c.per_layer.push_back({q, k});
  }
  return c;
}

std::vector<std::array<int, 3>> standard_triplets() { return {{1, 1, 1}, {2, 1, 1}, {2, 2, 1}, {2, 2, 2}}; }

}  // namespace stochpool
