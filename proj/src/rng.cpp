#include "stochpool/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace stochpool {

std::uint64_t Rng::mix(std::uint64_t z) {
  // splitmix64 finaliser
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng Rng::fork(std::string_view purpose) const {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return Rng(mix(key_ ^ mix(h)), 0);
}

Rng Rng::fork(std::uint64_t index) const { return Rng(mix(key_ + mix(index ^ 0xD1B54A32D192ED03ULL)), 0); }

std::uint64_t Rng::next_u64() {
  const std::uint64_t c = counter_++;
  return mix(key_ ^ mix(c));
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

double Rng::uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace stochpool
