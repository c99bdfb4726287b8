// Thread-local multiply-accumulate instrumentation.
//
// matmul and conv1d report their MACs here when a counter is installed on
// the current thread; the active category is set by MacScope.
#pragma once

#include <array>
#include <cstdint>

namespace stochpool {

enum class MacCategory : int { FeatureExtractor = 0, AttnProjection, AttnScores, Ffn, Upsample, Other };

inline constexpr int kMacCategories = 6;

struct MacCounter {
  std::array<std::uint64_t, kMacCategories> macs{};

  std::uint64_t operator[](MacCategory c) const { return macs[static_cast<int>(c)]; }
  std::uint64_t total() const {
    std::uint64_t sum = 0;
    for (auto m : macs) sum += m;
    return sum;
  }
};

namespace detail {
inline thread_local MacCounter* active_counter = nullptr;
inline thread_local MacCategory active_category = MacCategory::Other;
}  // namespace detail

inline void count_macs(std::uint64_t n) {
  if (detail::active_counter != nullptr) {
    detail::active_counter->macs[static_cast<int>(detail::active_category)] += n;
  }
}

/// Installs `counter` for the lifetime of the object.
class MacRecording {
 public:
  explicit MacRecording(MacCounter& counter) : previous_(detail::active_counter) {
    detail::active_counter = &counter;
  }
  ~MacRecording() { detail::active_counter = previous_; }
  MacRecording(const MacRecording&) = delete;
  MacRecording& operator=(const MacRecording&) = delete;

 private:
  MacCounter* previous_;
};

class MacScope {
 public:
  explicit MacScope(MacCategory c) : previous_(detail::active_category) { detail::active_category = c; }
  ~MacScope() { detail::active_category = previous_; }
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;

 private:
  MacCategory previous_;
};

}  // namespace stochpool
