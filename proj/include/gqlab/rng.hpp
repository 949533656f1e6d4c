#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace gqlab {

/// Counter-based generator: output n is a keyed hash of n, so streams with
/// different keys never share state and one consumer's draw count cannot
/// shift another's sequence. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng() = default;
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(mix(mix(seed) ^ (stream * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + 0x9E3779B97F4A7C15ULL * ++counter_); }

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  std::uint64_t counter() const { return counter_; }

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Independent streams for one run.
enum class Stream : std::uint64_t { Environment = 1, Policy = 2, Sigma = 3, Init = 4 };

inline CounterRng make_stream(std::uint64_t seed, Stream stream) {
  return CounterRng(seed, static_cast<std::uint64_t>(stream));
}

}  // namespace gqlab
