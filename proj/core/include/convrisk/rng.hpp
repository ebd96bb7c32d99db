#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace convrisk {

// xoshiro256** seeded through splitmix64.
//
// Every random draw in the project goes through this generator so that a
// seed reproduces the same stream on any platform and in any language that
// implements the same two published algorithms:
//   splitmix64: z += 0x9e3779b97f4a7c15; z = (z ^ z>>30) * 0xbf58476d1ce4e5b9;
//               z = (z ^ z>>27) * 0x94d049bb133111eb; return z ^ z>>31
//   state[0..3] = four successive splitmix64 outputs of the seed.
// Derived quantities:
//   uniform()     = (next() >> 11) * 2^-53            in [0, 1)
//   below(n)      = rejection sampling on next() % n  (unbiased)
//   normal()      = Box-Muller, cosine branch only, u1 = 1 - uniform()
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();
  std::uint64_t below(std::uint64_t bound);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    // Fisher-Yates, high index first.
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent stream for a named purpose under a user seed.
  static std::uint64_t derive(std::uint64_t seed, std::string_view tag);

 private:
  std::array<std::uint64_t, 4> state_{};
};

std::uint64_t splitmix64(std::uint64_t& state);

// 64-bit FNV-1a, used for fingerprints and stream tags.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace convrisk
