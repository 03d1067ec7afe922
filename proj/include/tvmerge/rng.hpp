#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace tvmerge::rng {

// Derives an independent stream seed from a root seed and a purpose label
// (e.g. "init", "shuffle", "censor"), optionally indexed. Changing one
// stage's draws never perturbs another stage.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                          std::uint64_t index = 0);

// Deterministic random stream. Uses mt19937_64 (bit-exact per the C++
// standard) with explicit value conversions, since the standard library
// distributions are implementation-defined.
class Stream {
 public:
  explicit Stream(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform double in [0, 1) with 53 bits of randomness.
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; the spare value is cached.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tvmerge::rng
