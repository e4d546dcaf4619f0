#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace voxelseg {

// Portable, seeded random stream. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; the distributions below are implemented
// here because the standard library ones are not portable across vendors.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64+splitmix64";

  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  // Independent substream, a pure function of (seed, stream_id).
  RngStream split(std::uint64_t stream_id) const;

  std::uint64_t next_u64() { return engine_(); }
  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_index(std::uint64_t bound);
  // Uniform real in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace voxelseg
