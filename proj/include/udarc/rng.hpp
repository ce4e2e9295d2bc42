#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace udarc {

// Deterministic random source. All sampling is built on the raw mt19937_64
// stream with hand-rolled mappings, because the standard library distributions
// are not bit-stable across implementations. State round-trips through a
// string so checkpoints can resume the exact stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n);

  // Standard normal via the Box-Muller transform. Consumes two uniforms and
  // keeps no cached value, so the engine state alone captures the stream.
  double normal(double mean = 0.0, double stddev = 1.0);

  // Normal(0, stddev) resampled until within two standard deviations.
  double truncated_normal(double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }
  }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace udarc
