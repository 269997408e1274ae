#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace pvpl {

/// Seeded generator with platform-independent draws.
///
/// std::normal_distribution and friends are implementation-defined, so the
/// transforms here are written out to keep every seeded artifact identical
/// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Index in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(n) - 1)); }

  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

  /// Derive an independent child seed; lets sub-steps stay stable when
  /// unrelated draws are added elsewhere.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace pvpl
