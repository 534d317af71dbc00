#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace moldiff {

/// Seeded generator whose draws do not depend on the standard library's
/// distribution implementations, so runs repeat across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);
  /// Standard normal (Box-Muller).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent child stream.
  Rng split();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace moldiff
