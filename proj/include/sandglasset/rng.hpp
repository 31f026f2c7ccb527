// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace sandglasset {

struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
  bool operator==(const RngState&) const = default;
};

// Counter-based generator: output i is a SplitMix64 hash of (seed, i), so the
// stream depends on nothing but the state. Distributions are implemented here
// rather than via <random> because the standard ones are not portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : state_{seed, counter} {}
  explicit Rng(RngState state) : state_(state) {}

  RngState state() const { return state_; }

  std::uint64_t next_u64() {
    std::uint64_t z = state_.seed * 0xD1B54A32D192ED03ull +
                      (++state_.counter) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n).
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Derives an independent stream, e.g. one per data item or per epoch.
  Rng fork(std::uint64_t tag) {
    return Rng(next_u64() ^ (tag * 0xA24BAED4963EE407ull));
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i)
      std::swap(items[i - 1], items[below(i)]);
  }

 private:
  RngState state_;
};

}  // namespace sandglasset
