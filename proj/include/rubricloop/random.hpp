// Copyright 2026 The rubricloop Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Explicit random streams. Every stochastic operation in the library takes a
// RandomStream by reference; independent consumers get independent streams
// derived from a seed and an integer path, never a shared global generator.

#ifndef RUBRICLOOP_RANDOM_HPP_
#define RUBRICLOOP_RANDOM_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rubricloop {

// SplitMix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t MixSeed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : seed_(seed), engine_(MixSeed(seed)) {}

  // Stream for the path (seed, ids...). Does not depend on any other stream's
  // consumption, so it is stable under reordering and concurrency.
  static RandomStream Derive(std::uint64_t seed,
                             std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = MixSeed(seed);
    for (std::uint64_t id : path) s = MixSeed(s ^ MixSeed(id + 0x632be59bd9b4e019ULL));
    return RandomStream(s);
  }

  // Child stream keyed by index, derived from this stream's seed only.
  RandomStream Substream(std::uint64_t index) const { return Derive(seed_, {index}); }

  // Child stream seeded by one draw from this stream.
  RandomStream Fork() { return RandomStream(NextU64()); }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t NextU64() { return engine_(); }

  // Uniform on [0, 1).
  double Uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double Normal(double mean, double stddev) {
    if (stddev == 0.0) {
      // Keep the draw count independent of the noise level.
      std::normal_distribution<double>(0.0, 1.0)(engine_);
      return mean;
    }
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  bool Bernoulli(double p) { return Uniform() < p; }

  // Uniform integer on [0, n).
  std::size_t Index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  double Gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace rubricloop

#endif  // RUBRICLOOP_RANDOM_HPP_
