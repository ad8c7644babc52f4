// Copyright 2026 The perprompt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <random>

namespace perprompt {

// Seeded generator with platform-stable draws. std::mt19937_64 has a
// standardized output sequence; the distributions here are implemented
// locally because the std:: ones are not portable across libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform01();
  // Uniform in [0, n); n must be positive.
  std::size_t uniform_index(std::size_t n);
  // Standard normal via Box-Muller.
  double normal();
  // Index drawn proportionally to non-negative weights with positive sum.
  std::size_t categorical(std::span<const double> weights);
  // k distinct indices from [0, n), in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  // Independent stream derived from this generator's seed and a name.
  // Does not advance this generator.
  Rng fork(std::string_view stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);
// Stable 64-bit mix of a seed with a label, for per-item salts.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

}  // namespace perprompt
