/*
 * Copyright (c) 2026 the dasheng-cpp authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <initializer_list>

namespace dasheng {

// Deterministic, platform-independent generator (xoshiro256** seeded via
// splitmix64). Independent streams are derived by hashing a seed together
// with an explicit path, so concurrent consumers never share state.
class Rng {
  public:
    static constexpr const char* kAlgorithm = "xoshiro256ss-splitmix64-v1";

    explicit Rng(std::uint64_t seed);

    // Independent stream for (seed, path...). Equal inputs give equal streams.
    static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double next_double();

    // Uniform integer in [0, n), n >= 1. Rejection sampling, no modulo bias.
    std::uint64_t next_below(std::uint64_t n);

    // Uniform in [lo, hi).
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller with a cached spare.
    double normal();

    // Normal(0, std) with |z| <= 2 std (resampled outside).
    double truncated_normal(double stddev);

  private:
    std::uint64_t state_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace dasheng
