// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace tubejepa {

// Every stochastic step takes an explicit Rng; there is no global generator.
using Rng = std::mt19937_64;

Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

// Uniform in [0, 1) from the top 53 bits of one draw.
double uniform01(Rng& rng);

// Uniform integer in [0, n). n must be positive.
std::size_t uniform_index(Rng& rng, std::size_t n);

double normal(Rng& rng, double mean, double stddev);

// Full engine state as 32-bit words (each exactly representable as a double)
// so it can ride inside a tensor checkpoint record.
std::vector<std::uint32_t> rng_state_words(const Rng& rng);
Rng rng_from_state_words(const std::vector<std::uint32_t>& words);

}  // namespace tubejepa
