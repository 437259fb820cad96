// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include "tubejepa/random.hpp"

#include <cmath>
#include <sstream>

#include "tubejepa/errors.hpp"

namespace tubejepa {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(Rng& rng, std::size_t n) {
    if (n == 0) throw ContractError("uniform_index: empty range");
    const auto idx = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
    return idx < n ? idx : n - 1;
}

// Box-Muller on our own uniforms keeps streams identical across standard
// library implementations.
double normal(Rng& rng, double mean, double stddev) {
    constexpr double kTwoPi = 6.283185307179586476925;
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

std::vector<std::uint32_t> rng_state_words(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    std::istringstream is(os.str());
    std::vector<std::uint32_t> words;
    std::uint64_t v = 0;
    while (is >> v) {
        words.push_back(static_cast<std::uint32_t>(v));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    }
    return words;
}

Rng rng_from_state_words(const std::vector<std::uint32_t>& words) {
    if (words.size() % 2 != 0) throw FormatError("rng state has an odd word count", 0);
    std::ostringstream os;
    for (std::size_t i = 0; i < words.size(); i += 2) {
        const std::uint64_t v = static_cast<std::uint64_t>(words[i]) | (static_cast<std::uint64_t>(words[i + 1]) << 32);
        os << v << ' ';
    }
    Rng rng;
    std::istringstream is(os.str());
    is >> rng;
    if (is.fail()) throw FormatError("rng state could not be restored", 0);
    return rng;
}

}  // namespace tubejepa
