#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace voxseed {

using Rng = std::mt19937_64;

// Independent stream for a (seed, tag...) tuple. Used wherever a sub-computation
// needs its own reproducible randomness regardless of call order.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * tags.size());
    words.push_back(static_cast<std::uint32_t>(seed));
    words.push_back(static_cast<std::uint32_t>(seed >> 32));
    for (auto t : tags) {
        words.push_back(static_cast<std::uint32_t>(t));
        words.push_back(static_cast<std::uint32_t>(t >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

// Draws a fresh 64-bit seed from a parent stream.
inline std::uint64_t split_seed(Rng& rng) { return rng(); }

}  // namespace voxseed
