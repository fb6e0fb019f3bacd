#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fsbo {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept
{
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed for a sub-stream identified by a label and an index.
///
/// The rule is `mix64(mix64(base ^ fnv1a(label)) + index)`; benchmark cells use
/// it with label = method name and index = split * repeats + repeat.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index = 0) noexcept
{
    return mix64(mix64(base ^ fnv1a(label)) + index);
}

} // namespace fsbo
