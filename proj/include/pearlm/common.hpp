#pragma once

// Shared vocabulary types for the pearlm library: strong ids, error
// categories and a couple of deterministic hashing/seeding helpers.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pearlm {

// Dense 0-based identifier tagged with the namespace it lives in.
template <typename Tag>
struct StrongId {
    std::uint32_t value{0};

    constexpr StrongId() = default;
    constexpr explicit StrongId(std::uint32_t v) : value(v) {}
    constexpr explicit StrongId(std::size_t v) : value(static_cast<std::uint32_t>(v)) {}
    constexpr explicit StrongId(int v) : value(static_cast<std::uint32_t>(v)) {}

    constexpr std::size_t index() const { return value; }
    friend constexpr auto operator<=>(StrongId, StrongId) = default;
};

struct EntityTag {};
struct RelationTag {};
struct TokenTag {};

using EntityId = StrongId<EntityTag>;
using RelationId = StrongId<RelationTag>;
using TokenId = StrongId<TokenTag>;

// Error categories; the CLI maps them onto exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input that violates a structural contract (unknown entity, malformed path).
struct StructuralError : DataError {
    using DataError::DataError;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a, used for manifests and vocabulary fingerprints.
constexpr std::uint64_t fnv1a(std::string_view data,
                              std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// SplitMix64 finalizer; derives independent sub-seeds from (seed, key).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (key + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace pearlm

template <typename Tag>
struct std::hash<pearlm::StrongId<Tag>> {
    std::size_t operator()(pearlm::StrongId<Tag> id) const noexcept {
        return std::hash<std::uint32_t>{}(id.value);
    }
};
