#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedclass::rng {

// splitmix64 finalizer; mixes a seed with a sequence of stream tags so that
// independent consumers (partition, init, batch order, memory selection)
// never share a stream.
inline std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = mix(seed);
    for (std::uint64_t t : tags) s = mix(s ^ t);
    return s;
}

inline std::mt19937_64 engine(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    return std::mt19937_64(derive(seed, tags));
}

// Stream tags. Fixed constants so seed derivation is stable across builds.
inline constexpr std::uint64_t kTagData = 0x64617461ULL;       // "data"
inline constexpr std::uint64_t kTagPartition = 0x70617274ULL;  // "part"
inline constexpr std::uint64_t kTagInit = 0x696e6974ULL;       // "init"
inline constexpr std::uint64_t kTagBatch = 0x62617463ULL;      // "batc"
inline constexpr std::uint64_t kTagMemory = 0x6d656d6fULL;     // "memo"
inline constexpr std::uint64_t kTagSchedule = 0x73636564ULL;   // "sced"

}  // namespace fedclass::rng
