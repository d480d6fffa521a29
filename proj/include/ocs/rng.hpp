#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace ocs {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stream key for a cell (master seed plus any counters), independent of
// the order in which cells are visited.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> ids)
{
    std::uint64_t h = splitmix64(master);
    for (auto id : ids)
        h = splitmix64(h ^ splitmix64(id + 0x632be59bd9b4e019ULL));
    return h;
}

// SplitMix64 stream; satisfies UniformRandomBitGenerator.
class CounterRng {
public:
    using result_type = std::uint64_t;
    explicit CounterRng(std::uint64_t key) : state_(key) {}
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()()
    {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    double uniform() { return ((*this)() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

}  // namespace ocs
