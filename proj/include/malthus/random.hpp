#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace malthus {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Combines two 64-bit keys into a new one.
inline constexpr std::uint64_t mix_keys(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

/// Counter-based stream: the k-th draw is a pure function of (key, k), so any
/// stream can be re-created from its key alone.
class Stream {
public:
    constexpr explicit Stream(std::uint64_t key = 0) : key_(key) {}

    constexpr std::uint64_t key() const { return key_; }
    constexpr std::uint64_t counter() const { return ctr_; }

    constexpr std::uint64_t next_u64() { return splitmix64(key_ ^ splitmix64(++ctr_)); }

    /// Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double exponential(double rate) {
        if (!(rate > 0.0)) return std::numeric_limits<double>::infinity();
        return -std::log(uniform()) / rate;
    }

    /// Independent stream for child `index`.
    constexpr Stream child(std::uint64_t index) const { return Stream(mix_keys(key_, index)); }

private:
    std::uint64_t key_;
    std::uint64_t ctr_ = 0;
};

} // namespace malthus
