#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace proxygate {

// splitmix64; used to derive independent stream seeds from (seed, index) pairs
// so results do not depend on worker count or call order.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ull));
}

// xoshiro256** — small, fast, and identical on every platform. The standard
// <random> engines are deterministic too, but their distributions are not
// specified bit-for-bit, and metrics files must reproduce exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t z = seed;
        for (auto& si : s_) si = mix64(z += 0x9e3779b97f4a7c15ull);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n), n > 0
    std::uint64_t below(std::uint64_t n) {
        // multiply-shift with rejection to kill modulo bias
        std::uint64_t x = next_u64();
        __uint128_t m = __uint128_t(x) * n;
        std::uint64_t lo = std::uint64_t(m);
        if (lo < n) {
            std::uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                x = next_u64();
                m = __uint128_t(x) * n;
                lo = std::uint64_t(m);
            }
        }
        return std::uint64_t(m >> 64);
    }

    // standard normal via Box-Muller
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // draw index i with probability weights[i] / sum(weights)
    std::size_t weighted_pick(const std::vector<double>& weights, double total) {
        double u = uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return i;
        }
        return weights.size() - 1;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

// Fisher-Yates with our own engine; std::shuffle leaves the draw sequence
// implementation-defined.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = std::size_t(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace proxygate
