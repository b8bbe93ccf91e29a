#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>

namespace vibefm {

/// 64-bit FNV-1a over bytes.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL)
{
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

constexpr std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Named sub-stream of a top-level seed. Every consumer of randomness takes
/// its seed from here so that adding consumers never shifts existing streams.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0)
{
    return splitmix64(splitmix64(seed ^ fnv1a64(stream)) + index);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal(double mean = 0.0, double stddev = 1.0) { return std::normal_distribution<double>(mean, stddev)(engine_); }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
    double exponential(double rate) { return std::exponential_distribution<double>(rate)(engine_); }

    /// Inclusive range.
    long uniform_int(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(engine_); }

    double beta(double a, double b)
    {
        const double x = std::gamma_distribution<double>(a, 1.0)(engine_);
        const double y = std::gamma_distribution<double>(b, 1.0)(engine_);
        return (x + y) > 0.0 ? x / (x + y) : 0.5;
    }

    template <typename It>
    void shuffle(It first, It last)
    {
        std::shuffle(first, last, engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace vibefm
