#pragma once

#include <cstdint>
#include <random>

namespace rydfock {

// SplitMix64 finalizer, used to decorrelate substream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Deterministic random stream. The engine is std::mt19937_64, whose output
/// sequence is fixed by the standard; the variate transforms below are
/// hand-written so draws are identical across standard-library vendors.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    /// Independent stream for (master, a, b), e.g. (seed, scan point, trajectory).
    static RngStream substream(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
        return RngStream(splitmix64(splitmix64(master ^ splitmix64(a + 1)) ^ splitmix64(b + 0x51ED27ULL)));
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal();

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Poisson variate by sequential inversion. Intended for mean < ~700.
    std::uint64_t poisson(double mean);

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace rydfock
