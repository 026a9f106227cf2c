#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace cml {

/// Deterministic random source.
///
/// Engine: std::mt19937_64, which the C++ standard specifies bit-exactly, so
/// equal seeds give equal streams on every platform. Distribution transforms
/// are implemented here (not via std::*_distribution, whose output is
/// implementation-defined):
///   - uniform():  53-bit mantissa scaling, [0,1)
///   - normal():   Box-Muller on two uniform draws (second value discarded)
///   - uniform_index(n): floor(uniform()*n)
///
/// Sub-streams: substream(id) derives an independent generator by splitmix64
/// mixing of (seed, id). Each consumer (weights, sampling, dropout,
/// augmentation, ...) owns its own stream, so adding a consumer never shifts
/// the draws of another.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1), 53 significant bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller. Uses two u64 draws per value.
    double normal() {
        double u1 = 1.0 - uniform(); // (0, 1], keeps log() finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    }

    /// Uniform index in [0, n). n must be > 0.
    std::size_t uniform_index(std::size_t n) {
        std::size_t i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return i < n ? i : n - 1;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = uniform_index(i + 1);
            std::swap(v[i], v[j]);
        }
    }

    /// Independent generator for stream `id` derived from this seed.
    Rng substream(std::uint64_t id) const {
        return Rng(mix(seed_ + 0x9E3779B97F4A7C15ULL * (id + 1)));
    }

private:
    // splitmix64 finalizer.
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

// Stream ids, one per randomness consumer.
namespace streams {
inline constexpr std::uint64_t weights = 1;
inline constexpr std::uint64_t sampling = 2;
inline constexpr std::uint64_t dropout = 3;
inline constexpr std::uint64_t augmentation = 4;
inline constexpr std::uint64_t synthetic = 5;
inline constexpr std::uint64_t split = 6;
} // namespace streams

} // namespace cml
