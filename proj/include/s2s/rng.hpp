#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace s2s {

/// Seeded random stream. Wraps std::mt19937_64 but maps draws to ranges by
/// hand so that streams are reproducible across standard library
/// implementations (uniform_*_distribution is not pinned by the standard).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Derive an independent stream, e.g. per (seed, epoch).
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        // splitmix64 of the pair; avoids correlated mt19937 seedings
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        // multiply-shift rejection-free mapping; bias is negligible for n << 2^64
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    /// In-place Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace s2s
