#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace clvit {

// Seeded RNG with cheap deterministic substreams (fork). All randomness in
// the project flows through one of these so runs are reproducible from the
// seeds recorded in a manifest.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_base_(seed) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(engine_);
    }

    // Rejection-sampled normal clipped at +/- 2 stddev.
    double trunc_normal(double stddev) {
        for (;;) {
            const double v = normal(0.0, stddev);
            if (v >= -2.0 * stddev && v <= 2.0 * stddev) return v;
        }
    }

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }

    std::int64_t integer(std::int64_t lo, std::int64_t hi) {  // inclusive bounds
        std::uniform_int_distribution<std::int64_t> d(lo, hi);
        return d(engine_);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), engine_);
    }

    // Independent substream derived from the base seed and a stream id.
    Rng fork(std::uint64_t stream) const { return Rng(mix(seed_base_, stream)); }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        // splitmix64 over the combined words
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
    std::uint64_t seed_base_;
};

}  // namespace clvit
