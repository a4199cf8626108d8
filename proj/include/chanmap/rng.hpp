#pragma once

#include <algorithm>
#include <cstdint>
#include <random>

namespace chanmap {

// Seeded RNG handed around explicitly. All stochastic choices (init, shuffles,
// synthetic data) must draw from one of these so runs are reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    float uniform(float lo, float hi) {
        std::uniform_real_distribution<float> d(lo, hi);
        return d(engine_);
    }

    float normal(float mean, float stddev) {
        std::normal_distribution<float> d(mean, stddev);
        return d(engine_);
    }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        std::uniform_int_distribution<int> d(lo, hi);
        return d(engine_);
    }

    template <typename It>
    void shuffle(It first, It last) {
        std::shuffle(first, last, engine_);
    }

    std::mt19937_64& engine() { return engine_; }

    // Independent stream for a sub-task; offset decorrelates streams spawned
    // from the same parent seed.
    Rng fork(std::uint64_t offset) {
        return Rng(engine_() ^ (0x9e3779b97f4a7c15ull * (offset + 1)));
    }

private:
    std::mt19937_64 engine_;
};

} // namespace chanmap
