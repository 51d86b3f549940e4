#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "ordex/common.hpp"

namespace ordex::util {

// Deterministic RNG wrapper. All draws are built directly on the mt19937_64
// stream so results do not depend on the standard library's distribution
// implementations.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n), rejection-sampled to remove modulo bias.
    uint64_t below(uint64_t n) {
        if (n == 0) throw ContractViolation("Rng::below called with n = 0");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    size_t index(size_t n) { return static_cast<size_t>(below(n)); }

    bool bernoulli(double p) { return uniform01() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Stable sub-seed derivation so one run seed fans out into independent,
    // named streams (data split, exploration, init, sampling).
    static uint64_t derive(uint64_t base, std::string_view name) {
        uint64_t h = fnv1a64(name);
        h = fnv1a64(&base, sizeof(base), h);
        return h;
    }

    Rng derived(std::string_view name) const { return Rng(derive(seed_, name)); }

private:
    uint64_t seed_;
    std::mt19937_64 engine_;
};

} // namespace ordex::util
